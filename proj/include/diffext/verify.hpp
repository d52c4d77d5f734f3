#pragma once
/// Property-check engine: seeded, tolerance-carrying checks on a map, run
/// individually or as a suite that always executes every check.

#include "diffext/map.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <thread>

namespace diffext {

enum class CheckKind { agreement, identity_outside, roundtrip, jacobian_fd, orientation, seam, support_exact, refinement };

inline const char* to_string(CheckKind k) {
  switch (k) {
    case CheckKind::agreement: return "agreement";
    case CheckKind::identity_outside: return "identity_outside";
    case CheckKind::roundtrip: return "roundtrip";
    case CheckKind::jacobian_fd: return "jacobian_fd";
    case CheckKind::orientation: return "orientation";
    case CheckKind::seam: return "seam";
    case CheckKind::support_exact: return "support_exact";
    case CheckKind::refinement: return "refinement";
  }
  return "unknown";
}

inline std::optional<CheckKind> check_kind_from_string(const std::string& s) {
  for (CheckKind k : {CheckKind::agreement, CheckKind::identity_outside, CheckKind::roundtrip, CheckKind::jacobian_fd,
                      CheckKind::orientation, CheckKind::seam, CheckKind::support_exact, CheckKind::refinement})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

/// Tolerance used for equalities that hold structurally (no approximation).
inline double exact_tol(double scale = 1.0) { return 1e-13 * std::max(1.0, scale); }

/// One check. Deviation measures per kind:
///  agreement, refinement   |f(x) - g(x)|
///  identity_outside        |f(x) - x|
///  support_exact           max(|f(x) - x|, |Df(x) - I|)
///  seam                    max(|f(x) - g(x)|, |Df(x) - Dg(x)|)
///  roundtrip               |f^-1(f(x)) - x|
///  jacobian_fd             |Df - D_fd f| / max(1, |Df|), central differences
///                          with step fd_step * scale
///  orientation             min det Df; passes when > 0 (tol unused)
/// The worst value is the largest deviation (smallest determinant).
struct CheckSpec {
  CheckKind kind = CheckKind::agreement;
  Region region = Region::ball(zeros(2), 1.0);
  int samples = 1000;
  std::uint64_t seed = 1;
  double tol = 1e-9;
  double fd_step = 1e-6;
  double scale = 1.0;          // local length scale for the finite-difference step
  bool low_discrepancy = false;  // Halton points instead of the seeded stream
  std::string name;

  void validate() const {
    if (samples < 1) throw Error(ErrorKind::parameter, "check: samples must be >= 1");
    if (!(tol > 0.0)) throw Error(ErrorKind::parameter, "check: tol must be > 0");
    if (kind == CheckKind::jacobian_fd && !(fd_step > 0.0 && scale > 0.0))
      throw Error(ErrorKind::parameter, "check: fd_step and scale must be > 0");
  }

  bool needs_reference() const {
    return kind == CheckKind::agreement || kind == CheckKind::seam || kind == CheckKind::refinement;
  }

  std::string label() const { return name.empty() ? std::string(to_string(kind)) : name; }

  Json to_json() const {
    Json j{{"name", label()}, {"kind", to_string(kind)}, {"region", region.to_json()}, {"samples", samples},
           {"seed", seed},    {"tol", tol}};
    if (kind == CheckKind::jacobian_fd) {
      j["fd_step"] = fd_step;
      j["scale"] = scale;
    }
    j["low_discrepancy"] = low_discrepancy;
    return j;
  }
};

struct CheckResult {
  CheckSpec spec;
  bool passed = false;
  double worst_value = 0.0;
  Vec worst_point;
  int samples = 0;
  std::string error;  // set when the check could not run to completion
  double wall_time = 0.0;

  Json to_json() const {
    Json j = spec.to_json();
    j["passed"] = passed;
    j["worst_value"] = std::isfinite(worst_value) ? Json(worst_value) : Json(std::signbit(worst_value) ? "-inf" : "inf");
    j["worst_point"] = worst_point.size() ? diffext::to_json(worst_point) : Json(nullptr);
    j["evaluated"] = samples;
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

namespace detail {

inline Mat central_difference_jacobian(const SmoothMap& f, const Vec& x, double step) {
  const int n = f.dim();
  Mat J(n, n);
  for (int k = 0; k < n; ++k) {
    Vec e = Vec::Zero(n);
    e(k) = step;
    J.col(k) = (f(Vec(x + e)) - f(Vec(x - e))) / (2.0 * step);
  }
  return J;
}

inline double deviation(const CheckSpec& spec, const SmoothMap& f, const SmoothMap* g, const Vec& x) {
  const auto guard = [](double v) { return std::isnan(v) ? std::numeric_limits<double>::infinity() : v; };
  switch (spec.kind) {
    case CheckKind::agreement:
    case CheckKind::refinement: return guard((f(x) - (*g)(x)).norm());
    case CheckKind::identity_outside: return guard((f(x) - x).norm());
    case CheckKind::support_exact: {
      const auto [y, J] = f.eval_jac(x);
      return guard(std::max((y - x).norm(), (J - identity(f.dim())).norm()));
    }
    case CheckKind::seam: {
      const auto [y, J] = f.eval_jac(x);
      const auto [z, K] = g->eval_jac(x);
      return guard(std::max((y - z).norm(), (J - K).norm()));
    }
    case CheckKind::roundtrip: {
      const auto back = f.inverse(f(x));
      return back ? guard((*back - x).norm()) : std::numeric_limits<double>::infinity();
    }
    case CheckKind::jacobian_fd: {
      const Mat A = f.jacobian(x);
      return guard((A - central_difference_jacobian(f, x, spec.fd_step * spec.scale)).norm() / std::max(1.0, A.norm()));
    }
    case CheckKind::orientation: {
      const double d = f.jacobian(x).determinant();
      return std::isnan(d) ? -std::numeric_limits<double>::infinity() : d;
    }
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Runs one check on samples of the stream (spec.seed, stream). Throws on
/// invalid specs, a missing reference and sampler starvation; evaluation
/// errors inside the map propagate as well.
inline CheckResult run_check(const CheckSpec& spec, const SmoothMap& subject, const std::optional<SmoothMap>& reference = {},
                             std::uint64_t stream = 0) {
  spec.validate();
  if (spec.needs_reference() && !reference)
    throw Error(ErrorKind::parameter, std::string("check ") + to_string(spec.kind) + ": a reference map is required");
  if (spec.region.dim() != subject.dim()) throw Error(ErrorKind::parameter, "check: region dimension does not match the map");
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult res;
  res.spec = spec;
  const bool minimize = spec.kind == CheckKind::orientation;
  res.worst_value = minimize ? std::numeric_limits<double>::infinity() : 0.0;
  const SmoothMap* g = reference ? &*reference : nullptr;
  for (const Vec& x : sample_region(spec.region, spec.samples, spec.seed, stream, spec.low_discrepancy)) {
    const double v = detail::deviation(spec, subject, g, x);
    ++res.samples;
    const bool worse = minimize ? v < res.worst_value : v > res.worst_value;
    if (worse || res.worst_point.size() == 0) {
      res.worst_value = v;
      res.worst_point = x;
    }
  }
  res.passed = minimize ? res.worst_value > 0.0 : res.worst_value <= spec.tol;
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// A check with its optional reference map; `subject` replaces the suite
/// subject for this check (intermediate stages of a construction).
struct SuiteEntry {
  CheckSpec spec;
  std::optional<SmoothMap> reference;
  std::optional<SmoothMap> subject;
};

struct VerificationReport {
  std::vector<CheckResult> checks;
  Json environment = Json::object();
  bool verdict = true;
  double wall_time = 0.0;
  int threads = 1;

  /// Run-dependent fields (timings, thread count), kept apart from the
  /// deterministic body.
  Json header() const {
    Json times = Json::array();
    for (const auto& c : checks) times.push_back(c.wall_time);
    return Json{{"wall_time", wall_time}, {"check_wall_times", std::move(times)}, {"threads", threads}};
  }

  Json body() const {
    Json cs = Json::array();
    int failed = 0;
    for (const auto& c : checks) {
      cs.push_back(c.to_json());
      failed += c.passed ? 0 : 1;
    }
    return Json{{"environment", environment},
                {"checks", std::move(cs)},
                {"summary", Json{{"total", checks.size()}, {"failed", failed}}},
                {"verdict", verdict ? "pass" : "fail"}};
  }

  Json to_json() const {
    Json j{{"header", header()}};
    const Json b = body();
    for (const auto& [k, v] : b.items()) j[k] = v;
    return j;
  }
};

/// Worker count from DIFFEXT_THREADS (default 1, clamped to [1, 64]).
inline int configured_threads() {
  const char* env = std::getenv("DIFFEXT_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0') return 1;
  return static_cast<int>(std::clamp(v, 1L, 64L));
}

/// Runs every check; a check that throws is recorded as a failure with its
/// message. Check i samples the stream (seed, i). Checks are distributed over
/// `threads` workers (0: configured) and merged by index, so the body of the
/// report does not depend on the worker count.
inline VerificationReport run_suite(const SmoothMap& subject, const std::vector<SuiteEntry>& suite, Json environment = Json::object(),
                                    int threads = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  VerificationReport rep;
  rep.environment = std::move(environment);
  rep.threads = threads > 0 ? threads : configured_threads();
  rep.checks.resize(suite.size());
  const auto run_one = [&](std::size_t i) {
    const auto c0 = std::chrono::steady_clock::now();
    try {
      rep.checks[i] = run_check(suite[i].spec, suite[i].subject ? *suite[i].subject : subject, suite[i].reference, i);
    } catch (const std::exception& e) {
      CheckResult r;
      r.spec = suite[i].spec;
      r.passed = false;
      r.worst_value = std::numeric_limits<double>::infinity();
      r.error = e.what();
      r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
      rep.checks[i] = std::move(r);
    }
  };
  const int workers = std::min<int>(rep.threads, static_cast<int>(suite.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < suite.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < suite.size(); i = next++) run_one(i);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& c : rep.checks) rep.verdict = rep.verdict && c.passed;
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace diffext
