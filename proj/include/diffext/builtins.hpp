#pragma once
/// Built-in map families: the only user-supplied diffeomorphism inputs.
/// Each family has an analytic Jacobian and serializes back to the same
/// parameter record it was built from.

#include "diffext/flows.hpp"

#include <array>
#include <sstream>

namespace diffext {

enum class Family { identity, affine, rotation, shear, twist, radial, poly_perturb, damped_translate };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::identity: return "identity";
    case Family::affine: return "affine";
    case Family::rotation: return "rotation";
    case Family::shear: return "shear";
    case Family::twist: return "twist";
    case Family::radial: return "radial";
    case Family::poly_perturb: return "poly_perturb";
    case Family::damped_translate: return "damped_translate";
  }
  return "unknown";
}

inline std::optional<Family> family_from_string(const std::string& s) {
  for (Family f : {Family::identity, Family::affine, Family::rotation, Family::shear, Family::twist, Family::radial,
                   Family::poly_perturb, Family::damped_translate})
    if (s == to_string(f)) return f;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// parameter access

namespace params {

inline Error bad(const std::string& key, const std::string& what) { return Error(ErrorKind::parameter, key + ": " + what); }

inline double number(const Json& j, const std::string& key, std::optional<double> fallback = std::nullopt) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw bad(key, "missing");
  }
  if (!j.at(key).is_number()) throw bad(key, "expected a number");
  const double v = j.at(key).get<double>();
  if (!std::isfinite(v)) throw bad(key, "must be finite");
  return v;
}

inline int integer(const Json& j, const std::string& key, std::optional<int> fallback = std::nullopt) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw bad(key, "missing");
  }
  if (!j.at(key).is_number_integer()) throw bad(key, "expected an integer");
  return j.at(key).get<int>();
}

inline Vec vector(const Json& v, const std::string& key) {
  if (!v.is_array() || v.empty() || v.size() > static_cast<std::size_t>(kMaxDim)) throw bad(key, "expected an array of 1..8 numbers");
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw bad(key, "expected numbers");
    out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
  }
  if (!out.allFinite()) throw bad(key, "must be finite");
  return out;
}

inline Vec vector(const Json& j, const std::string& key, int n, std::optional<Vec> fallback) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw bad(key, "missing");
  }
  Vec v = vector(j.at(key), key);
  if (n > 0 && v.size() != n) throw bad(key, "expected " + std::to_string(n) + " entries");
  return v;
}

inline Mat matrix(const Json& j, const std::string& key) {
  if (!j.is_array() || j.empty() || j.size() > static_cast<std::size_t>(kMaxDim)) throw bad(key, "expected a square array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  Mat out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec row = vector(j[static_cast<std::size_t>(i)], key);
    if (row.size() != n) throw bad(key, "matrix must be square");
    out.row(i) = row.transpose();
  }
  return out;
}

inline int dimension(const Json& j, std::optional<int> fallback = std::nullopt) {
  const int n = integer(j, "dim", fallback);
  if (n < 2 || n > kMaxDim) throw bad("dim", "must be in 2..8");
  return n;
}

inline std::array<int, 2> plane(const Json& j, int n, const std::string& key = "plane") {
  if (!j.contains(key)) return {0, 1};
  const Json& p = j.at(key);
  if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer()) throw bad(key, "expected two axis indices");
  const int a = p[0].get<int>(), b = p[1].get<int>();
  if (a < 0 || b < 0 || a >= n || b >= n || a == b) throw bad(key, "axes must be distinct and in range");
  return {a, b};
}

}  // namespace params

// ---------------------------------------------------------------------------
// twist

/// x -> c + R_{ij}(theta(|x - c|)) (x - c), theta(r) = theta0 (1 - s((r - r0)/(r1 - r0))):
/// a rotation by theta0 near the centre that unwinds to the identity at r1.
class TwistMap final : public MapNode {
 public:
  TwistMap(Vec center, double angle, double r0, double r1, std::array<int, 2> plane)
      : MapNode(static_cast<int>(center.size()), Region::all(static_cast<int>(center.size())), Orientation::preserving),
        c_(std::move(center)),
        theta0_(angle),
        r0_(r0),
        r1_(r1),
        i_(plane[0]),
        j_(plane[1]) {
    if (!(0.0 <= r0_ && r0_ < r1_)) throw Error(ErrorKind::parameter, "twist: need 0 <= inner < outer");
  }

  double theta(double r) const { return theta0_ * (1.0 - smooth_step((r - r0_) / (r1_ - r0_))); }
  double theta_d(double r) const { return -theta0_ * smooth_step_derivative((r - r0_) / (r1_ - r0_)) / (r1_ - r0_); }

  Vec eval(const Vec& x) const override {
    const Vec u = x - c_;
    const double r = u.norm();
    if (r >= r1_) return x;
    return c_ + rotate(u, theta(r));
  }

  std::pair<Vec, Mat> eval_jac(const Vec& x) const override {
    const Vec u = x - c_;
    const double r = u.norm();
    if (r >= r1_) return {x, identity(dim())};
    const double t = theta(r), ct = std::cos(t), st = std::sin(t);
    Mat J = identity(dim());
    J(i_, i_) = ct;
    J(i_, j_) = -st;
    J(j_, i_) = st;
    J(j_, j_) = ct;
    const double dt = theta_d(r);
    if (dt != 0.0 && r > 0.0) {
      Vec dv = Vec::Zero(dim());
      dv(i_) = -st * u(i_) - ct * u(j_);
      dv(j_) = ct * u(i_) - st * u(j_);
      J += (dt / r) * (dv * u.transpose());
    }
    return {c_ + rotate(u, t), J};
  }

  bool structural_inverse() const override { return true; }
  std::optional<Vec> inverse(const Vec& y) const override {
    const Vec v = y - c_;
    const double r = v.norm();
    if (r >= r1_) return y;
    return c_ + rotate(v, -theta(r));
  }

  Json to_json() const override {
    return Json{{"family", "twist"}, {"dim", dim()},          {"angle", theta0_},
                {"inner", r0_},      {"outer", r1_},          {"center", diffext::to_json(c_)},
                {"plane", Json::array({i_, j_})}};
  }

 private:
  Vec rotate(const Vec& u, double t) const {
    Vec v = u;
    const double ct = std::cos(t), st = std::sin(t);
    v(i_) = ct * u(i_) - st * u(j_);
    v(j_) = st * u(i_) + ct * u(j_);
    return v;
  }

  Vec c_;
  double theta0_, r0_, r1_;
  int i_, j_;
};

// ---------------------------------------------------------------------------
// polynomial perturbation

/// x -> x + k (x_s - c_s)^2 e_t on a declared ball domain. Inverted by Newton.
class PolyPerturbMap final : public MapNode {
 public:
  PolyPerturbMap(Vec center, double coefficient, int source, int target, double domain_radius)
      : MapNode(static_cast<int>(center.size()), Region::ball(center, domain_radius), Orientation::preserving),
        c_(std::move(center)),
        k_(coefficient),
        s_(source),
        t_(target),
        R_(domain_radius) {}

  Vec eval(const Vec& x) const override {
    Vec y = x;
    const double u = x(s_) - c_(s_);
    y(t_) += k_ * u * u;
    return y;
  }
  std::pair<Vec, Mat> eval_jac(const Vec& x) const override {
    Mat J = identity(dim());
    J(t_, s_) += 2.0 * k_ * (x(s_) - c_(s_));
    return {eval(x), J};
  }
  Json to_json() const override {
    return Json{{"family", "poly_perturb"}, {"dim", dim()},    {"coefficient", k_},
                {"source", s_},             {"target", t_},    {"center", diffext::to_json(c_)},
                {"domain_radius", R_}};
  }

 private:
  Vec c_;
  double k_;
  int s_, t_;
  double R_;
};

/// Minimum det J of `f` over a lattice of its (bounded) domain.
inline std::pair<double, Vec> min_det_on_grid(const SmoothMap& f, int per_axis) {
  const auto bb = f.domain().bounds();
  if (!bb) throw Error(ErrorKind::parameter, "min_det_on_grid: unbounded domain");
  const int n = f.dim();
  double worst = std::numeric_limits<double>::infinity();
  Vec where = bb->lo;
  long total = 1;
  for (int k = 0; k < n; ++k) total *= per_axis;
  for (long c = 0; c < total; ++c) {
    Vec x(n);
    long rem = c;
    for (int k = 0; k < n; ++k) {
      x(k) = bb->lo(k) + (bb->hi(k) - bb->lo(k)) * static_cast<double>(rem % per_axis) / (per_axis - 1);
      rem /= per_axis;
    }
    if (!f.domain().contains(x)) continue;
    const double d = f.jacobian(x).determinant();
    if (d < worst) {
      worst = d;
      where = x;
    }
  }
  return {worst, where};
}

// ---------------------------------------------------------------------------
// factory

inline SmoothMap rotation_map(int n, double angle, const Vec& center, std::array<int, 2> plane = {0, 1}) {
  Mat A = identity(n);
  A(plane[0], plane[0]) = std::cos(angle);
  A(plane[0], plane[1]) = -std::sin(angle);
  A(plane[1], plane[0]) = std::sin(angle);
  A(plane[1], plane[1]) = std::cos(angle);
  Json spec{{"family", "rotation"}, {"dim", n}, {"angle", angle}, {"center", to_json(center)}, {"plane", Json::array({plane[0], plane[1]})}};
  return SmoothMap(std::make_shared<AffineMap>(A, center, zeros(n), std::move(spec)));
}

inline SmoothMap shear_map(int n, double amount, const Vec& center, std::array<int, 2> plane = {0, 1}) {
  Mat A = identity(n);
  A(plane[0], plane[1]) = amount;
  Json spec{{"family", "shear"}, {"dim", n}, {"amount", amount}, {"center", to_json(center)}, {"plane", Json::array({plane[0], plane[1]})}};
  return SmoothMap(std::make_shared<AffineMap>(A, center, zeros(n), std::move(spec)));
}

inline SmoothMap twist_map(int n, double angle, double inner, double outer, const Vec& center, std::array<int, 2> plane = {0, 1}) {
  if (center.size() != n) throw Error(ErrorKind::parameter, "twist: center dimension mismatch");
  return SmoothMap(std::make_shared<TwistMap>(center, angle, inner, outer, plane));
}

inline SmoothMap poly_perturb_map(int n, double coefficient, int source, int target, const Vec& center, double domain_radius) {
  if (source < 0 || target < 0 || source >= n || target >= n) throw Error(ErrorKind::parameter, "poly_perturb: axis out of range");
  if (!(domain_radius > 0.0)) throw Error(ErrorKind::parameter, "poly_perturb: domain_radius must be > 0");
  SmoothMap f(std::make_shared<PolyPerturbMap>(center, coefficient, source, target, domain_radius));
  const auto [det, where] = min_det_on_grid(f, n == 2 ? 101 : (n == 3 ? 31 : 9));
  if (!(det > 0.0)) {
    std::ostringstream os;
    os << "poly_perturb: det J = " << det << " <= 0 at (" << where.transpose() << ")";
    throw Error(ErrorKind::not_diffeo, os.str());
  }
  return f;
}

/// Build a family member from its parameter record
/// ({"family": name, ...}; see README for the per-family keys).
inline SmoothMap construct_builtin(Family family, const Json& p) {
  using namespace params;
  switch (family) {
    case Family::identity: return identity_map(dimension(p));
    case Family::affine: {
      if (!p.contains("matrix")) throw bad("matrix", "missing");
      const Mat A = matrix(p.at("matrix"), "matrix");
      const int n = static_cast<int>(A.rows());
      if (n < 2) throw bad("matrix", "dimension must be >= 2");
      return SmoothMap(std::make_shared<AffineMap>(A, vector(p, "center", n, zeros(n)), vector(p, "shift", n, zeros(n))));
    }
    case Family::rotation: {
      const int n = dimension(p);
      return rotation_map(n, number(p, "angle"), vector(p, "center", n, zeros(n)), plane(p, n));
    }
    case Family::shear: {
      const int n = dimension(p);
      return shear_map(n, number(p, "amount"), vector(p, "center", n, zeros(n)), plane(p, n));
    }
    case Family::twist: {
      const int n = dimension(p);
      return twist_map(n, number(p, "angle"), number(p, "inner", 0.0), number(p, "outer"), vector(p, "center", n, zeros(n)), plane(p, n));
    }
    case Family::radial: {
      const Vec c = vector(p, "center", 0, std::nullopt);
      if (c.size() < 2) throw bad("center", "dimension must be >= 2");
      return SmoothMap(std::make_shared<RadialMap>(
          transition_profile(number(p, "a"), number(p, "b"), number(p, "c0"), number(p, "c1", 1.0)), c));
    }
    case Family::poly_perturb: {
      const int n = dimension(p);
      return poly_perturb_map(n, number(p, "coefficient"), integer(p, "source", 0), integer(p, "target", 1),
                              vector(p, "center", n, zeros(n)), number(p, "domain_radius", 1.5));
    }
    case Family::damped_translate: {
      const Vec q = vector(p, "from", 0, std::nullopt);
      const Vec to = vector(p, "to", static_cast<int>(q.size()), std::nullopt);
      FlowOptions opts;
      opts.steps = integer(p, "steps", 0);
      if (opts.steps < 0) throw bad("steps", "must be >= 0");
      if (p.contains("reduced")) {
        if (!p.at("reduced").is_boolean()) throw bad("reduced", "expected a boolean");
        opts.reduced = p.at("reduced").get<bool>();
      }
      return damped_translation(q, to, number(p, "eps"), number(p, "tube", 0.0), std::nullopt, opts);
    }
  }
  throw Error(ErrorKind::parameter, "construct_builtin: unknown family");
}

inline SmoothMap construct_builtin(const Json& spec) {
  if (!spec.is_object() || !spec.contains("family") || !spec.at("family").is_string())
    throw Error(ErrorKind::parameter, "family: missing");
  const std::string name = spec.at("family").get<std::string>();
  auto f = family_from_string(name);
  if (!f) throw Error(ErrorKind::parameter, "family: unknown family '" + name + "'");
  return construct_builtin(*f, spec);
}

}  // namespace diffext
