// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails.

#include "diffext/runner.hpp"

#include <cstdio>
#include <iostream>
#include <random>

using namespace diffext;

namespace {

const std::string fixture_dir = DIFFEXT_FIXTURE_DIR;

struct Outcome {
  bool pass = true;
  std::string detail;
};

void require(Outcome& o, bool ok, const std::string& why) {
  if (!ok && o.pass) {
    o.pass = false;
    o.detail = why;
  }
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double as_number(const Json& v) {
  if (v.is_number()) return v.get<double>();
  return v == "-inf" ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
}

const Json* find_check(const Json& report, const std::string& name) {
  if (!report.contains("checks")) return nullptr;
  for (const Json& c : report.at("checks"))
    if (c.at("name") == name) return &c;
  return nullptr;
}

/// Verifies that the named check ran with at least `samples` points at a
/// tolerance no looser than `tol`, and passed. Returns its worst value.
double expect_check(Outcome& o, const Json& report, const std::string& label, const std::string& name, int samples, double tol) {
  const Json* c = find_check(report, name);
  if (!c) {
    require(o, false, label + ": check '" + name + "' missing");
    return std::numeric_limits<double>::infinity();
  }
  const double worst = as_number(c->at("worst_value"));
  require(o, c->at("evaluated").get<int>() >= samples, label + ": '" + name + "' evaluated too few samples");
  require(o, c->at("tol").get<double>() <= tol, label + ": '" + name + "' tolerance looser than " + sci(tol));
  require(o, c->at("passed").get<bool>(), label + ": '" + name + "' failed with worst " + sci(worst));
  return worst;
}

double seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- generated extension fixtures -------------------------------------------

struct Generated {
  std::string label;
  Json map;  // map tree
  Json ball;
  int n;
  double eps;
  std::uint64_t seed;
};

std::vector<Generated> generated_fixtures() {
  const std::vector<std::string> families{"rotation", "shear", "twist", "poly_perturb"};
  std::vector<Generated> out;
  for (int idx = 0; idx < 20; ++idx) {
    std::mt19937_64 rng(1000 + idx);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const int n = idx < 16 ? 2 + (idx / 8) : 2 + (idx % 2);
    const std::string family = families[static_cast<std::size_t>(idx < 16 ? (idx / 2) % 4 : idx % 4)];
    const double eps = idx % 2 == 0 ? 0.2 : 0.5;
    Json center = Json::array();
    for (int i = 0; i < n; ++i) center.push_back(2.0 * U(rng) - 1.0);
    const double radius = 0.6 + 0.6 * U(rng);
    Json plane = Json::array({0, 1});
    if (n == 3) {
      const int drop = static_cast<int>(U(rng) * 3.0) % 3;
      plane = drop == 0 ? Json::array({1, 2}) : (drop == 1 ? Json::array({0, 2}) : Json::array({0, 1}));
    }
    Json m{{"family", family}, {"center", center}, {"plane", plane}};
    if (family == "rotation") m["angle"] = 0.3 + 2.2 * U(rng);
    if (family == "shear") m["amount"] = 0.2 + 0.8 * U(rng);
    if (family == "twist") {
      m["angle"] = 0.5 + 1.5 * U(rng);
      m["inner"] = 0.2 * radius;
      m["outer"] = 1.3 * radius;
    }
    if (family == "poly_perturb") {
      m.erase("plane");
      m["coefficient"] = (0.2 + 0.6 * U(rng)) / radius;
      m["source"] = plane[0];
      m["target"] = plane[1];
      m["domain_radius"] = 2.0 * radius;
    }
    Generated g;
    g.n = n;
    g.eps = eps;
    g.seed = static_cast<std::uint64_t>(idx + 1);
    g.map = m;
    g.ball = Json{{"map", m}, {"center", center}, {"radius", radius}, {"margin", 0.5}};
    g.label = "fixture " + std::to_string(idx) + " (" + family + ", n=" + std::to_string(n) + ", eps=" + sci(eps) + ")";
    out.push_back(std::move(g));
  }
  return out;
}

Json extend_scenario(const Generated& g) {
  return Json{{"version", "1"}, {"command", "extend"}, {"dimension", g.n}, {"seed", g.seed}, {"eps", g.eps}, {"extend", Json{{"ball", g.ball}}}};
}

Json linearize_scenario(const Generated& g) {
  return Json{{"version", "1"}, {"command", "linearize"}, {"dimension", g.n}, {"seed", g.seed}, {"linearize", Json{{"ball", g.ball}}}};
}

RunOutcome run_json(const Json& scenario) { return run_scenario_text(scenario.dump()); }

// ---- criteria -----------------------------------------------------------------

struct ExtendRuns {
  std::vector<std::pair<std::string, RunOutcome>> runs;
  double time = 0.0;
};

Outcome palais_contract(const ExtendRuns& e) {
  Outcome o;
  double agree = 0.0, ident = 0.0, rt = 0.0, det = std::numeric_limits<double>::infinity();
  for (const auto& [label, r] : e.runs) {
    require(o, r.exit_code == exit_pass, label + ": exit code " + std::to_string(r.exit_code));
    agree = std::max(agree, expect_check(o, r.report, label, "agrees with H on the closed ball", 1000, 1e-12));
    ident = std::max(ident, expect_check(o, r.report, label, "identity where dist(x, A) >= eps", 1000, 1e-13));
    rt = std::max(rt, expect_check(o, r.report, label, "structural roundtrip", 10000, 1e-8));
    det = std::min(det, expect_check(o, r.report, label, "det J > 0", 10000, 1.0));
  }
  require(o, e.runs.size() == 20, "expected 20 fixtures");
  require(o, e.time < 60.0, "runtime " + sci(e.time) + " s exceeds 60 s");
  if (o.pass)
    o.detail = std::to_string(e.runs.size()) + " fixtures; worst agreement " + sci(agree) + ", identity " + sci(ident) + ", roundtrip " +
               sci(rt) + ", min det " + sci(det) + "; " + sci(e.time) + " s";
  return o;
}

Outcome internal_identities(const ExtendRuns& e) {
  Outcome o;
  double shell = 0.0, stage = 0.0;
  for (const auto& [label, r] : e.runs) {
    shell = std::max(shell, expect_check(o, r.report, label, "shell identity of psi", 100, 1e-10));
    stage = std::max(stage, expect_check(o, r.report, label, "H2 agrees with H1 on B(c, rho + tau)", 100, 1e-10));
    const Json& ev = r.report["stages"]["palais"]["interior_agreement"];
    require(o, !ev.is_null(), label + ": construction evidence missing");
  }
  if (o.pass) o.detail = "shell identity worst " + sci(shell) + ", H2 = H1 worst " + sci(stage) + " over " + std::to_string(e.runs.size()) + " pipelines";
  return o;
}

Outcome linearization(const std::vector<Generated>& gens) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double ident = 0.0, agree = 0.0, fd = 0.0;
  for (const auto& g : gens) {
    const RunOutcome r = run_json(linearize_scenario(g));
    require(o, r.exit_code == exit_pass, g.label + ": exit code " + std::to_string(r.exit_code));
    ident = std::max(ident, expect_check(o, r.report, g.label, "identity on B(c, delta)", 1000, 1e-13));
    agree = std::max(agree, expect_check(o, r.report, g.label, "agrees with H on rho/2 <= |x - c| <= rho", 1000, 1e-12));
    fd = std::max(fd, expect_check(o, r.report, g.label, "analytic vs central-difference Jacobian", 200, 1e-5));
  }
  const double t = seconds(t0);
  require(o, t < 30.0, "runtime " + sci(t) + " s exceeds 30 s");
  if (o.pass)
    o.detail = std::to_string(gens.size()) + " maps; identity " + sci(ident) + ", agreement " + sci(agree) + ", FD rel. err " + sci(fd) + "; " +
               sci(t) + " s";
  return o;
}

std::map<std::string, RunOutcome> fixture_runs;

const RunOutcome& run_fixture(const std::string& name) {
  auto it = fixture_runs.find(name);
  if (it == fixture_runs.end()) it = fixture_runs.emplace(name, run_scenario_text(read_text_file(fixture_dir + "/" + name))).first;
  return it->second;
}

Outcome gluing() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double agree = 0.0, ident = 0.0, rt = 0.0;
  for (const char* name : {"glue_translation_2d.json", "glue_translation_3d.json", "glue_rotation_2d.json", "glue_rotation_3d.json"}) {
    const RunOutcome& r = run_fixture(name);
    require(o, r.exit_code == exit_pass, std::string(name) + ": exit code " + std::to_string(r.exit_code));
    const int pairs = r.report["environment"].value("pairs", 0);
    require(o, pairs >= 1, std::string(name) + ": no pairs");
    for (int i = 0; i < pairs; ++i)
      agree = std::max(agree, expect_check(o, r.report, name, "agrees with F_" + std::to_string(i) + " on D_" + std::to_string(i), 1000, 1e-9));
    ident = std::max(ident, expect_check(o, r.report, name, "identity outside U", 1000, 1e-13));
    rt = std::max(rt, expect_check(o, r.report, name, "structural roundtrip on U", 1000, 1e-7));
  }
  const double t = seconds(t0);
  require(o, t < 120.0, "runtime " + sci(t) + " s exceeds 120 s");
  if (o.pass) o.detail = "4 fixtures; restriction " + sci(agree) + ", identity outside U " + sci(ident) + ", roundtrip " + sci(rt) + "; " + sci(t) + " s";
  return o;
}

Outcome insertion() {
  Outcome o;
  const RunOutcome& r = run_fixture("insert_rotation_2d.json");
  require(o, r.exit_code == exit_pass, "exit code " + std::to_string(r.exit_code));
  const double in = expect_check(o, r.report, "insert", "agrees with G on D2", 1000, 1e-9);
  const double out = expect_check(o, r.report, "insert", "agrees with F off the interior of D1", 1000, 1e-13);
  const double rt = expect_check(o, r.report, "insert", "structural roundtrip", 1000, 1e-7);
  if (o.pass) o.detail = "agreement with G " + sci(in) + ", with F " + sci(out) + ", roundtrip " + sci(rt);
  return o;
}

Outcome flow_exactness() {
  Outcome o;
  double payload = 0.0, doubling = 0.0, reverse = 0.0;
  const std::vector<std::pair<Vec, Vec>> moves{{vec({0.0, 0.0}), vec({1.5, 0.4})},
                                               {vec({-2.0, 1.0}), vec({3.0, -1.0})},
                                               {vec({0.2, -0.1, 0.3}), vec({1.0, 0.5, -0.2})},
                                               {vec({0.0, 0.0, 0.0}), vec({0.0, 4.0, 2.0})}};
  std::uint64_t seed = 1;
  for (const auto& [q, p] : moves) {
    const double eps = 0.2, tube = 0.3;
    const double scale = std::max(1.0, (p - q).norm());
    const SmoothMap T = damped_translation(q, p, eps, tube);
    for (const Vec& x : sample_region(Region::ball(q, eps), 1000, seed, 0))
      payload = std::max(payload, (T(x) - (x + (p - q))).norm() / scale);
    FlowOptions rk;
    rk.reduced = false;
    const SmoothMap A = damped_translation(q, p, eps, tube, std::nullopt, rk);
    FlowOptions rk2 = rk;
    rk2.steps = 2 * A.as<FlowMap>()->steps();
    const SmoothMap B = damped_translation(q, p, eps, tube, std::nullopt, rk2);
    const Vec mid = 0.5 * (q + p);
    const double reach = 0.5 * (p - q).norm() + tube + 0.1;
    for (const Vec& x : sample_region(Region::ball(mid, reach), 300, seed, 1)) {
      doubling = std::max(doubling, (A(x) - B(x)).norm());
      doubling = std::max(doubling, (T(x) - B(x)).norm());
      for (const SmoothMap* f : {&T, &A}) {
        const auto back = f->inverse((*f)(x));
        reverse = std::max(reverse, back ? (*back - x).norm() : std::numeric_limits<double>::infinity());
      }
    }
    ++seed;
  }
  require(o, payload <= 1e-13, "payload displacement error " + sci(payload));
  require(o, doubling <= 1e-9, "step doubling changed outputs by " + sci(doubling));
  require(o, reverse <= 1e-9, "reverse-flow roundtrip " + sci(reverse));
  if (o.pass) o.detail = "payload " + sci(payload) + " (relative), step doubling " + sci(doubling) + ", reverse roundtrip " + sci(reverse);
  return o;
}

Outcome kernel_oracles() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> N(0.0, 1.0);
  double fact = 0.0;
  int count = 0;
  while (count < 100) {
    const int n = 2 + count % 3;
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = N(rng);
    if (A.determinant() < 0.0) A.row(0) *= -1.0;
    if (std::abs(A.determinant()) < 1e-3) continue;
    const auto f = linear_factorize(A);
    fact = std::max(fact, (matrix_exp(f.K) * matrix_exp(f.Y) - A).norm() / A.norm());
    ++count;
  }
  double radial = 0.0;
  const TransitionProfile phi = transition_profile(0.3, 1.0, 0.4, 1.0);
  const SmoothMap R = radial_squeeze(phi, vec({0.1, -0.2, 0.3}));
  for (const Vec& x : sample_region(Region::ball(vec({0.1, -0.2, 0.3}), 1.3), 1000, 7, 0)) {
    const auto back = R.inverse(R(x));
    radial = std::max(radial, back ? (*back - x).norm() : std::numeric_limits<double>::infinity());
    const double r = (x - vec({0.1, -0.2, 0.3})).norm();
    radial = std::max(radial, std::abs(invert_radial_profile(phi, phi.radial(r)) - r));
  }
  require(o, fact <= 1e-12, "factorization reconstruction " + sci(fact));
  require(o, radial <= 1e-12, "radial inversion roundtrip " + sci(radial));
  if (o.pass) o.detail = "factorization " + sci(fact) + " on 100 matrices, radial inversion " + sci(radial) + " on 1000 points";
  return o;
}

Outcome determinism() {
  Outcome o;
  int compared = 0;
  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(fixture_dir))
    if (entry.path().extension() == ".json" && entry.path().filename() != "demo.json") names.push_back(entry.path().filename().string());
  for (const auto& entry : std::filesystem::directory_iterator(fixture_dir + "/invalid"))
    if (entry.path().extension() == ".json") names.push_back("invalid/" + entry.path().filename().string());
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    const RunOutcome& first = run_fixture(name);
    const RunOutcome second = run_scenario_text(read_text_file(fixture_dir + "/" + name));
    require(o, first.body().dump(2) == second.body().dump(2), name + ": reports differ");
    require(o, first.report.begin().key() == "header", name + ": header is not separate");
    ++compared;
  }
  if (o.pass) o.detail = std::to_string(compared) + " fixtures produced byte-identical reports (header excluded)";
  return o;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto gens = generated_fixtures();
  ExtendRuns ext;
  const auto e0 = std::chrono::steady_clock::now();
  for (const auto& g : gens) ext.runs.emplace_back(g.label, run_json(extend_scenario(g)));
  ext.time = seconds(e0);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 Palais extension contract", [&] { return palais_contract(ext); }},
      {"2 local linearization", [&] { return linearization(gens); }},
      {"3 internal identities (shell, H2 = H1)", [&] { return internal_identities(ext); }},
      {"4 gluing", gluing},
      {"5 inner map insertion", insertion},
      {"6 flow exactness", flow_exactness},
      {"7 kernel oracles", kernel_oracles},
      {"8 determinism", determinism},
  };
  bool all = true;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << name << ": " << o.detail << std::endl;
  }
  std::cout << (all ? "ALL PASS" : "SOME FAILED") << " (" << sci(seconds(t0)) << " s)" << std::endl;
  return all ? 0 : 1;
}
