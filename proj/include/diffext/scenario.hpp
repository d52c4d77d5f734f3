#pragma once
/// Scenario format: parsing, validation with path context, resolution of
/// named map trees, balls, routes and regions, and canonical serialization.
///
/// A scenario is one JSON document (schema version "1"):
///   version, command, dimension, seed, eps, flow, tolerances, samples,
///   fd_step, maps, balls, routes, <command section>, checks, grid, outputs.
/// Map trees: a name from `maps`, {"family": ..., params}, {"compose": [...]}
/// (leftmost applied last) or {"inverse": tree}. Regions use the same records
/// as Region::to_json, with image_of taking a map tree.

#include "diffext/builtins.hpp"
#include "diffext/suites.hpp"

#include <map>
#include <set>

namespace diffext {

enum class Command { extend, linearize, glue, insert, verify, demo };

inline const char* to_string(Command c) {
  switch (c) {
    case Command::extend: return "extend";
    case Command::linearize: return "linearize";
    case Command::glue: return "glue";
    case Command::insert: return "insert";
    case Command::verify: return "verify";
    case Command::demo: return "demo";
  }
  return "unknown";
}

inline std::optional<Command> command_from_string(const std::string& s) {
  for (Command c : {Command::extend, Command::linearize, Command::glue, Command::insert, Command::verify, Command::demo})
    if (s == to_string(c)) return c;
  return std::nullopt;
}

/// Schema violation; `issues` lists every problem found, each prefixed with
/// its path in the document.
class SchemaError : public Error {
 public:
  explicit SchemaError(std::vector<std::string> issues) : Error(ErrorKind::schema, join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "scenario schema error";
    for (const auto& s : v) out += "\n  " + s;
    return out;
  }
  std::vector<std::string> issues_;
};

struct FlowSettings {
  int steps = 64;         // fixed step count, or the calibration start when `calibrate`
  bool calibrate = true;  // double the steps until the refinement check passes
  bool reduced = true;

  FlowOptions options() const {
    FlowOptions o;
    o.steps = calibrate ? 0 : steps;
    o.start_steps = steps;
    o.reduced = reduced;
    return o;
  }
  Json to_json() const { return Json{{"steps", steps}, {"calibrate", calibrate}, {"reduced", reduced}}; }
};

struct ExtendJob {
  BallDiffeo ball;
};
struct LinearizeJob {
  BallDiffeo ball;
};
struct InsertJob {
  SmoothMap outer;
  BallDiffeo inner;
  BallDiffeo d1;
  std::optional<Region> u_inner;
  Region domain = Region::all(2);  // where roundtrip and orientation are checked
};
struct VerifyJob {
  SmoothMap subject;
};
struct DemoJob {
  std::vector<std::string> fixtures;  // paths relative to the scenario file
};

struct ExtraCheck {
  CheckSpec spec;
  std::optional<SmoothMap> reference;
  bool inherits_seed = true;  // follows the scenario seed (and its overrides)
};

struct Scenario {
  std::string version = "1";
  Command command = Command::extend;
  int dimension = 2;
  std::uint64_t seed = 1;
  double eps = 0.0;  // 0: not set (insert selects one)
  FlowSettings flow;
  SuiteSettings suite;
  std::map<std::string, SmoothMap> maps;
  std::map<std::string, BallDiffeo> balls;
  std::optional<ExtendJob> extend;
  std::optional<LinearizeJob> linearize;
  std::optional<GlueScenario> glue;
  std::optional<InsertJob> insert;
  std::optional<VerifyJob> verify;
  std::optional<DemoJob> demo;
  std::vector<ExtraCheck> checks;
  int grid_per_axis = 41;
  std::optional<Box> grid_box;
  std::optional<std::string> report_path, grid_path, figure_path;
  Json canonical;  // the document with every default filled in

  PalaisOptions palais_options() const {
    PalaisOptions o;
    o.seed = seed;
    o.linearize.seed = seed;
    o.linearize.flow = flow.options();
    return o;
  }

  Json to_json() const { return canonical; }
};

namespace detail {

class ScenarioParser {
 public:
  explicit ScenarioParser(const Json& doc) : doc_(doc) {}

  Scenario parse() {
    Scenario s;
    if (!doc_.is_object()) {
      issue("", "the scenario must be a JSON object");
      throw SchemaError(issues_);
    }
    static const std::set<std::string> known{"version", "command", "dimension", "seed",   "eps",    "flow",
                                             "tolerances", "samples", "fd_step", "maps",   "balls",  "routes",
                                             "extend",  "linearize", "glue",   "insert", "verify", "demo",
                                             "checks",  "grid",      "outputs"};
    for (const auto& [k, v] : doc_.items())
      if (!known.count(k)) issue(k, "unknown field");

    s.version = string_or(doc_, "version", "version", "1");
    if (s.version != "1") issue("version", "unsupported version '" + s.version + "' (expected \"1\")");
    const std::string cmd = string_or(doc_, "command", "command", "");
    if (auto c = command_from_string(cmd))
      s.command = *c;
    else
      issue("command", cmd.empty() ? "missing" : "unknown command '" + cmd + "'");
    s.dimension = int_or(doc_, "dimension", "dimension", s.command == Command::demo ? 2 : -1);
    if (s.dimension == -1) {
      issue("dimension", "missing");
      s.dimension = 2;
    } else if (s.dimension < 2 || s.dimension > kMaxDim) {
      issue("dimension", "must be in 2..8");
      s.dimension = 2;
    }
    n_ = s.dimension;
    const long long seed = int_or(doc_, "seed", "seed", 1);
    if (seed < 0) issue("seed", "must be >= 0");
    s.seed = static_cast<std::uint64_t>(std::max(0LL, seed));
    s.suite.seed = s.seed;
    s.eps = number_or(doc_, "eps", "eps", 0.0);
    if (s.eps < 0.0) issue("eps", "must be > 0");

    parse_flow(s);
    parse_tables(s);
    if (!issues_.empty()) throw SchemaError(issues_);
    flow_ = s.flow.options();

    if (doc_.contains("maps")) {
      const Json& m = doc_.at("maps");
      if (!m.is_object()) {
        issue("maps", "expected an object of named map trees");
      } else {
        for (const auto& [name, tree] : m.items()) raw_maps_[name] = tree;
        for (const auto& [name, tree] : m.items()) resolve_named(name, "maps." + name);
      }
    }
    s.maps = resolved_;
    if (doc_.contains("balls")) {
      const Json& b = doc_.at("balls");
      if (!b.is_object()) {
        issue("balls", "expected an object of named balls");
      } else {
        for (const auto& [name, spec] : b.items())
          if (auto ball = parse_ball(spec, "balls." + name)) balls_[name] = *ball;
      }
    }
    s.balls = balls_;
    if (doc_.contains("routes")) {
      const Json& r = doc_.at("routes");
      if (!r.is_object()) {
        issue("routes", "expected an object of named routes");
      } else {
        for (const auto& [name, spec] : r.items())
          if (auto route = parse_route(spec, "routes." + name)) routes_[name] = *route;
      }
    }

    const std::string section = to_string(s.command);
    for (Command c : {Command::extend, Command::linearize, Command::glue, Command::insert, Command::verify, Command::demo})
      if (c != s.command && doc_.contains(to_string(c)))
        issue(to_string(c), std::string("section does not match the command '") + section + "'");
    if (!doc_.contains(section)) {
      issue(section, "missing command section");
    } else {
      const Json& sec = doc_.at(section);
      switch (s.command) {
        case Command::extend: parse_extend(s, sec); break;
        case Command::linearize: parse_linearize(s, sec); break;
        case Command::glue: parse_glue(s, sec); break;
        case Command::insert: parse_insert(s, sec); break;
        case Command::verify: parse_verify(s, sec); break;
        case Command::demo: parse_demo(s, sec); break;
      }
    }
    if (s.command == Command::extend || s.command == Command::glue) {
      if (!doc_.contains("eps")) issue("eps", "missing");
      else if (!(s.eps > 0.0)) issue("eps", "must be > 0");
    }

    parse_checks(s);
    parse_grid(s);
    parse_outputs(s);
    if (!issues_.empty()) throw SchemaError(issues_);
    s.canonical = canonical(s);
    return s;
  }

 private:
  void issue(const std::string& path, const std::string& what) { issues_.push_back((path.empty() ? "<root>" : path) + ": " + what); }

  // ---- scalars --------------------------------------------------------------

  std::string string_or(const Json& j, const std::string& key, const std::string& path, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) {
      issue(path, "expected a string");
      return fallback;
    }
    return j.at(key).get<std::string>();
  }

  long long int_or(const Json& j, const std::string& key, const std::string& path, long long fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) {
      issue(path, "expected an integer");
      return fallback;
    }
    return j.at(key).get<long long>();
  }

  double number_or(const Json& j, const std::string& key, const std::string& path, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number() || !std::isfinite(j.at(key).get<double>())) {
      issue(path, "expected a finite number");
      return fallback;
    }
    return j.at(key).get<double>();
  }

  bool bool_or(const Json& j, const std::string& key, const std::string& path, bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) {
      issue(path, "expected a boolean");
      return fallback;
    }
    return j.at(key).get<bool>();
  }

  std::optional<Vec> vector_of(const Json& j, const std::string& path, int n) {
    if (!j.is_array() || static_cast<int>(j.size()) != n) {
      issue(path, "expected an array of " + std::to_string(n) + " numbers");
      return std::nullopt;
    }
    Vec v(n);
    for (int i = 0; i < n; ++i) {
      if (!j[static_cast<std::size_t>(i)].is_number()) {
        issue(path, "expected numbers");
        return std::nullopt;
      }
      v(i) = j[static_cast<std::size_t>(i)].get<double>();
    }
    if (!v.allFinite()) {
      issue(path, "entries must be finite");
      return std::nullopt;
    }
    return v;
  }

  void only_keys(const Json& j, const std::string& path, const std::set<std::string>& keys) {
    for (const auto& [k, v] : j.items())
      if (!keys.count(k)) issue(path + "." + k, "unknown field");
  }

  // ---- settings -------------------------------------------------------------

  void parse_flow(Scenario& s) {
    if (!doc_.contains("flow")) return;
    const Json& f = doc_.at("flow");
    if (!f.is_object()) return issue("flow", "expected an object");
    only_keys(f, "flow", {"steps", "calibrate", "reduced"});
    s.flow.steps = static_cast<int>(int_or(f, "steps", "flow.steps", 64));
    if (s.flow.steps < 1) issue("flow.steps", "must be >= 1");
    s.flow.calibrate = bool_or(f, "calibrate", "flow.calibrate", true);
    s.flow.reduced = bool_or(f, "reduced", "flow.reduced", true);
  }

  void parse_tables(Scenario& s) {
    if (doc_.contains("tolerances")) {
      const Json& t = doc_.at("tolerances");
      if (!t.is_object()) {
        issue("tolerances", "expected an object");
      } else {
        ToleranceTable& tol = s.suite.tol;
        only_keys(t, "tolerances", {"agreement", "identity", "roundtrip", "jacobian_fd", "internal", "glue_agreement", "glue_roundtrip"});
        for (auto [key, ref] : std::initializer_list<std::pair<const char*, double*>>{
                 {"agreement", &tol.agreement},     {"identity", &tol.identity},
                 {"roundtrip", &tol.roundtrip},     {"jacobian_fd", &tol.jacobian_fd},
                 {"internal", &tol.internal},       {"glue_agreement", &tol.glue_agreement},
                 {"glue_roundtrip", &tol.glue_roundtrip}}) {
          *ref = number_or(t, key, std::string("tolerances.") + key, *ref);
          if (!(*ref > 0.0)) issue(std::string("tolerances.") + key, "must be > 0");
        }
      }
    }
    if (doc_.contains("samples")) {
      const Json& t = doc_.at("samples");
      if (!t.is_object()) {
        issue("samples", "expected an object");
      } else {
        SampleTable& st = s.suite.samples;
        only_keys(t, "samples", {"agreement", "outside", "roundtrip", "orientation", "jacobian_fd", "internal"});
        for (auto [key, ref] : std::initializer_list<std::pair<const char*, int*>>{{"agreement", &st.agreement},
                                                                                  {"outside", &st.outside},
                                                                                  {"roundtrip", &st.roundtrip},
                                                                                  {"orientation", &st.orientation},
                                                                                  {"jacobian_fd", &st.jacobian_fd},
                                                                                  {"internal", &st.internal}}) {
          *ref = static_cast<int>(int_or(t, key, std::string("samples.") + key, *ref));
          if (*ref < 1) issue(std::string("samples.") + key, "must be >= 1");
        }
      }
    }
    s.suite.fd_step = number_or(doc_, "fd_step", "fd_step", 1e-6);
    if (!(s.suite.fd_step > 0.0)) issue("fd_step", "must be > 0");
  }

  // ---- maps -----------------------------------------------------------------

  std::optional<SmoothMap> resolve_named(const std::string& name, const std::string& path) {
    if (auto it = resolved_.find(name); it != resolved_.end()) return it->second;
    if (failed_.count(name)) return std::nullopt;
    auto raw = raw_maps_.find(name);
    if (raw == raw_maps_.end()) {
      issue(path, "unresolved map name '" + name + "'");
      return std::nullopt;
    }
    if (active_.count(name)) {
      issue(path, "map '" + name + "' refers to itself");
      failed_.insert(name);
      return std::nullopt;
    }
    active_.insert(name);
    auto m = map_tree(raw->second, "maps." + name);
    active_.erase(name);
    if (m)
      resolved_[name] = *m;
    else
      failed_.insert(name);
    return m;
  }

  std::optional<SmoothMap> map_tree(const Json& t, const std::string& path) {
    if (t.is_string()) return resolve_named(t.get<std::string>(), path);
    if (!t.is_object()) {
      issue(path, "expected a map name or a map tree object");
      return std::nullopt;
    }
    std::optional<SmoothMap> out;
    if (t.contains("family")) {
      Json p = t;
      if (!p.contains("dim") && !p.contains("matrix") && p.value("family", "") != "radial" && p.value("family", "") != "damped_translate")
        p["dim"] = n_;
      if (p.value("family", "") == "damped_translate") {
        if (!p.contains("steps")) p["steps"] = flow_.steps;
        if (!p.contains("reduced")) p["reduced"] = flow_.reduced;
      }
      try {
        out = construct_builtin(p);
      } catch (const Error& e) {
        issue(path + (t.at("family").is_string() && family_from_string(t.at("family").get<std::string>()) ? "" : ".family"), e.what());
        return std::nullopt;
      }
    } else if (t.contains("compose")) {
      only_keys(t, path, {"compose"});
      const Json& parts = t.at("compose");
      if (!parts.is_array() || parts.empty()) {
        issue(path + ".compose", "expected a nonempty array of map trees");
        return std::nullopt;
      }
      std::vector<SmoothMap> ms;
      for (std::size_t i = 0; i < parts.size(); ++i) {
        auto m = map_tree(parts[i], path + ".compose[" + std::to_string(i) + "]");
        if (!m) return std::nullopt;
        ms.push_back(*m);
      }
      try {
        out = compose(ms);
      } catch (const Error& e) {
        issue(path + ".compose", e.what());
        return std::nullopt;
      }
    } else if (t.contains("inverse")) {
      only_keys(t, path, {"inverse"});
      auto m = map_tree(t.at("inverse"), path + ".inverse");
      if (!m) return std::nullopt;
      out = inverse_of(*m);
    } else {
      issue(path, "expected one of 'family', 'compose', 'inverse'");
      return std::nullopt;
    }
    if (out && out->dim() != n_) {
      issue(path, "dimension mismatch: map acts on R^" + std::to_string(out->dim()) + ", scenario dimension is " + std::to_string(n_));
      return std::nullopt;
    }
    return out;
  }

  // ---- regions, balls, routes -------------------------------------------------

  std::optional<Region> region_tree(const Json& t, const std::string& path) {
    if (!t.is_object() || t.size() != 1) {
      issue(path, "expected a region record with exactly one of all/ball/annulus/box/complement/intersection/union/image_of");
      return std::nullopt;
    }
    const auto& [kind, body] = *t.items().begin();
    const std::string p = path + "." + kind;
    try {
      if (kind == "all") return Region::all(n_);
      if (kind == "ball") {
        if (!body.is_object()) return issue(p, "expected an object"), std::nullopt;
        only_keys(body, p, {"center", "radius", "closed"});
        auto c = body.contains("center") ? vector_of(body.at("center"), p + ".center", n_) : std::optional<Vec>(zeros(n_));
        const double r = number_or(body, "radius", p + ".radius", -1.0);
        if (!(r > 0.0)) return issue(p + ".radius", "must be > 0"), std::nullopt;
        if (!c) return std::nullopt;
        return Region::ball(*c, r, bool_or(body, "closed", p + ".closed", true));
      }
      if (kind == "annulus") {
        if (!body.is_object()) return issue(p, "expected an object"), std::nullopt;
        only_keys(body, p, {"center", "inner", "outer"});
        auto c = body.contains("center") ? vector_of(body.at("center"), p + ".center", n_) : std::optional<Vec>(zeros(n_));
        const double a = number_or(body, "inner", p + ".inner", -1.0), b = number_or(body, "outer", p + ".outer", -1.0);
        if (!(0.0 <= a && a < b)) return issue(p, "need 0 <= inner < outer"), std::nullopt;
        if (!c) return std::nullopt;
        return Region::annulus(*c, a, b);
      }
      if (kind == "box") {
        if (!body.is_object() || !body.contains("lo") || !body.contains("hi")) return issue(p, "expected {lo, hi}"), std::nullopt;
        only_keys(body, p, {"lo", "hi"});
        auto lo = vector_of(body.at("lo"), p + ".lo", n_), hi = vector_of(body.at("hi"), p + ".hi", n_);
        if (!lo || !hi) return std::nullopt;
        if (!((lo->array() < hi->array()).all())) return issue(p, "need lo < hi"), std::nullopt;
        return Region::box(*lo, *hi);
      }
      if (kind == "complement") {
        auto r = region_tree(body, p);
        if (!r) return std::nullopt;
        return Region::complement(*r);
      }
      if (kind == "intersection" || kind == "union") {
        if (!body.is_array() || body.empty()) return issue(p, "expected a nonempty array of regions"), std::nullopt;
        std::vector<Region> parts;
        for (std::size_t i = 0; i < body.size(); ++i) {
          auto r = region_tree(body[i], p + "[" + std::to_string(i) + "]");
          if (!r) return std::nullopt;
          parts.push_back(*r);
        }
        return kind == "union" ? Region::union_of(parts) : Region::intersection(parts);
      }
      if (kind == "image_of") {
        if (!body.is_object() || !body.contains("map") || !body.contains("region")) return issue(p, "expected {map, region}"), std::nullopt;
        only_keys(body, p, {"map", "region"});
        auto m = map_tree(body.at("map"), p + ".map");
        auto r = region_tree(body.at("region"), p + ".region");
        if (!m || !r) return std::nullopt;
        return Region::image_of(m->node(), *r);
      }
    } catch (const Error& e) {
      issue(p, e.what());
      return std::nullopt;
    }
    issue(path, "unknown region kind '" + kind + "'");
    return std::nullopt;
  }

  std::optional<BallDiffeo> parse_ball(const Json& spec, const std::string& path) {
    if (spec.is_string()) {
      const std::string name = spec.get<std::string>();
      if (auto it = balls_.find(name); it != balls_.end()) return it->second;
      issue(path, "unresolved ball name '" + name + "'");
      return std::nullopt;
    }
    if (!spec.is_object()) {
      issue(path, "expected a ball name or a ball record");
      return std::nullopt;
    }
    only_keys(spec, path, {"map", "center", "radius", "margin"});
    std::optional<SmoothMap> m = spec.contains("map") ? map_tree(spec.at("map"), path + ".map") : std::optional<SmoothMap>(identity_map(n_));
    auto c = spec.contains("center") ? vector_of(spec.at("center"), path + ".center", n_) : std::optional<Vec>(zeros(n_));
    const double r = number_or(spec, "radius", path + ".radius", 1.0);
    const double margin = number_or(spec, "margin", path + ".margin", 0.5);
    if (!m || !c) return std::nullopt;
    try {
      return make_ball_diffeo(*m, *c, r, margin);
    } catch (const Error& e) {
      issue(path, e.what());
      return std::nullopt;
    }
  }

  Json ball_json(const Json& spec) const {
    if (spec.is_string()) return spec;
    Json j{{"map", spec.contains("map") ? spec.at("map") : Json{{"family", "identity"}}},
           {"center", spec.contains("center") ? spec.at("center") : to_json(zeros(n_))},
           {"radius", spec.value("radius", 1.0)},
           {"margin", spec.value("margin", 0.5)}};
    return j;
  }

  std::optional<Polyline> parse_route(const Json& spec, const std::string& path) {
    if (spec.is_string()) {
      const std::string name = spec.get<std::string>();
      if (auto it = routes_.find(name); it != routes_.end()) return it->second;
      issue(path, "unresolved route name '" + name + "'");
      return std::nullopt;
    }
    if (!spec.is_object()) {
      issue(path, "expected a route name or {waypoints, clearance}");
      return std::nullopt;
    }
    only_keys(spec, path, {"waypoints", "clearance"});
    Polyline p;
    if (spec.contains("waypoints")) {
      const Json& w = spec.at("waypoints");
      if (!w.is_array()) {
        issue(path + ".waypoints", "expected an array of points");
        return std::nullopt;
      }
      for (std::size_t i = 0; i < w.size(); ++i) {
        auto v = vector_of(w[i], path + ".waypoints[" + std::to_string(i) + "]", n_);
        if (!v) return std::nullopt;
        p.vertices.push_back(*v);
      }
    }
    p.clearance = number_or(spec, "clearance", path + ".clearance", 0.0);
    if (p.clearance < 0.0) {
      issue(path + ".clearance", "must be >= 0");
      return std::nullopt;
    }
    return p;
  }

  Json route_json(const Json& spec) const {
    if (spec.is_string()) return spec;
    return Json{{"waypoints", spec.contains("waypoints") ? spec.at("waypoints") : Json::array()}, {"clearance", spec.value("clearance", 0.0)}};
  }

  // ---- command sections -------------------------------------------------------

  void parse_extend(Scenario& s, const Json& sec) {
    if (!sec.is_object() || !sec.contains("ball")) return issue("extend", "expected {ball}");
    only_keys(sec, "extend", {"ball"});
    if (auto b = parse_ball(sec.at("ball"), "extend.ball")) s.extend = ExtendJob{*b};
  }

  void parse_linearize(Scenario& s, const Json& sec) {
    if (!sec.is_object() || !sec.contains("ball")) return issue("linearize", "expected {ball}");
    only_keys(sec, "linearize", {"ball"});
    if (auto b = parse_ball(sec.at("ball"), "linearize.ball")) s.linearize = LinearizeJob{*b};
  }

  void parse_glue(Scenario& s, const Json& sec) {
    if (!sec.is_object() || !sec.contains("pairs") || !sec.contains("region")) return issue("glue", "expected {region, pairs}");
    only_keys(sec, "glue", {"region", "pairs", "boundary_tol"});
    GlueScenario g;
    g.n = n_;
    g.eps = s.eps;
    g.boundary_tol = number_or(sec, "boundary_tol", "glue.boundary_tol", 1e-9);
    auto U = region_tree(sec.at("region"), "glue.region");
    if (U && !U->bounds()) issue("glue.region", "U must be bounded");
    const Json& pairs = sec.at("pairs");
    if (!pairs.is_array() || pairs.empty()) return issue("glue.pairs", "expected a nonempty array");
    bool ok = U.has_value();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const std::string p = "glue.pairs[" + std::to_string(i) + "]";
      const Json& e = pairs[i];
      if (!e.is_object() || !e.contains("source") || !e.contains("target") || !e.contains("map")) {
        issue(p, "expected {source, target, map, route?}");
        ok = false;
        continue;
      }
      only_keys(e, p, {"source", "target", "map", "route"});
      auto src = parse_ball(e.at("source"), p + ".source");
      auto tgt = parse_ball(e.at("target"), p + ".target");
      auto m = map_tree(e.at("map"), p + ".map");
      auto r = e.contains("route") ? parse_route(e.at("route"), p + ".route") : std::optional<Polyline>(Polyline{});
      if (!src || !tgt || !m || !r) {
        ok = false;
        continue;
      }
      g.pairs.push_back(GluePair{*src, *tgt, *m, *r});
    }
    if (ok) {
      g.U = *U;
      s.glue = g;
    }
  }

  void parse_insert(Scenario& s, const Json& sec) {
    if (!sec.is_object() || !sec.contains("outer") || !sec.contains("inner") || !sec.contains("d1"))
      return issue("insert", "expected {outer, inner, d1, region?, domain?}");
    only_keys(sec, "insert", {"outer", "inner", "d1", "region", "domain"});
    auto F = map_tree(sec.at("outer"), "insert.outer");
    auto g = parse_ball(sec.at("inner"), "insert.inner");
    auto d1 = parse_ball(sec.at("d1"), "insert.d1");
    std::optional<Region> u;
    if (sec.contains("region")) {
      u = region_tree(sec.at("region"), "insert.region");
      if (!u) return;
    }
    std::optional<Region> domain;
    if (sec.contains("domain")) {
      domain = region_tree(sec.at("domain"), "insert.domain");
      if (domain && !domain->bounds()) {
        issue("insert.domain", "must be bounded");
        return;
      }
    }
    if (!F || !g || !d1) return;
    InsertJob job{*F, *g, *d1, u, Region::all(n_)};
    if (domain) {
      job.domain = *domain;
    } else {
      const auto bb = Region::image_of(d1->map.node(), d1->ball()).bounds();
      const double half = 0.5 * (bb->hi - bb->lo).maxCoeff();
      job.domain = Region::box(Vec(bb->lo.array() - half), Vec(bb->hi.array() + half));
    }
    s.insert = job;
  }

  void parse_verify(Scenario& s, const Json& sec) {
    if (!sec.is_object() || !sec.contains("subject")) return issue("verify", "expected {subject}");
    only_keys(sec, "verify", {"subject"});
    if (auto m = map_tree(sec.at("subject"), "verify.subject")) s.verify = VerifyJob{*m};
  }

  void parse_demo(Scenario& s, const Json& sec) {
    if (!sec.is_object() || !sec.contains("fixtures")) return issue("demo", "expected {fixtures}");
    only_keys(sec, "demo", {"fixtures"});
    const Json& f = sec.at("fixtures");
    if (!f.is_array() || f.empty()) return issue("demo.fixtures", "expected a nonempty array of paths");
    DemoJob job;
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!f[i].is_string()) {
        issue("demo.fixtures[" + std::to_string(i) + "]", "expected a path");
        continue;
      }
      job.fixtures.push_back(f[i].get<std::string>());
    }
    s.demo = job;
  }

  // ---- checks, grid, outputs ---------------------------------------------------

  void parse_checks(Scenario& s) {
    if (!doc_.contains("checks")) return;
    const Json& cs = doc_.at("checks");
    if (!cs.is_array()) return issue("checks", "expected an array");
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const std::string p = "checks[" + std::to_string(i) + "]";
      const Json& c = cs[i];
      if (!c.is_object() || !c.contains("kind") || !c.contains("region")) {
        issue(p, "expected {kind, region, ...}");
        continue;
      }
      only_keys(c, p, {"kind", "name", "region", "samples", "seed", "tol", "fd_step", "scale", "low_discrepancy", "reference"});
      ExtraCheck e;
      const std::string kind = string_or(c, "kind", p + ".kind", "");
      auto k = check_kind_from_string(kind);
      if (!k) {
        issue(p + ".kind", "unknown check kind '" + kind + "'");
        continue;
      }
      e.spec.kind = *k;
      e.spec.name = string_or(c, "name", p + ".name", "");
      auto r = region_tree(c.at("region"), p + ".region");
      e.spec.samples = static_cast<int>(int_or(c, "samples", p + ".samples", 1000));
      e.inherits_seed = !c.contains("seed") || c.at("seed").is_null();
      const long long seed = e.inherits_seed ? static_cast<long long>(s.seed) : int_or(c, "seed", p + ".seed", 0);
      if (seed < 0) issue(p + ".seed", "must be >= 0");
      e.spec.seed = static_cast<std::uint64_t>(std::max(0LL, seed));
      e.spec.tol = number_or(c, "tol", p + ".tol", 1e-9);
      e.spec.fd_step = number_or(c, "fd_step", p + ".fd_step", s.suite.fd_step);
      e.spec.scale = number_or(c, "scale", p + ".scale", 1.0);
      e.spec.low_discrepancy = bool_or(c, "low_discrepancy", p + ".low_discrepancy", *k == CheckKind::orientation);
      try {
        e.spec.validate();
      } catch (const Error& err) {
        issue(p, err.what());
      }
      if (c.contains("reference")) e.reference = map_tree(c.at("reference"), p + ".reference");
      if (e.spec.needs_reference() && !c.contains("reference")) issue(p + ".reference", "required for this kind");
      if (!r) continue;
      e.spec.region = *r;
      s.checks.push_back(std::move(e));
    }
  }

  void parse_grid(Scenario& s) {
    s.grid_per_axis = n_ == 2 ? 41 : (n_ == 3 ? 11 : 5);
    if (!doc_.contains("grid")) return;
    const Json& g = doc_.at("grid");
    if (!g.is_object()) return issue("grid", "expected an object");
    only_keys(g, "grid", {"per_axis", "box"});
    s.grid_per_axis = static_cast<int>(int_or(g, "per_axis", "grid.per_axis", s.grid_per_axis));
    if (s.grid_per_axis < 2) issue("grid.per_axis", "must be >= 2");
    if (g.contains("box") && !g.at("box").is_null()) {
      const Json& b = g.at("box");
      if (!b.is_object() || !b.contains("lo") || !b.contains("hi")) return issue("grid.box", "expected {lo, hi}");
      auto lo = vector_of(b.at("lo"), "grid.box.lo", n_), hi = vector_of(b.at("hi"), "grid.box.hi", n_);
      if (lo && hi) {
        if (!((lo->array() < hi->array()).all()))
          issue("grid.box", "need lo < hi");
        else
          s.grid_box = Box{*lo, *hi};
      }
    }
  }

  void parse_outputs(Scenario& s) {
    if (!doc_.contains("outputs")) return;
    const Json& o = doc_.at("outputs");
    if (!o.is_object()) return issue("outputs", "expected an object");
    only_keys(o, "outputs", {"report", "grid", "figure"});
    for (auto [key, ref] : std::initializer_list<std::pair<const char*, std::optional<std::string>*>>{
             {"report", &s.report_path}, {"grid", &s.grid_path}, {"figure", &s.figure_path}}) {
      if (!o.contains(key) || o.at(key).is_null()) continue;
      if (!o.at(key).is_string()) {
        issue(std::string("outputs.") + key, "expected a path");
        continue;
      }
      *ref = o.at(key).get<std::string>();
    }
  }

  // ---- canonical form ---------------------------------------------------------

  Json canonical(const Scenario& s) const {
    Json j;
    j["version"] = s.version;
    j["command"] = to_string(s.command);
    j["dimension"] = s.dimension;
    j["seed"] = s.seed;
    if (doc_.contains("eps")) j["eps"] = s.eps;
    j["flow"] = s.flow.to_json();
    j["tolerances"] = s.suite.tol.to_json();
    j["samples"] = s.suite.samples.to_json();
    j["fd_step"] = s.suite.fd_step;
    j["maps"] = doc_.contains("maps") ? doc_.at("maps") : Json::object();
    Json balls = Json::object();
    if (doc_.contains("balls"))
      for (const auto& [k, v] : doc_.at("balls").items()) balls[k] = ball_json(v);
    j["balls"] = balls;
    Json routes = Json::object();
    if (doc_.contains("routes"))
      for (const auto& [k, v] : doc_.at("routes").items()) routes[k] = route_json(v);
    j["routes"] = routes;

    const std::string section = to_string(s.command);
    Json sec = doc_.at(section);
    switch (s.command) {
      case Command::extend:
      case Command::linearize: sec["ball"] = ball_json(sec.at("ball")); break;
      case Command::glue: {
        sec["boundary_tol"] = sec.value("boundary_tol", 1e-9);
        Json pairs = Json::array();
        for (const Json& e : sec.at("pairs")) {
          Json q{{"source", ball_json(e.at("source"))},
                 {"target", ball_json(e.at("target"))},
                 {"map", e.at("map")},
                 {"route", route_json(e.contains("route") ? e.at("route") : Json::object())}};
          pairs.push_back(std::move(q));
        }
        sec["pairs"] = std::move(pairs);
        break;
      }
      case Command::insert:
        sec["inner"] = ball_json(sec.at("inner"));
        sec["d1"] = ball_json(sec.at("d1"));
        break;
      default: break;
    }
    j[section] = sec;

    Json checks = Json::array();
    for (const auto& c : s.checks) {
      Json cj{{"kind", to_string(c.spec.kind)},  {"name", c.spec.name},       {"region", Json()},
              {"samples", c.spec.samples},       {"seed", c.inherits_seed ? Json(nullptr) : Json(c.spec.seed)},       {"tol", c.spec.tol},
              {"fd_step", c.spec.fd_step},       {"scale", c.spec.scale},     {"low_discrepancy", c.spec.low_discrepancy}};
      checks.push_back(std::move(cj));
    }
    if (doc_.contains("checks"))
      for (std::size_t i = 0; i < checks.size(); ++i) {
        const Json& raw = doc_.at("checks")[i];
        checks[i]["region"] = raw.at("region");
        if (raw.contains("reference")) checks[i]["reference"] = raw.at("reference");
      }
    j["checks"] = checks;
    Json grid{{"per_axis", s.grid_per_axis}};
    grid["box"] = s.grid_box ? Json{{"lo", to_json(s.grid_box->lo)}, {"hi", to_json(s.grid_box->hi)}} : Json(nullptr);
    j["grid"] = grid;
    const auto path = [](const std::optional<std::string>& p) { return p ? Json(*p) : Json(nullptr); };
    j["outputs"] = Json{{"report", path(s.report_path)}, {"grid", path(s.grid_path)}, {"figure", path(s.figure_path)}};
    return j;
  }

  const Json& doc_;
  int n_ = 2;
  FlowOptions flow_;
  std::vector<std::string> issues_;
  std::map<std::string, Json> raw_maps_;
  std::map<std::string, SmoothMap> resolved_;
  std::set<std::string> active_, failed_;
  std::map<std::string, BallDiffeo> balls_;
  std::map<std::string, Polyline> routes_;
};

inline std::string line_context(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline Scenario parse_scenario_json(const Json& doc) { return detail::ScenarioParser(doc).parse(); }

/// Parses UTF-8 scenario text; syntax errors carry line and column.
inline Scenario parse_scenario(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError({detail::line_context(text, e.byte > 0 ? e.byte - 1 : 0) + ": " + e.what()});
  }
  return parse_scenario_json(doc);
}

inline std::string serialize_scenario(const Scenario& s) { return s.canonical.dump(2) + "\n"; }

}  // namespace diffext
