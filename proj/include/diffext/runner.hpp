#pragma once
/// Scenario execution: runs the construction named by the command, its
/// standard verification suite and the extra checks, and renders the report,
/// the deformation grid (CSV) and, in dimension 2, an SVG figure.
///
/// Exit codes: 0 every check passed, 1 a check failed, 2 schema error,
/// 3 construction error (a partial report tagged with the stage is produced).

#include "diffext/scenario.hpp"

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace diffext {

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { exit_pass = 0, exit_check_failure = 1, exit_schema = 2, exit_construction = 3 };

struct RunOptions {
  std::optional<std::uint64_t> seed;  // overrides the scenario seed
  std::optional<std::string> report_path, grid_path, figure_path;  // override the scenario outputs
  std::filesystem::path base_dir = ".";  // resolves relative fixture paths of demo scenarios
  int threads = 0;                       // 0: DIFFEXT_THREADS
};

struct RunOutcome {
  int exit_code = exit_pass;
  Json report;
  std::string grid_csv;     // empty when no grid was requested
  std::string figure_svg;   // empty when no figure was requested or n != 2
  std::vector<std::string> notes;

  /// The report without the run-dependent header.
  Json body() const {
    Json b = report;
    b.erase("header");
    return b;
  }
};

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string fmt(double v, const char* spec = "%.17g") {
  char buf[40];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

/// Boundary curves drawn in the figure: the balls before and after the map.
struct Outline {
  std::vector<std::vector<Vec>> before, after;
};

inline std::vector<Vec> circle(const BallDiffeo& b, const SmoothMap* through, int count = 256) {
  std::vector<Vec> pts;
  for (int k = 0; k <= count; ++k) {
    const double t = 2.0 * std::numbers::pi * k / count;
    Vec x = b.center + b.radius * vec({std::cos(t), std::sin(t)});
    x = b.map(x);
    pts.push_back(through ? (*through)(x) : x);
  }
  return pts;
}

/// Everything produced by one construction.
struct Built {
  SmoothMap subject;
  std::vector<SuiteEntry> suite;
  Json environment = Json::object();
  Json stages = Json::object();
  Box view;
  Outline outline;
};

inline Box hull_of(const std::vector<Box>& boxes) {
  Box b = boxes.front();
  for (const auto& x : boxes) b = Box::hull(b, x);
  return b;
}

inline Box ball_image_box(const BallDiffeo& b) {
  return *Region::image_of(b.map.node(), b.ball()).bounds();
}

inline Built build(const Scenario& s) {
  Built out;
  const PalaisOptions opts = s.palais_options();
  const int n = s.dimension;
  switch (s.command) {
    case Command::extend: {
      const BallDiffeo& H = s.extend->ball;
      PalaisPipeline p;
      try {
        p = palais_pipeline(H, s.eps, opts);
      } catch (const Error& e) {
        throw e.tagged("extend");
      }
      out.subject = p.map;
      out.suite = palais_suite(p, s.suite);
      out.environment = palais_environment(p);
      out.stages = Json{{"palais", p.to_json()}};
      const Box ball{Vec(H.center.array() - H.radius), Vec(H.center.array() + H.radius)};
      const Box image = *Region::image_of(H.map.node(), H.ball()).bounds();
      out.view = Box::hull(ball, image).padded(0.15, 2.0 * s.eps);
      if (n == 2) {
        const BallDiffeo plain{identity_map(2), H.center, H.radius, H.margin};
        out.outline.before.push_back(circle(plain, nullptr));
        out.outline.after.push_back(circle(plain, &H.map));
      }
      break;
    }
    case Command::linearize: {
      const BallDiffeo& H = s.linearize->ball;
      LinearizationResult r;
      try {
        r = local_linearize(H, opts.linearize);
      } catch (const Error& e) {
        throw e.tagged("linearize");
      }
      out.subject = r.map;
      out.suite = linearize_suite(H, r, s.suite);
      out.environment = linearize_environment(H, r);
      out.stages = Json{{"linearization", r.to_json()}};
      out.view = Box{Vec(H.center.array() - 1.25 * H.radius), Vec(H.center.array() + 1.25 * H.radius)};
      if (n == 2)
        for (double rad : {r.delta, 0.5 * H.radius, H.radius}) {
          const BallDiffeo plain{identity_map(2), H.center, rad, 0.0};
          out.outline.before.push_back(circle(plain, nullptr));
          out.outline.after.push_back(circle(plain, &r.map));
        }
      break;
    }
    case Command::glue: {
      const GlueScenario& g = *s.glue;
      GlueResult r;
      try {
        r = glue_ball_maps(g, opts);
      } catch (const Error& e) {
        throw e.tagged("glue");
      }
      out.subject = r.map;
      out.suite = glue_suite(g, s.suite);
      out.environment = glue_environment(g, r);
      out.stages = Json{{"glue", r.to_json()}};
      out.view = g.U.bounds()->padded(0.1);
      if (n == 2)
        for (const auto& p : g.pairs) {
          out.outline.before.push_back(circle(p.source, nullptr));
          out.outline.after.push_back(circle(p.target, nullptr));
        }
      break;
    }
    case Command::insert: {
      const InsertJob& job = *s.insert;
      InsertResult r;
      try {
        r = insert_inner_map(job.outer, job.inner, job.d1, job.u_inner, s.eps, opts);
      } catch (const Error& e) {
        throw e.tagged("insert");
      }
      const BallDiffeo d1 = job.d1;
      const Region u = job.u_inner ? *job.u_inner
                                   : Region::predicate(
                                         n, [d1](const Vec& x) { return inside_parametrized(d1, x); },
                                         ball_image_box(d1), "interior of D1");
      out.subject = r.map;
      out.suite = insert_suite(job.outer, job.inner, u, job.domain, s.suite);
      out.environment = Json{{"dimension", n}, {"eps", r.eps}};
      out.stages = Json{{"insert", Json{{"eps", r.eps}, {"glue", r.glue.to_json()}}}};
      out.view = *job.domain.bounds();
      if (n == 2) {
        const BallDiffeo d2{identity_map(2), job.inner.center, job.inner.radius, job.inner.margin};
        out.outline.before.push_back(circle(d1, nullptr));
        out.outline.before.push_back(circle(d2, nullptr));
        out.outline.after.push_back(circle(d1, &job.outer));
        out.outline.after.push_back(circle(d2, &job.inner.map));
      }
      break;
    }
    case Command::verify: {
      out.subject = s.verify->subject;
      out.environment = Json{{"dimension", n}};
      std::vector<Box> boxes;
      for (const auto& c : s.checks)
        if (auto b = c.spec.region.bounds()) boxes.push_back(*b);
      out.view = boxes.empty() ? Box{Vec::Constant(n, -2.0), Vec::Constant(n, 2.0)} : hull_of(boxes);
      break;
    }
    case Command::demo: throw Error(ErrorKind::parameter, "demo scenarios are run through run_demo");
  }
  for (const auto& c : s.checks) out.suite.push_back({c.spec, c.reference, std::nullopt});
  return out;
}

}  // namespace detail

/// Deformation grid: one row per lattice point of `box` with the point, its
/// image and the Jacobian determinant there.
inline std::string render_grid(const SmoothMap& f, const Box& box, int per_axis) {
  const int n = f.dim();
  std::ostringstream os;
  for (int i = 0; i < n; ++i) os << "x" << i << ",";
  for (int i = 0; i < n; ++i) os << "y" << i << ",";
  os << "detJ\n";
  for (const Vec& x : lattice_points(box, per_axis)) {
    Vec y = Vec::Constant(n, std::numeric_limits<double>::quiet_NaN());
    double det = std::numeric_limits<double>::quiet_NaN();
    try {
      auto [fy, J] = f.eval_jac(x);
      y = fy;
      det = J.determinant();
    } catch (const Error&) {
    }
    for (int i = 0; i < n; ++i) os << detail::fmt(x(i)) << ",";
    for (int i = 0; i < n; ++i) os << detail::fmt(y(i)) << ",";
    os << detail::fmt(det) << "\n";
  }
  return os.str();
}

/// SVG of a planar map: the image of a coordinate grid, ball outlines before
/// (dashed) and after (solid), and the boundary of the moved set
/// {|F(x) - x| > support_tol} traced by marching squares.
inline std::string render_figure(const SmoothMap& f, const Box& view, const detail::Outline& outline, const std::string& title,
                                 int grid_lines = 21, int support_cells = 160, double support_tol = 1e-12) {
  if (f.dim() != 2) throw Error(ErrorKind::parameter, "figure: only planar maps can be drawn");
  const double W = 800.0, pad = 20.0;
  const Vec ext = view.extent();
  const double scale = (W - 2.0 * pad) / std::max(ext(0), ext(1));
  const auto px = [&](const Vec& p) {
    return detail::fmt(pad + (p(0) - view.lo(0)) * scale, "%.2f") + "," + detail::fmt(W - pad - (p(1) - view.lo(1)) * scale, "%.2f");
  };
  const auto polyline = [&](const std::vector<Vec>& pts, const std::string& style) {
    std::string s = "<polyline fill=\"none\" " + style + " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) s += (i ? " " : "") + px(pts[i]);
    return s + "\"/>\n";
  };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n";
  os << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";
  os << "<title>" << title << "</title>\n";
  os << "<g id=\"grid\">\n";
  const int fine = 200;
  for (int axis = 0; axis < 2; ++axis)
    for (int k = 0; k < grid_lines; ++k) {
      std::vector<Vec> pts;
      for (int m = 0; m <= fine; ++m) {
        Vec x(2);
        x(axis) = view.lo(axis) + ext(axis) * k / (grid_lines - 1);
        x(1 - axis) = view.lo(1 - axis) + ext(1 - axis) * m / fine;
        pts.push_back(f(x));
      }
      os << polyline(pts, "stroke=\"#999999\" stroke-width=\"0.6\"");
    }
  os << "</g>\n<g id=\"before\">\n";
  for (const auto& c : outline.before) os << polyline(c, "stroke=\"#1f5fbf\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"");
  os << "</g>\n<g id=\"after\">\n";
  for (const auto& c : outline.after) os << polyline(c, "stroke=\"#c0392b\" stroke-width=\"1.5\"");
  os << "</g>\n<g id=\"support\" data-threshold=\"" << detail::fmt(support_tol, "%g") << "\" stroke=\"#2e8b57\" stroke-width=\"1.2\">\n";
  const int N = support_cells;
  std::vector<char> moved(static_cast<std::size_t>((N + 1) * (N + 1)));
  const auto node = [&](int i, int j) {
    return Vec(vec({view.lo(0) + ext(0) * i / N, view.lo(1) + ext(1) * j / N}));
  };
  for (int i = 0; i <= N; ++i)
    for (int j = 0; j <= N; ++j) {
      const Vec x = node(i, j);
      moved[static_cast<std::size_t>(i * (N + 1) + j)] = (f(x) - x).norm() > support_tol;
    }
  const auto at = [&](int i, int j) { return moved[static_cast<std::size_t>(i * (N + 1) + j)] != 0; };
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      const bool a = at(i, j), b = at(i + 1, j), c = at(i + 1, j + 1), d = at(i, j + 1);
      std::vector<Vec> mids;
      if (a != b) mids.push_back(0.5 * (node(i, j) + node(i + 1, j)));
      if (b != c) mids.push_back(0.5 * (node(i + 1, j) + node(i + 1, j + 1)));
      if (c != d) mids.push_back(0.5 * (node(i + 1, j + 1) + node(i, j + 1)));
      if (d != a) mids.push_back(0.5 * (node(i, j + 1) + node(i, j)));
      for (std::size_t k = 0; k + 1 < mids.size(); k += 2) {
        const std::string p = px(mids[k]), q = px(mids[k + 1]);
        const auto comma_p = p.find(','), comma_q = q.find(',');
        os << "<line x1=\"" << p.substr(0, comma_p) << "\" y1=\"" << p.substr(comma_p + 1) << "\" x2=\"" << q.substr(0, comma_q)
           << "\" y2=\"" << q.substr(comma_q + 1) << "\"/>\n";
      }
    }
  os << "</g>\n</svg>\n";
  return os.str();
}

/// Runs a parsed, non-demo scenario. Never throws for construction or check
/// failures; they are reflected in the exit code and the report.
inline RunOutcome run_scenario(Scenario s, const RunOptions& ro = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  if (ro.seed) {
    s.seed = *ro.seed;
    s.suite.seed = *ro.seed;
    s.canonical["seed"] = *ro.seed;
    for (auto& c : s.checks)
      if (c.inherits_seed) c.spec.seed = *ro.seed;
  }
  const auto grid_path = ro.grid_path ? ro.grid_path : s.grid_path;
  const auto figure_path = ro.figure_path ? ro.figure_path : s.figure_path;

  RunOutcome out;
  Json header{{"tool", "diffext"}, {"version", kToolVersion}, {"timestamp", detail::utc_timestamp()}};
  Json body;
  body["scenario"] = s.canonical;
  body["command"] = to_string(s.command);

  detail::Built built;
  double construction_time = 0.0;
  try {
    built = detail::build(s);
    construction_time = detail::seconds_since(t0);
  } catch (const Error& e) {
    construction_time = detail::seconds_since(t0);
    body["status"] = "partial";
    body["error"] = Json{{"kind", to_string(e.kind())}, {"stage", e.stage()}, {"message", e.what()}};
    body["verdict"] = "fail";
    header["wall_time"] = construction_time;
    header["stage_wall_times"] = Json{{"construction", construction_time}};
    header["threads"] = ro.threads > 0 ? ro.threads : configured_threads();
    out.report = Json{{"header", header}};
    for (const auto& [k, v] : body.items()) out.report[k] = v;
    out.exit_code = exit_construction;
    return out;
  }

  const VerificationReport rep = run_suite(built.subject, built.suite, built.environment, ro.threads);
  const Json rb = rep.body();
  body["status"] = "complete";
  body["error"] = nullptr;
  body["environment"] = rb["environment"];
  body["stages"] = built.stages;
  body["checks"] = rb["checks"];
  body["summary"] = rb["summary"];
  body["verdict"] = rb["verdict"];

  Json artifacts = Json::object();
  const Box view = s.grid_box ? *s.grid_box : built.view;
  artifacts["view"] = Json{{"lo", to_json(view.lo)}, {"hi", to_json(view.hi)}};
  if (grid_path) {
    out.grid_csv = render_grid(built.subject, view, s.grid_per_axis);
    const long rows = static_cast<long>(std::pow(s.grid_per_axis, s.dimension));
    artifacts["grid"] = Json{{"path", *grid_path}, {"rows", rows}, {"per_axis", s.grid_per_axis}};
  }
  if (figure_path) {
    if (s.dimension == 2) {
      out.figure_svg = render_figure(built.subject, view, built.outline, std::string("diffext ") + to_string(s.command));
      artifacts["figure"] = Json{{"path", *figure_path}};
    } else {
      out.notes.push_back("figure skipped: only dimension 2 can be drawn");
      artifacts["figure"] = Json{{"path", nullptr}, {"skipped", "only dimension 2 can be drawn"}};
    }
  }
  body["artifacts"] = artifacts;

  header["wall_time"] = detail::seconds_since(t0);
  header["stage_wall_times"] = Json{{"construction", construction_time}, {"verification", rep.wall_time}};
  header["check_wall_times"] = rep.header()["check_wall_times"];
  header["threads"] = rep.threads;
  out.report = Json{{"header", header}};
  for (const auto& [k, v] : body.items()) out.report[k] = v;
  out.exit_code = rep.verdict ? exit_pass : exit_check_failure;
  return out;
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::parameter, "cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream o(p, std::ios::binary);
  if (!o) throw Error(ErrorKind::parameter, "cannot write " + p.string());
  o << text;
}

inline int severity(int code) {
  switch (code) {
    case exit_construction: return 3;
    case exit_schema: return 2;
    case exit_check_failure: return 1;
    default: return 0;
  }
}

/// Runs every fixture of a demo scenario; the exit code is the most severe
/// one among the fixtures.
inline RunOutcome run_demo(const Scenario& s, const RunOptions& ro) {
  const auto t0 = std::chrono::steady_clock::now();
  RunOutcome out;
  Json runs = Json::array();
  Json times = Json::array();
  int worst = exit_pass;
  for (const auto& f : s.demo->fixtures) {
    const std::filesystem::path path = ro.base_dir / f;
    Json entry{{"fixture", f}};
    int code = exit_pass;
    try {
      Scenario sub = parse_scenario(read_text_file(path));
      if (sub.command == Command::demo) throw Error(ErrorKind::schema, path.string() + ": demo scenarios cannot nest");
      RunOptions sub_opts;
      sub_opts.seed = ro.seed;
      sub_opts.threads = ro.threads;
      sub_opts.grid_path.reset();
      sub.grid_path.reset();
      sub.figure_path.reset();
      const RunOutcome r = run_scenario(std::move(sub), sub_opts);
      code = r.exit_code;
      entry["command"] = r.report["command"];
      entry["verdict"] = r.report["verdict"];
      entry["report"] = r.body();
      times.push_back(r.report["header"]["wall_time"]);
    } catch (const Error& e) {
      code = e.kind() == ErrorKind::schema ? exit_schema : exit_construction;
      entry["verdict"] = "fail";
      entry["error"] = Json{{"kind", to_string(e.kind())}, {"message", e.what()}};
      times.push_back(nullptr);
    }
    entry["exit_code"] = code;
    if (severity(code) > severity(worst)) worst = code;
    runs.push_back(std::move(entry));
  }
  Json header{{"tool", "diffext"},
              {"version", kToolVersion},
              {"timestamp", detail::utc_timestamp()},
              {"wall_time", detail::seconds_since(t0)},
              {"fixture_wall_times", times},
              {"threads", ro.threads > 0 ? ro.threads : configured_threads()}};
  out.report = Json{{"header", header},
                    {"scenario", s.canonical},
                    {"command", "demo"},
                    {"runs", runs},
                    {"verdict", worst == exit_pass ? "pass" : "fail"}};
  out.exit_code = worst;
  return out;
}

/// Parses and runs scenario text; schema errors become exit code 2 with a
/// report carrying the issues.
inline RunOutcome run_scenario_text(const std::string& text, const RunOptions& ro = {}) {
  Scenario s;
  try {
    s = parse_scenario(text);
  } catch (const SchemaError& e) {
    RunOutcome out;
    out.exit_code = exit_schema;
    out.report = Json{{"header", Json{{"tool", "diffext"}, {"version", kToolVersion}, {"timestamp", detail::utc_timestamp()}}},
                      {"status", "rejected"},
                      {"error", Json{{"kind", "schema"}, {"issues", e.issues()}}},
                      {"verdict", "fail"}};
    return out;
  }
  return s.command == Command::demo ? run_demo(s, ro) : run_scenario(std::move(s), ro);
}

}  // namespace diffext
