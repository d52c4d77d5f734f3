// diffext command-line tool: runs a scenario and writes its report, grid and figure.
//
//   diffext extend|linearize|glue|insert|verify|demo --scenario <path>
//           [--report <path>] [--grid <path>] [--figure <path>] [--seed <int>]
//
// DIFFEXT_THREADS sets the number of verification workers.

#include "diffext/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace diffext;

struct Invocation {
  std::string scenario;
  std::string report, grid, figure;
  std::optional<std::uint64_t> seed;
};

void print_summary(const std::string& command, const RunOutcome& r) {
  const Json& rep = r.report;
  if (rep.contains("checks"))
    for (const Json& c : rep.at("checks")) {
      std::cerr << (c.at("passed").get<bool>() ? "PASS " : "FAIL ") << c.at("name").get<std::string>() << "  worst="
                << c.at("worst_value").dump() << "  tol=" << c.at("tol").dump() << "\n";
    }
  if (rep.contains("runs"))
    for (const Json& run : rep.at("runs"))
      std::cerr << (run.at("exit_code").get<int>() == 0 ? "PASS " : "FAIL ") << run.at("fixture").get<std::string>() << "\n";
  if (rep.contains("error") && rep.at("error").is_object()) {
    const Json& e = rep.at("error");
    if (e.contains("issues"))
      for (const Json& i : e.at("issues")) std::cerr << "schema error: " << i.get<std::string>() << "\n";
    else
      std::cerr << e.at("kind").get<std::string>() << " error [" << e.value("stage", "") << "]: " << e.value("message", "") << "\n";
  }
  for (const auto& n : r.notes) std::cerr << "note: " << n << "\n";
  std::cerr << command << ": " << rep.value("verdict", "fail") << " (exit " << r.exit_code << ")\n";
}

int run(const std::string& command, const Invocation& inv) {
  std::string path = inv.scenario;
  if (path.empty()) {
    if (command != "demo") {
      std::cerr << command << ": --scenario is required\n";
      return exit_schema;
    }
    path = std::string(DIFFEXT_FIXTURE_DIR) + "/demo.json";
  }
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_schema;
  }

  RunOptions ro;
  ro.seed = inv.seed;
  ro.base_dir = std::filesystem::path(path).parent_path();
  if (!inv.grid.empty()) ro.grid_path = inv.grid;
  if (!inv.figure.empty()) ro.figure_path = inv.figure;

  RunOutcome out;
  std::optional<std::string> report_path = inv.report.empty() ? std::nullopt : std::optional<std::string>(inv.report);
  try {
    const Scenario s = parse_scenario(text);
    if (to_string(s.command) != command)
      throw SchemaError({std::string("command: scenario command '") + to_string(s.command) + "' does not match '" + command + "'"});
    if (!report_path) report_path = s.report_path;
    out = s.command == Command::demo ? run_demo(s, ro) : run_scenario(s, ro);
    if (!out.grid_csv.empty()) write_text_file(out.report["artifacts"]["grid"]["path"].get<std::string>(), out.grid_csv);
    if (!out.figure_svg.empty()) write_text_file(out.report["artifacts"]["figure"]["path"].get<std::string>(), out.figure_svg);
  } catch (const SchemaError& e) {
    out = RunOutcome{};
    out.exit_code = exit_schema;
    out.report = Json{{"header", Json{{"tool", "diffext"}, {"version", kToolVersion}, {"timestamp", detail::utc_timestamp()}}},
                      {"status", "rejected"},
                      {"error", Json{{"kind", "schema"}, {"issues", e.issues()}}},
                      {"verdict", "fail"}};
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return exit_construction;
  }

  const std::string dump = out.report.dump(2) + "\n";
  if (report_path) {
    try {
      write_text_file(*report_path, dump);
    } catch (const Error& e) {
      std::cerr << e.what() << "\n";
      return exit_construction;
    }
  } else {
    std::cout << dump;
  }
  print_summary(command, out);
  return out.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffext: explicit global diffeomorphisms of R^n from ball diffeomorphisms, with numerical verification"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;
  const char* descriptions[][2] = {{"extend", "extend a ball diffeomorphism to R^n"},
                                   {"linearize", "make a ball diffeomorphism linear near its centre"},
                                   {"glue", "glue finitely many ball maps into one diffeomorphism"},
                                   {"insert", "insert an inner ball map into an outer diffeomorphism"},
                                   {"verify", "run checks on a map"},
                                   {"demo", "run the shipped worked examples"}};
  std::vector<CLI::App*> subs;
  for (const auto& d : descriptions) {
    CLI::App* sub = app.add_subcommand(d[0], d[1]);
    auto* sc = sub->add_option("--scenario", inv.scenario, "scenario file (JSON)");
    if (std::string(d[0]) != "demo") sc->required();
    sub->add_option("--report", inv.report, "report path (default: scenario outputs.report, else stdout)");
    sub->add_option("--grid", inv.grid, "deformation grid CSV path");
    sub->add_option("--figure", inv.figure, "SVG figure path (dimension 2)");
    sub->add_option("--seed", seed, "override the scenario seed")->check(CLI::NonNegativeNumber);
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_schema;
  }
  for (CLI::App* sub : subs)
    if (sub->parsed()) {
      if (sub->count("--seed")) inv.seed = seed;
      return run(sub->get_name(), inv);
    }
  return exit_schema;
}
