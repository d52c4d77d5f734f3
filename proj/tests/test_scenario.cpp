#include "diffext/runner.hpp"

#include <gtest/gtest.h>

using namespace diffext;

namespace {

const std::string fixtures = DIFFEXT_FIXTURE_DIR;

std::string fixture(const std::string& name) { return read_text_file(fixtures + "/" + name); }

std::vector<std::string> schema_issues(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const SchemaError& e) {
    return e.issues();
  }
  return {};
}

bool mentions(const std::vector<std::string>& issues, const std::string& needle) {
  for (const auto& i : issues)
    if (i.find(needle) != std::string::npos) return true;
  return false;
}

const char* minimal_extend = R"({
  "version": "1", "command": "extend", "dimension": 2, "eps": 0.3,
  "extend": {"ball": {"map": {"family": "rotation", "angle": 0.5}}}
})";

}  // namespace

TEST(Parse, MinimalExtendFillsDefaults) {
  const Scenario s = parse_scenario(minimal_extend);
  EXPECT_EQ(s.command, Command::extend);
  EXPECT_EQ(s.dimension, 2);
  EXPECT_EQ(s.seed, 1u);
  EXPECT_EQ(s.flow.steps, 64);
  EXPECT_TRUE(s.flow.calibrate);
  ASSERT_TRUE(s.extend);
  EXPECT_EQ(s.extend->ball.radius, 1.0);
  EXPECT_EQ(s.extend->ball.margin, 0.5);
  const Json& c = s.canonical;
  EXPECT_EQ(c["flow"]["steps"], 64);
  EXPECT_EQ(c["tolerances"]["agreement"], 1e-12);
  EXPECT_EQ(c["tolerances"]["identity"], 1e-13);
  EXPECT_EQ(c["tolerances"]["roundtrip"], 1e-8);
  EXPECT_EQ(c["tolerances"]["jacobian_fd"], 1e-5);
  EXPECT_EQ(c["samples"]["roundtrip"], 10000);
  EXPECT_EQ(c["extend"]["ball"]["center"], Json::array({0.0, 0.0}));
  EXPECT_EQ(c["grid"]["per_axis"], 41);
}

TEST(Parse, MisspelledFamilyNamesThePath) {
  const auto issues = schema_issues(fixture("invalid/misspelled_family.json"));
  ASSERT_FALSE(issues.empty());
  EXPECT_TRUE(mentions(issues, "maps.H.family")) << issues.front();
  EXPECT_TRUE(mentions(issues, "rotaton"));
}

TEST(Parse, UnresolvedNamesAndCycles) {
  auto issues = schema_issues(R"({"version": "1", "command": "extend", "dimension": 2, "eps": 0.3,
    "extend": {"ball": {"map": "missing"}}})");
  EXPECT_TRUE(mentions(issues, "extend.ball.map: unresolved map name 'missing'"));
  issues = schema_issues(R"({"version": "1", "command": "extend", "dimension": 2, "eps": 0.3,
    "maps": {"a": {"compose": ["b"]}, "b": {"inverse": "a"}},
    "extend": {"ball": {"map": "a"}}})");
  EXPECT_TRUE(mentions(issues, "refers to itself"));
  issues = schema_issues(R"({"version": "1", "command": "glue", "dimension": 2, "eps": 0.3,
    "glue": {"region": {"all": 2}, "pairs": [{"source": "nope", "target": "nope", "map": {"family": "identity"}}]}})");
  EXPECT_TRUE(mentions(issues, "glue.pairs[0].source: unresolved ball name 'nope'"));
}

TEST(Parse, DimensionMismatch) {
  const auto issues = schema_issues(R"({"version": "1", "command": "extend", "dimension": 3, "eps": 0.3,
    "extend": {"ball": {"map": {"family": "affine", "matrix": [[2, 0], [0, 1]]}}}})");
  EXPECT_TRUE(mentions(issues, "extend.ball.map: dimension mismatch"));
}

TEST(Parse, UnknownFieldsAndBadValues) {
  const auto issues = schema_issues(R"({"version": "2", "command": "stretch", "dimension": 1, "colour": 3, "eps": -1,
    "flow": {"steps": 0}, "tolerances": {"agreement": -1.0}})");
  EXPECT_TRUE(mentions(issues, "colour: unknown field"));
  EXPECT_TRUE(mentions(issues, "version: unsupported"));
  EXPECT_TRUE(mentions(issues, "command: unknown command 'stretch'"));
  EXPECT_TRUE(mentions(issues, "dimension: must be in 2..8"));
  EXPECT_TRUE(mentions(issues, "flow.steps"));
  EXPECT_TRUE(mentions(issues, "tolerances.agreement"));
}

TEST(Parse, SyntaxErrorsCarryLineNumbers) {
  const auto issues = schema_issues("{\n  \"version\": \"1\",\n  \"command\": extend\n}");
  ASSERT_EQ(issues.size(), 1u);
  EXPECT_NE(issues[0].find("line 3"), std::string::npos) << issues[0];
}

TEST(Parse, ChecksNeedReferencesAndValidKinds) {
  const auto issues = schema_issues(R"({"version": "1", "command": "verify", "dimension": 2,
    "verify": {"subject": {"family": "identity"}},
    "checks": [{"kind": "agreement", "region": {"all": 2}}, {"kind": "wobble", "region": {"all": 2}},
               {"kind": "roundtrip", "region": {"ball": {"radius": 1}}, "samples": 0}]})");
  EXPECT_TRUE(mentions(issues, "checks[0].reference: required"));
  EXPECT_TRUE(mentions(issues, "checks[1].kind: unknown check kind 'wobble'"));
  EXPECT_TRUE(mentions(issues, "checks[2]: check: samples must be >= 1"));
}

TEST(Parse, FixturesRoundTrip) {
  for (const char* name : {"glue_translation_2d.json", "glue_rotation_3d.json", "extend_twist_3d.json", "insert_rotation_2d.json",
                           "verify_twist_2d.json", "linearize_poly_perturb_2d.json", "demo.json"}) {
    const Scenario a = parse_scenario(fixture(name));
    const std::string once = serialize_scenario(a);
    const Scenario b = parse_scenario(once);
    EXPECT_EQ(once, serialize_scenario(b)) << name;
  }
}

TEST(Parse, ComposeAndInverseTrees) {
  const Scenario s = parse_scenario(R"({"version": "1", "command": "verify", "dimension": 2,
    "maps": {"R": {"family": "rotation", "angle": 0.3}, "Rinv": {"inverse": "R"}, "I": {"compose": ["R", "Rinv"]}},
    "verify": {"subject": "I"}})");
  const Vec x = vec({0.4, -0.7});
  EXPECT_LE((s.maps.at("I")(x) - x).norm(), 1e-15);
}

TEST(Run, IdentityExtendPasses) {
  const RunOutcome r = run_scenario_text(fixture("extend_identity_2d.json"));
  EXPECT_EQ(r.exit_code, exit_pass);
  EXPECT_EQ(r.report["verdict"], "pass");
  EXPECT_EQ(r.report["status"], "complete");
  EXPECT_EQ(r.report["summary"]["failed"], 0);
}

TEST(Run, RotationFixtureWritesGridAndFigure) {
  const RunOutcome r = run_scenario_text(fixture("extend_rotation_2d.json"));
  ASSERT_EQ(r.exit_code, exit_pass) << r.report.dump(2);
  for (const Json& c : r.report["checks"]) EXPECT_TRUE(c["passed"].get<bool>()) << c.dump();
  std::size_t lines = 0;
  for (char ch : r.grid_csv) lines += ch == '\n';
  EXPECT_EQ(lines, 1u + 41u * 41u);
  EXPECT_EQ(r.grid_csv.substr(0, r.grid_csv.find('\n')), "x0,x1,y0,y1,detJ");
  EXPECT_EQ(r.report["artifacts"]["grid"]["rows"], 41 * 41);
  EXPECT_FALSE(r.figure_svg.empty());
  EXPECT_NE(r.figure_svg.find("<g id=\"support\""), std::string::npos);
  EXPECT_NE(r.figure_svg.find("<line"), std::string::npos);
}

TEST(Run, CrossingRoutesAreAGeometryError) {
  const RunOutcome r = run_scenario_text(fixture("invalid/glue_crossing_routes_2d.json"));
  EXPECT_EQ(r.exit_code, exit_construction);
  EXPECT_EQ(r.report["status"], "partial");
  EXPECT_EQ(r.report["error"]["kind"], "geometry");
  EXPECT_NE(r.report["error"]["stage"].get<std::string>().find("glue"), std::string::npos);
  EXPECT_NE(r.report["error"]["message"].get<std::string>().find("routes 0 and 1"), std::string::npos);
}

TEST(Run, SchemaErrorsExitWithTwo) {
  const RunOutcome r = run_scenario_text(fixture("invalid/misspelled_family.json"));
  EXPECT_EQ(r.exit_code, exit_schema);
  EXPECT_EQ(r.report["error"]["kind"], "schema");
}

TEST(Run, FailingCheckExitsWithOne) {
  const RunOutcome r = run_scenario_text(R"({"version": "1", "command": "verify", "dimension": 2,
    "verify": {"subject": {"family": "rotation", "angle": 0.1}},
    "checks": [{"kind": "identity_outside", "region": {"ball": {"radius": 1}}, "tol": 1e-13},
               {"kind": "roundtrip", "region": {"ball": {"radius": 1}}, "tol": 1e-12}]})");
  EXPECT_EQ(r.exit_code, exit_check_failure);
  EXPECT_EQ(r.report["summary"]["failed"], 1);
  EXPECT_EQ(r.report["verdict"], "fail");
}

TEST(Run, ReportsAreDeterministicApartFromTheHeader) {
  const std::string text = fixture("extend_twist_3d.json");
  const RunOutcome a = run_scenario_text(text);
  const RunOutcome b = run_scenario_text(text);
  RunOptions threaded;
  threaded.threads = 3;
  const RunOutcome c = run_scenario_text(text, threaded);
  EXPECT_EQ(a.body().dump(), b.body().dump());
  EXPECT_EQ(a.body().dump(), c.body().dump());
  EXPECT_EQ(a.report.begin().key(), "header");
  EXPECT_TRUE(a.report["header"].contains("timestamp"));
  EXPECT_EQ(a.body().dump().find("wall_time"), std::string::npos);
}

TEST(Run, SeedOverrideChangesSamplesNotVerdicts) {
  const std::string text = fixture("extend_shear_2d.json");
  const RunOutcome a = run_scenario_text(text);
  RunOptions ro;
  ro.seed = 99;
  const RunOutcome b = run_scenario_text(text, ro);
  EXPECT_EQ(a.exit_code, exit_pass);
  EXPECT_EQ(b.exit_code, exit_pass);
  EXPECT_EQ(b.report["scenario"]["seed"], 99);
  EXPECT_EQ(b.report["checks"][0]["seed"], 99);
  EXPECT_NE(a.report["checks"][0]["worst_point"], b.report["checks"][0]["worst_point"]);
}

TEST(Run, VerifyRunsScenarioChecks) {
  const RunOutcome r = run_scenario_text(fixture("verify_twist_2d.json"));
  EXPECT_EQ(r.exit_code, exit_pass) << r.report.dump(2);
  EXPECT_EQ(r.report["checks"].size(), 5u);
}

TEST(Run, FigureOnlyInThePlane) {
  RunOptions ro;
  ro.figure_path = "unused.svg";
  const RunOutcome r = run_scenario_text(fixture("extend_twist_3d.json"), ro);
  EXPECT_TRUE(r.figure_svg.empty());
  EXPECT_EQ(r.notes.size(), 1u);
}
