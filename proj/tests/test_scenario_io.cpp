#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vrb/scenario_io.hpp"
#include "vrb/sim_engine.hpp"

using namespace vrb;
using njson = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string scenario_path(const char* name) {
  return std::string(VRB_SCENARIO_DIR) + "/" + name;
}

// Minimal valid two-agent partial-mode document for mutation.
njson base_doc() {
  return njson{
      {"agents",
       {{{"mass", 1.0}, {"position", {0, 0, 1}}},
        {{"mass", 1.0}, {"position", {4, 0, 1}}}}},
      {"constraints", {{{"between", {1, 2}}, {"distance", 4.0}}}},
      {"rigidity", "partial"},
  };
}

// Expects a ValidationError whose message mentions `needle`.
void expect_invalid(const njson& doc, const std::string& needle) {
  std::string msg;
  try {
    parse_scenario(doc.dump());
  } catch (const ValidationError& e) {
    msg = e.what();
  }
  INFO("message: ", msg, " expected to mention: ", needle);
  CHECK(!msg.empty());
  CHECK(msg.find(needle) != std::string::npos);
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

int column_of(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

int call_cli(std::vector<std::string> args) {
  std::vector<char*> argv;
  args.insert(args.begin(), "vrb_sim");
  argv.reserve(args.size());
  for (std::string& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("vrb_io_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

TEST_CASE("normalized dumps are a parsing fixed point for every bundled file") {
  const char* files[] = {
      "triangle_establish.json", "triangle_waypoint.json",
      "triangle_mission.json",   "cube_establish.json",
      "cube_waypoint.json",      "two_agent_line.json",
      "four_agent_square.json",  "five_agent_pyramid.json",
      "six_agent_hexagon.json",
  };
  for (const char* f : files) {
    INFO("file: ", f);
    const Scenario s = load_scenario_file(scenario_path(f));
    const std::string once = dump_scenario(s);
    const Scenario s2 = parse_scenario(once);
    CHECK(dump_scenario(s2) == once);
    CHECK(s2.agent_count() == s.agent_count());
    CHECK(s2.constraints.size() == s.constraints.size());
    CHECK(s2.waypoints.size() == s.waypoints.size());
  }
}

TEST_CASE("defaults fill every optional field") {
  const Scenario s = parse_scenario(base_doc().dump());
  CHECK(s.gains.alpha == 2.0);
  CHECK(s.gains.beta == 2.0);
  CHECK(s.gains.gamma == 0.02);
  CHECK(s.separation_floor == 1e-6);
  CHECK(s.gravity == 9.81);
  CHECK(s.control_mode == ControlMode::wrench);
  CHECK(s.allocation == AllocationMode::min_norm_wrench);
  CHECK(s.guidance.translation.q_state == 0.4);
  CHECK(s.guidance.translation.q_rate == 2.5);
  CHECK(s.guidance.attitude.q_state == 1.0);
  CHECK(s.guidance.attitude.q_rate == 2.0);
  CHECK(s.guidance.reschedule_threshold == 0.05);
  CHECK(s.sim.dt == 0.01);
  CHECK(s.sim.t_end == 20.0);
  CHECK(s.sim.establish_tol == 0.05);
  CHECK(s.sim.establish_hold == 1.0);
  CHECK(s.sim.wp_pos_tol == 0.1);
  CHECK(s.sim.wp_vel_tol == 0.05);
  CHECK(s.sim.wp_att_tol_deg == 1.0);
  CHECK(s.sim.wp_rate_tol_dps == 0.5);
  CHECK(s.sim.flythrough_radius == 0.5);
  CHECK(s.agents[0].velocity.norm() == 0.0);
  CHECK(s.agents[0].establishment_input.norm() == 0.0);
}

TEST_CASE("comments are accepted and malformed JSON is not") {
  const std::string commented = R"({
    // two hovering agents
    "agents": [
      {"mass": 1, "position": [0, 0, 1]},  // left
      {"mass": 1, "position": [4, 0, 1]}   // right
    ],
    "constraints": [{"between": [1, 2], "distance": 4}],
    "rigidity": "partial"
  })";
  CHECK(parse_scenario(commented).agent_count() == 2);

  CHECK_THROWS_AS(parse_scenario("{\"agents\": ["), ParseError);
  CHECK_THROWS_AS(parse_scenario("not json at all"), ParseError);
}

TEST_CASE("validation reports the offending field path") {
  // Field paths are 1-based to match the file's agent numbering.
  {
    njson d = base_doc();
    d["agents"][0].erase("mass");
    expect_invalid(d, "agents[1].mass");
  }
  {
    njson d = base_doc();
    d["agents"][1]["colour"] = "red";
    expect_invalid(d, "agents[2].colour");
  }
  {
    njson d = base_doc();
    d["thrust"] = 3.0;  // unknown top-level key
    expect_invalid(d, "thrust");
  }
  {
    njson d = base_doc();
    d["agents"] = njson::array();
    expect_invalid(d, "at least one agent");
  }
  {
    njson d = base_doc();
    d["constraints"][0]["between"] = {2, 1};
    expect_invalid(d, "i < j");
  }
  {
    njson d = base_doc();
    d["constraints"].push_back(d["constraints"][0]);
    expect_invalid(d, "duplicate pair (1, 2)");
  }
  {
    njson d = base_doc();
    d["constraints"][0]["distance"] =
        njson{{"from", {1, 5}}, {"values", {4, 8}}};
    expect_invalid(d, "first breakpoint must be 0");
  }
  {
    njson d = base_doc();
    d["constraints"][0]["distance"] =
        njson{{"from", {0, 5, 5}}, {"values", {4, 8, 4}}};
    expect_invalid(d, "strictly increasing");
  }
  {
    njson d = base_doc();
    d["waypoints"] = {{{"position", {1, 2, 3}}}};
    expect_invalid(d, "required when waypoints are present");
  }
  {
    njson d = base_doc();
    d["frame"] = {{"x_axis_agent", 1}, {"y_axis_pair", {1, 2}}};
    d["waypoints"] = {{{"position", {1, 2, 3}},
                       {"velocity", {0, 0, 0}},
                       {"hold", "fly_through"}}};
    expect_invalid(d, "nonzero crossing velocity");
  }
}

TEST_CASE("rigidity validation runs against the initial geometry") {
  // Equilateral triangle, full mode, one constraint short.
  njson tri{
      {"agents",
       {{{"mass", 1.0}, {"position", {0, 0, 0}}},
        {{"mass", 1.0}, {"position", {4, 0, 0}}},
        {{"mass", 1.0}, {"position", {2, 3.4641016151377544, 0}}}}},
      {"constraints",
       {{{"between", {1, 2}}, {"distance", 4.0}},
        {{"between", {1, 3}}, {"distance", 4.0}}}},
  };
  expect_invalid(tri, "full rigidity needs exactly 3N-6 = 3");

  // Right count but collinear start: the Jacobian cannot certify rigidity.
  njson line = tri;
  line["agents"][2]["position"] = {8, 0, 0};
  line["constraints"].push_back(
      njson{{"between", {2, 3}}, {"distance", 4.0}});
  expect_invalid(line, "not rigid at the initial geometry");

  // Partial mode with dependent rows at the starting shape.
  njson dep = line;
  dep["rigidity"] = "partial";
  expect_invalid(dep, "dependent constraints at the initial geometry");

  // The equilateral version with all three edges passes full validation.
  njson good = tri;
  good["constraints"].push_back(
      njson{{"between", {2, 3}}, {"distance", 4.0}});
  CHECK(parse_scenario(good.dump()).rigidity == RigidityMode::full);
}

TEST_CASE("CSV logs round trip their numbers") {
  TempDir tmp;
  Scenario sc = parse_scenario(base_doc().dump());
  sc.sim.t_end = 0.5;
  const SimLog log = Simulator(sc).run_mission();
  write_log(log, (tmp.path / "out").string());

  for (const char* f : {"agents.csv", "constraints.csv", "vrb.csv",
                        "inputs.csv"}) {
    CHECK(fs::exists(tmp.path / "out" / f));
  }
  CHECK(fs::exists(tmp.path / "out" / "audit.txt"));

  const auto vrb_lines = read_lines(tmp.path / "out" / "vrb.csv");
  REQUIRE(static_cast<int>(vrb_lines.size()) == log.rows() + 1);
  const auto header = split_csv(vrb_lines[0]);
  const int t_col = column_of(header, "t");
  const int z_col = column_of(header, "r_cm_z");
  const int drift_col = column_of(header, "quat_drift");
  REQUIRE(t_col >= 0);
  REQUIRE(z_col >= 0);
  REQUIRE(drift_col >= 0);

  // Twelve significant digits in, at least nine back out.
  for (int k : {1, log.rows() - 1}) {
    const auto row = split_csv(vrb_lines[k + 1]);
    CHECK(std::abs(std::stod(row[t_col]) - log.t[k]) <= 1e-9);
    const double z = log.r_cm[k][2];
    CHECK(std::abs(std::stod(row[z_col]) - z) <=
          1e-9 * std::max(1.0, std::abs(z)));
  }

  const auto con_lines = read_lines(tmp.path / "out" / "constraints.csv");
  CHECK(split_csv(con_lines[0])[1] == "c_1_2");
  const auto in_lines = read_lines(tmp.path / "out" / "inputs.csv");
  CHECK(column_of(split_csv(in_lines[0]), "agent1_input_mag") >= 0);

  // A zero-length horizon still produces headers.
  Scenario empty = parse_scenario(base_doc().dump());
  empty.sim.t_end = 0.0;
  const SimLog none = Simulator(empty).run_mission();
  CHECK(none.rows() == 0);
  write_log(none, (tmp.path / "empty").string());
  CHECK(read_lines(tmp.path / "empty" / "vrb.csv").size() == 1);
  CHECK(read_lines(tmp.path / "empty" / "constraints.csv").size() == 1);
}

TEST_CASE("command line drives missions end to end") {
  TempDir tmp;
  const std::string out = (tmp.path / "run").string();

  // A completing mission exits 0 and writes the full log set.
  CHECK(call_cli({"run", scenario_path("two_agent_line.json"), "--out", out}) ==
        0);
  for (const char* f : {"agents.csv", "constraints.csv", "vrb.csv",
                        "inputs.csv", "audit.txt"}) {
    CHECK(fs::exists(fs::path(out) / f));
  }

  // --dt override lands in the log cadence.
  const std::string out2 = (tmp.path / "coarse").string();
  CHECK(call_cli({"run", scenario_path("two_agent_line.json"), "--out", out2,
                  "--dt", "0.02"}) == 0);
  const auto lines = read_lines(fs::path(out2) / "vrb.csv");
  CHECK(std::stod(split_csv(lines[2])[0]) == doctest::Approx(0.02));

  // --seed-overrides is a merge patch applied before validation; cutting the
  // horizon below convergence makes the run exit 2 (incomplete).
  const std::string out3 = (tmp.path / "short").string();
  CHECK(call_cli({"run", scenario_path("two_agent_line.json"), "--out", out3,
                  "--seed-overrides", R"({"sim":{"t_end":0.5}})"}) == 2);
  CHECK(read_lines(fs::path(out3) / "vrb.csv").size() == 52);  // 50 + final

  // Missing required options and invalid files exit 1.
  CHECK(call_cli({"run", scenario_path("two_agent_line.json")}) == 1);
  const std::string bad = (tmp.path / "bad.json").string();
  {
    njson d = base_doc();
    d["constraints"][0]["between"] = {2, 1};
    std::ofstream(bad) << d.dump();
  }
  CHECK(call_cli({"run", bad, "--out", (tmp.path / "nope").string()}) == 1);
  CHECK(call_cli({"check", bad}) == 1);

  // check reports rigidity without simulating.
  CHECK(call_cli({"check", scenario_path("triangle_establish.json")}) == 0);
  CHECK(call_cli({"check", scenario_path("cube_establish.json")}) == 0);

  // sweep fans one run out per value into derived directories.
  const std::string sweep_out = (tmp.path / "sweep").string();
  CHECK(call_cli({"sweep", scenario_path("two_agent_line.json"), "--param",
                  "sim.t_end", "--values", "14", "16", "--out", sweep_out}) ==
        0);
  CHECK(fs::exists(fs::path(sweep_out) / "sim-t_end-14" / "audit.txt"));
  CHECK(fs::exists(fs::path(sweep_out) / "sim-t_end-16" / "audit.txt"));
}
