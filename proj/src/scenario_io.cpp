#include "vrb/scenario_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vrb/errors.hpp"

namespace vrb {

namespace {

using njson = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ValidationError(path, what);
}

void check_keys(const njson& o, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& item : o.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) fail(path + "." + item.key(), "unknown field");
  }
}

double as_number(const njson& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

int as_index(const njson& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

bool as_bool(const njson& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  return j.get<bool>();
}

std::string as_string(const njson& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

Vec3 as_vec3(const njson& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) fail(path, "expected [x, y, z]");
  Vec3 v;
  for (int k = 0; k < 3; ++k) v(k) = as_number(j[k], path);
  return v;
}

double get_number(const njson& o, const std::string& path, const char* key,
                  double fallback) {
  if (!o.contains(key)) return fallback;
  return as_number(o.at(key), path + "." + key);
}

PiecewiseConstant as_schedule(const njson& j, const std::string& path) {
  if (j.is_number()) {
    const double d = j.get<double>();
    if (!(d > 0.0)) fail(path, "distance must be positive");
    return PiecewiseConstant::constant(d);
  }
  if (!j.is_object()) fail(path, "expected a number or {from, values}");
  check_keys(j, path, {"from", "values"});
  if (!j.contains("from") || !j.contains("values")) {
    fail(path, "schedule needs both 'from' and 'values'");
  }
  const njson& from = j.at("from");
  const njson& values = j.at("values");
  if (!from.is_array() || !values.is_array() || from.empty() ||
      from.size() != values.size()) {
    fail(path, "'from' and 'values' must be equal-length non-empty arrays");
  }
  std::vector<double> ts, ds;
  for (std::size_t k = 0; k < from.size(); ++k) {
    ts.push_back(as_number(from[k], path + ".from"));
    ds.push_back(as_number(values[k], path + ".values"));
    if (!(ds.back() > 0.0)) fail(path + ".values", "distances must be positive");
  }
  if (ts[0] != 0.0) fail(path + ".from", "first breakpoint must be 0");
  for (std::size_t k = 1; k < ts.size(); ++k) {
    if (!(ts[k] > ts[k - 1])) {
      fail(path + ".from", "breakpoints must be strictly increasing");
    }
  }
  return PiecewiseConstant(ts, ds);
}

ChannelWeights as_weights(const njson& j, const std::string& path,
                          ChannelWeights fallback) {
  check_keys(j, path, {"q_state", "q_rate", "r"});
  ChannelWeights w = fallback;
  w.q_state = get_number(j, path, "q_state", w.q_state);
  w.q_rate = get_number(j, path, "q_rate", w.q_rate);
  w.r = get_number(j, path, "r", w.r);
  if (w.q_state < 0.0 || w.q_rate < 0.0) fail(path, "state weights must be >= 0");
  if (!(w.r > 0.0)) fail(path, "input weight r must be > 0");
  return w;
}

std::string pair_text(int i1, int j1) {
  return "(" + std::to_string(i1) + ", " + std::to_string(j1) + ")";
}

Scenario parse_document(const njson& doc) {
  if (!doc.is_object()) fail("$", "top level must be an object");
  check_keys(doc, "$",
             {"name", "gravity", "agents", "constraints", "baumgarte",
              "separation_floor", "rigidity", "frame", "control", "waypoints",
              "sim"});

  Scenario s;
  if (doc.contains("name")) s.name = as_string(doc.at("name"), "name");
  s.gravity = get_number(doc, "$", "gravity", kDefaultGravity);
  if (s.gravity < 0.0) fail("gravity", "must be >= 0");

  if (!doc.contains("agents") || !doc.at("agents").is_array() ||
      doc.at("agents").empty()) {
    fail("agents", "at least one agent is required");
  }
  const int n = static_cast<int>(doc.at("agents").size());
  for (int i = 0; i < n; ++i) {
    const std::string path = "agents[" + std::to_string(i + 1) + "]";
    const njson& a = doc.at("agents")[i];
    if (!a.is_object()) fail(path, "expected an object");
    check_keys(a, path, {"mass", "position", "velocity", "establishment_input"});
    AgentSpec spec;
    if (!a.contains("mass")) fail(path + ".mass", "required");
    spec.mass = as_number(a.at("mass"), path + ".mass");
    if (!(spec.mass > 0.0)) fail(path + ".mass", "must be > 0");
    if (!a.contains("position")) fail(path + ".position", "required");
    spec.position = as_vec3(a.at("position"), path + ".position");
    if (a.contains("velocity")) {
      spec.velocity = as_vec3(a.at("velocity"), path + ".velocity");
    }
    if (a.contains("establishment_input")) {
      spec.establishment_input =
          as_vec3(a.at("establishment_input"), path + ".establishment_input");
    }
    s.agents.push_back(spec);
  }

  if (doc.contains("baumgarte")) {
    const njson& g = doc.at("baumgarte");
    if (!g.is_object()) fail("baumgarte", "expected an object");
    check_keys(g, "baumgarte", {"alpha", "beta", "gamma"});
    s.gains.alpha = get_number(g, "baumgarte", "alpha", s.gains.alpha);
    s.gains.beta = get_number(g, "baumgarte", "beta", s.gains.beta);
    s.gains.gamma = get_number(g, "baumgarte", "gamma", s.gains.gamma);
    if (s.gains.alpha < 0.0 || s.gains.beta < 0.0 || s.gains.gamma < 0.0) {
      fail("baumgarte", "gains must be >= 0");
    }
  }
  s.separation_floor = get_number(doc, "$", "separation_floor", 1e-6);
  if (!(s.separation_floor > 0.0)) fail("separation_floor", "must be > 0");

  if (doc.contains("rigidity")) {
    const std::string r = as_string(doc.at("rigidity"), "rigidity");
    if (r == "full") {
      s.rigidity = RigidityMode::full;
    } else if (r == "partial") {
      s.rigidity = RigidityMode::partial;
    } else {
      fail("rigidity", "expected \"full\" or \"partial\"");
    }
  }

  if (doc.contains("constraints")) {
    if (!doc.at("constraints").is_array()) fail("constraints", "expected an array");
    for (std::size_t k = 0; k < doc.at("constraints").size(); ++k) {
      const std::string path = "constraints[" + std::to_string(k + 1) + "]";
      const njson& c = doc.at("constraints")[k];
      if (!c.is_object()) fail(path, "expected an object");
      check_keys(c, path, {"between", "distance"});
      if (!c.contains("between")) fail(path + ".between", "required");
      const njson& b = c.at("between");
      if (!b.is_array() || b.size() != 2) {
        fail(path + ".between", "expected [i, j]");
      }
      const int i1 = as_index(b[0], path + ".between");
      const int j1 = as_index(b[1], path + ".between");
      if (i1 < 1 || i1 > n || j1 < 1 || j1 > n) {
        fail(path + ".between", "agent index out of range 1.." + std::to_string(n));
      }
      if (i1 >= j1) fail(path + ".between", "agents must satisfy i < j");
      for (const auto& prev : s.constraints) {
        if (prev.agent_i == i1 - 1 && prev.agent_j == j1 - 1) {
          fail(path + ".between", "duplicate pair " + pair_text(i1, j1));
        }
      }
      if (!c.contains("distance")) fail(path + ".distance", "required");
      DistanceConstraint dc;
      dc.agent_i = i1 - 1;
      dc.agent_j = j1 - 1;
      dc.desired_distance = as_schedule(c.at("distance"), path + ".distance");
      s.constraints.push_back(dc);
    }
  }

  if (doc.contains("frame")) {
    const njson& f = doc.at("frame");
    if (!f.is_object()) fail("frame", "expected an object");
    check_keys(f, "frame", {"x_axis_agent", "y_axis_pair"});
    if (!f.contains("x_axis_agent")) fail("frame.x_axis_agent", "required");
    if (!f.contains("y_axis_pair")) fail("frame.y_axis_pair", "required");
    FrameSpec spec;
    const int x1 = as_index(f.at("x_axis_agent"), "frame.x_axis_agent");
    if (x1 < 1 || x1 > n) fail("frame.x_axis_agent", "agent index out of range");
    const njson& p = f.at("y_axis_pair");
    if (!p.is_array() || p.size() != 2) {
      fail("frame.y_axis_pair", "expected [from, to]");
    }
    const int a1 = as_index(p[0], "frame.y_axis_pair");
    const int b1 = as_index(p[1], "frame.y_axis_pair");
    if (a1 < 1 || a1 > n || b1 < 1 || b1 > n) {
      fail("frame.y_axis_pair", "agent index out of range");
    }
    if (a1 == b1) fail("frame.y_axis_pair", "agents must be distinct");
    spec.x_axis_agent = x1 - 1;
    spec.y_axis_from = a1 - 1;
    spec.y_axis_to = b1 - 1;
    s.frame = spec;
  }

  if (doc.contains("control")) {
    const njson& c = doc.at("control");
    if (!c.is_object()) fail("control", "expected an object");
    check_keys(c, "control",
               {"mode", "allocation", "translation_weights", "attitude_weights",
                "reschedule_threshold"});
    if (c.contains("mode")) {
      const std::string m = as_string(c.at("mode"), "control.mode");
      if (m == "wrench") {
        s.control_mode = ControlMode::wrench;
      } else if (m == "local") {
        s.control_mode = ControlMode::local;
      } else {
        fail("control.mode", "expected \"wrench\" or \"local\"");
      }
    }
    if (c.contains("allocation")) {
      const std::string a = as_string(c.at("allocation"), "control.allocation");
      if (a == "min_norm_wrench") {
        s.allocation = AllocationMode::min_norm_wrench;
      } else if (a == "per_agent_torque") {
        s.allocation = AllocationMode::per_agent_torque;
      } else {
        fail("control.allocation",
             "expected \"min_norm_wrench\" or \"per_agent_torque\"");
      }
    }
    if (c.contains("translation_weights")) {
      s.guidance.translation =
          as_weights(c.at("translation_weights"), "control.translation_weights",
                     s.guidance.translation);
    }
    if (c.contains("attitude_weights")) {
      s.guidance.attitude =
          as_weights(c.at("attitude_weights"), "control.attitude_weights",
                     s.guidance.attitude);
    }
    s.guidance.reschedule_threshold =
        get_number(c, "control", "reschedule_threshold",
                   s.guidance.reschedule_threshold);
    if (!(s.guidance.reschedule_threshold > 0.0)) {
      fail("control.reschedule_threshold", "must be > 0");
    }
  }

  if (doc.contains("waypoints")) {
    if (!doc.at("waypoints").is_array()) fail("waypoints", "expected an array");
    for (std::size_t k = 0; k < doc.at("waypoints").size(); ++k) {
      const std::string path = "waypoints[" + std::to_string(k + 1) + "]";
      const njson& w = doc.at("waypoints")[k];
      if (!w.is_object()) fail(path, "expected an object");
      check_keys(w, path,
                 {"position", "velocity", "attitude_deg", "rates_dps", "hold",
                  "await_schedule"});
      Waypoint wp;
      if (!w.contains("position")) fail(path + ".position", "required");
      wp.r_cm_des = as_vec3(w.at("position"), path + ".position");
      if (w.contains("velocity")) {
        wp.v_cm_des = as_vec3(w.at("velocity"), path + ".velocity");
      }
      if (w.contains("attitude_deg")) {
        wp.sigma_des_deg = as_vec3(w.at("attitude_deg"), path + ".attitude_deg");
      }
      if (w.contains("rates_dps")) {
        wp.omega_b_des_dps = as_vec3(w.at("rates_dps"), path + ".rates_dps");
      }
      if (w.contains("hold")) {
        const std::string h = as_string(w.at("hold"), path + ".hold");
        if (h == "stop") {
          wp.hold = WaypointHold::stop;
        } else if (h == "fly_through") {
          wp.hold = WaypointHold::fly_through;
        } else {
          fail(path + ".hold", "expected \"stop\" or \"fly_through\"");
        }
      }
      if (w.contains("await_schedule")) {
        wp.await_schedule =
            as_bool(w.at("await_schedule"), path + ".await_schedule");
      }
      if (wp.hold == WaypointHold::fly_through && wp.v_cm_des.norm() == 0.0) {
        fail(path + ".velocity",
             "fly_through waypoint needs a nonzero crossing velocity");
      }
      s.waypoints.push_back(wp);
    }
  }

  if (doc.contains("sim")) {
    const njson& c = doc.at("sim");
    if (!c.is_object()) fail("sim", "expected an object");
    check_keys(c, "sim",
               {"dt", "t_end", "establish_tol", "establish_hold", "wp_pos_tol",
                "wp_vel_tol", "wp_att_tol_deg", "wp_rate_tol_dps",
                "flythrough_radius"});
    SimConfig& sc = s.sim;
    sc.dt = get_number(c, "sim", "dt", sc.dt);
    sc.t_end = get_number(c, "sim", "t_end", sc.t_end);
    sc.establish_tol = get_number(c, "sim", "establish_tol", sc.establish_tol);
    sc.establish_hold = get_number(c, "sim", "establish_hold", sc.establish_hold);
    sc.wp_pos_tol = get_number(c, "sim", "wp_pos_tol", sc.wp_pos_tol);
    sc.wp_vel_tol = get_number(c, "sim", "wp_vel_tol", sc.wp_vel_tol);
    sc.wp_att_tol_deg = get_number(c, "sim", "wp_att_tol_deg", sc.wp_att_tol_deg);
    sc.wp_rate_tol_dps =
        get_number(c, "sim", "wp_rate_tol_dps", sc.wp_rate_tol_dps);
    sc.flythrough_radius =
        get_number(c, "sim", "flythrough_radius", sc.flythrough_radius);
    if (!(sc.dt > 0.0)) fail("sim.dt", "must be > 0");
    if (sc.t_end < 0.0) fail("sim.t_end", "must be >= 0");
    if (!(sc.establish_tol > 0.0)) fail("sim.establish_tol", "must be > 0");
    if (sc.establish_hold < 0.0) fail("sim.establish_hold", "must be >= 0");
    if (!(sc.wp_pos_tol > 0.0) || !(sc.wp_vel_tol > 0.0) ||
        !(sc.wp_att_tol_deg > 0.0) || !(sc.wp_rate_tol_dps > 0.0) ||
        !(sc.flythrough_radius > 0.0)) {
      fail("sim", "tolerances must be > 0");
    }
  }

  if (!s.waypoints.empty() && !s.frame.has_value()) {
    fail("frame", "required when waypoints are present");
  }

  // Rigidity at the initial geometry, first schedule segment.
  try {
    const RigidityReport rep =
        rigidity_check(s.make_constraint_set(), s.initial_particles());
    const int m = static_cast<int>(s.constraints.size());
    if (s.rigidity == RigidityMode::full) {
      if (m != rep.required_rank) {
        fail("constraints", "full rigidity needs exactly 3N-6 = " +
                                std::to_string(rep.required_rank) +
                                " constraints, got " + std::to_string(m));
      }
      if (rep.rank != rep.required_rank || rep.is_overconstrained) {
        fail("constraints", "not rigid at the initial geometry (rank " +
                                std::to_string(rep.rank) + " / required " +
                                std::to_string(rep.required_rank) + ")");
      }
    } else {
      if (rep.rank != m) {
        fail("constraints",
             "dependent constraints at the initial geometry (rank " +
                 std::to_string(rep.rank) + " of " + std::to_string(m) + ")");
      }
    }
  } catch (const DegenerateGeometry& e) {
    fail("agents", e.what());
  }

  return s;
}

njson schedule_json(const PiecewiseConstant& p) {
  njson from = njson::array(), values = njson::array();
  for (int k = 0; k < p.segment_count(); ++k) {
    from.push_back(p.segment_start(k));
    values.push_back(p.segment_value(k));
  }
  return njson{{"from", from}, {"values", values}};
}

njson vec3_json(const Vec3& v) { return njson{v(0), v(1), v(2)}; }

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

void write_line(std::ofstream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot open " + p.string() + " for writing");
  return out;
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  njson doc;
  try {
    doc = njson::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what());
  }
  return parse_document(doc);
}

Scenario load_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

std::string dump_scenario(const Scenario& s) {
  njson doc;
  doc["name"] = s.name;
  doc["gravity"] = s.gravity;
  doc["agents"] = njson::array();
  for (const auto& a : s.agents) {
    doc["agents"].push_back(njson{{"mass", a.mass},
                                  {"position", vec3_json(a.position)},
                                  {"velocity", vec3_json(a.velocity)},
                                  {"establishment_input",
                                   vec3_json(a.establishment_input)}});
  }
  doc["constraints"] = njson::array();
  for (const auto& c : s.constraints) {
    doc["constraints"].push_back(
        njson{{"between", njson{c.agent_i + 1, c.agent_j + 1}},
              {"distance", schedule_json(c.desired_distance)}});
  }
  doc["baumgarte"] = njson{{"alpha", s.gains.alpha},
                           {"beta", s.gains.beta},
                           {"gamma", s.gains.gamma}};
  doc["separation_floor"] = s.separation_floor;
  doc["rigidity"] = s.rigidity == RigidityMode::full ? "full" : "partial";
  if (s.frame.has_value()) {
    doc["frame"] = njson{
        {"x_axis_agent", s.frame->x_axis_agent + 1},
        {"y_axis_pair", njson{s.frame->y_axis_from + 1, s.frame->y_axis_to + 1}}};
  }
  doc["control"] = njson{
      {"mode", s.control_mode == ControlMode::wrench ? "wrench" : "local"},
      {"allocation", s.allocation == AllocationMode::min_norm_wrench
                         ? "min_norm_wrench"
                         : "per_agent_torque"},
      {"translation_weights", njson{{"q_state", s.guidance.translation.q_state},
                                    {"q_rate", s.guidance.translation.q_rate},
                                    {"r", s.guidance.translation.r}}},
      {"attitude_weights", njson{{"q_state", s.guidance.attitude.q_state},
                                 {"q_rate", s.guidance.attitude.q_rate},
                                 {"r", s.guidance.attitude.r}}},
      {"reschedule_threshold", s.guidance.reschedule_threshold}};
  doc["waypoints"] = njson::array();
  for (const auto& w : s.waypoints) {
    doc["waypoints"].push_back(njson{
        {"position", vec3_json(w.r_cm_des)},
        {"velocity", vec3_json(w.v_cm_des)},
        {"attitude_deg", vec3_json(w.sigma_des_deg)},
        {"rates_dps", vec3_json(w.omega_b_des_dps)},
        {"hold", w.hold == WaypointHold::stop ? "stop" : "fly_through"},
        {"await_schedule", w.await_schedule}});
  }
  doc["sim"] = njson{{"dt", s.sim.dt},
                     {"t_end", s.sim.t_end},
                     {"establish_tol", s.sim.establish_tol},
                     {"establish_hold", s.sim.establish_hold},
                     {"wp_pos_tol", s.sim.wp_pos_tol},
                     {"wp_vel_tol", s.sim.wp_vel_tol},
                     {"wp_att_tol_deg", s.sim.wp_att_tol_deg},
                     {"wp_rate_tol_dps", s.sim.wp_rate_tol_dps},
                     {"flythrough_radius", s.sim.flythrough_radius}};
  return doc.dump(2) + "\n";
}

void write_log(const SimLog& log, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const int n = log.agent_count;

  {
    auto out = open_out(fs::path(out_dir) / "agents.csv");
    std::vector<std::string> h{"t"};
    for (int i = 1; i <= n; ++i) {
      const std::string a = "agent" + std::to_string(i) + "_";
      for (const char* c : {"rx", "ry", "rz", "vx", "vy", "vz", "fext_x",
                            "fext_y", "fext_z", "fcon_x", "fcon_y", "fcon_z",
                            "fin_x", "fin_y", "fin_z"}) {
        h.push_back(a + c);
      }
    }
    write_line(out, h);
    for (int row = 0; row < log.rows(); ++row) {
      std::vector<std::string> cells{fmt(log.t[row])};
      for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) cells.push_back(fmt(log.r[row](3 * i + k)));
        for (int k = 0; k < 3; ++k) cells.push_back(fmt(log.v[row](3 * i + k)));
        for (int k = 0; k < 3; ++k)
          cells.push_back(fmt(log.f_ext[row](3 * i + k)));
        for (int k = 0; k < 3; ++k)
          cells.push_back(fmt(log.f_con[row](3 * i + k)));
        for (int k = 0; k < 3; ++k)
          cells.push_back(fmt(log.f_in[row](3 * i + k)));
      }
      write_line(out, cells);
    }
  }

  {
    auto out = open_out(fs::path(out_dir) / "constraints.csv");
    std::vector<std::string> h{"t"};
    for (const auto& [i, j] : log.constraint_pairs) {
      h.push_back("c_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
    }
    for (const auto& [i, j] : log.constraint_pairs) {
      h.push_back("d_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
    }
    write_line(out, h);
    for (int row = 0; row < log.rows(); ++row) {
      std::vector<std::string> cells{fmt(log.t[row])};
      for (int k = 0; k < static_cast<int>(log.constraint_pairs.size()); ++k) {
        cells.push_back(fmt(log.c[row](k)));
      }
      for (int k = 0; k < static_cast<int>(log.constraint_pairs.size()); ++k) {
        cells.push_back(fmt(log.d_des[row](k)));
      }
      write_line(out, cells);
    }
  }

  {
    auto out = open_out(fs::path(out_dir) / "vrb.csv");
    write_line(out, {"t", "phase", "waypoint", "r_cm_x", "r_cm_y", "r_cm_z",
                     "v_cm_x", "v_cm_y", "v_cm_z", "q0", "q1", "q2", "q3",
                     "roll_deg", "pitch_deg", "yaw_deg", "omega_x_dps",
                     "omega_y_dps", "omega_z_dps", "quat_drift",
                     "cm_pos_residual", "cm_vel_residual", "shadow_deviation"});
    for (int row = 0; row < log.rows(); ++row) {
      std::vector<std::string> cells{fmt(log.t[row]),
                                     std::to_string(log.phase[row]),
                                     std::to_string(log.waypoint_index[row])};
      for (int k = 0; k < 3; ++k) cells.push_back(fmt(log.r_cm[row](k)));
      for (int k = 0; k < 3; ++k) cells.push_back(fmt(log.v_cm[row](k)));
      for (int k = 0; k < 4; ++k) cells.push_back(fmt(log.q[row](k)));
      for (int k = 0; k < 3; ++k) cells.push_back(fmt(log.euler_deg[row](k)));
      for (int k = 0; k < 3; ++k) cells.push_back(fmt(log.omega_dps[row](k)));
      cells.push_back(fmt(log.quat_drift[row]));
      cells.push_back(fmt(log.cm_pos_residual[row]));
      cells.push_back(fmt(log.cm_vel_residual[row]));
      cells.push_back(fmt(log.shadow_deviation[row]));
      write_line(out, cells);
    }
  }

  {
    auto out = open_out(fs::path(out_dir) / "inputs.csv");
    std::vector<std::string> h{"t"};
    for (int i = 1; i <= n; ++i) {
      h.push_back("agent" + std::to_string(i) + "_input_mag");
    }
    for (const char* c : {"cmd_fx", "cmd_fy", "cmd_fz", "cmd_tx", "cmd_ty",
                          "cmd_tz", "ach_fx", "ach_fy", "ach_fz", "ach_tx",
                          "ach_ty", "ach_tz"}) {
      h.push_back(c);
    }
    write_line(out, h);
    for (int row = 0; row < log.rows(); ++row) {
      std::vector<std::string> cells{fmt(log.t[row])};
      for (int i = 0; i < n; ++i) {
        const Vec3 u = Vec3(log.f_in[row].segment<3>(3 * i)) +
                       Vec3(log.f_con[row].segment<3>(3 * i));
        cells.push_back(fmt(u.norm()));
      }
      for (int k = 0; k < 3; ++k)
        cells.push_back(fmt(log.cmd_wrench[row].f_cm_b(k)));
      for (int k = 0; k < 3; ++k)
        cells.push_back(fmt(log.cmd_wrench[row].tau_cm_b(k)));
      for (int k = 0; k < 3; ++k)
        cells.push_back(fmt(log.achieved_wrench[row].f_cm_b(k)));
      for (int k = 0; k < 3; ++k)
        cells.push_back(fmt(log.achieved_wrench[row].tau_cm_b(k)));
      write_line(out, cells);
    }
  }

  {
    const AuditReport a = momentum_energy_audit(log);
    auto out = open_out(fs::path(out_dir) / "audit.txt");
    out << "max_net_constraint_force: " << fmt(a.max_net_constraint_force)
        << "\n"
        << "max_net_constraint_torque: " << fmt(a.max_net_constraint_torque)
        << "\n"
        << "max_rowspace_residual: " << fmt(a.max_rowspace_residual) << "\n"
        << "max_quat_drift: " << fmt(a.max_quat_drift) << "\n"
        << "max_cm_pos_residual: " << fmt(a.max_cm_pos_residual) << "\n"
        << "max_cm_vel_residual: " << fmt(a.max_cm_vel_residual) << "\n"
        << "max_agent_input: " << fmt(a.max_agent_input) << "\n"
        << "max_shadow_deviation: " << fmt(a.max_shadow_deviation) << "\n"
        << "max_care_residual: " << fmt(a.max_care_residual) << "\n"
        << "attitude_gain_solves: " << a.attitude_gain_solves << "\n"
        << "mission_complete: " << (a.mission_complete ? "yes" : "no") << "\n"
        << "timed_out: " << (a.timed_out ? "yes" : "no") << "\n";
  }
}

namespace {

njson load_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return njson::parse(ss.str(), nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what());
  }
}

struct RunOutcome {
  int exit_code = 0;
  std::string summary;
};

RunOutcome run_document(const njson& doc, const std::string& out_dir) {
  const Scenario s = parse_document(doc);
  Simulator sim(s);
  const SimLog log = sim.run_mission();
  write_log(log, out_dir);

  std::ostringstream os;
  os << "scenario: " << (s.name.empty() ? "(unnamed)" : s.name) << " ("
     << s.agent_count() << " agents, " << s.constraints.size()
     << " constraints)\n";
  if (log.attach_time >= 0.0) {
    os << "frame attached at t = " << fmt(log.attach_time) << " s\n";
  }
  for (std::size_t k = 0; k < log.waypoint_reached_at.size(); ++k) {
    if (log.waypoint_reached_at[k] >= 0.0) {
      os << "waypoint " << k + 1 << " reached at t = "
         << fmt(log.waypoint_reached_at[k]) << " s\n";
    }
  }
  if (log.mission_complete) {
    os << "mission complete at t = " << fmt(log.completed_at) << " s\n";
  } else {
    os << "mission incomplete at t_end (timed out)\n";
  }
  os << "wrote " << out_dir
     << "/{agents,constraints,vrb,inputs}.csv and audit.txt\n";
  return {log.timed_out ? 2 : 0, os.str()};
}

int cli_run(const std::string& path, const std::string& out_dir, double dt,
            double t_end, const std::string& overrides) {
  njson doc = load_document(path);
  if (!overrides.empty()) {
    try {
      doc.merge_patch(
          njson::parse(overrides, nullptr, true, /*ignore_comments=*/true));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("--seed-overrides: ") + e.what());
    }
  }
  if (dt > 0.0) doc["sim"]["dt"] = dt;
  if (t_end >= 0.0) doc["sim"]["t_end"] = t_end;
  const RunOutcome out = run_document(doc, out_dir);
  std::cout << out.summary;
  if (out.exit_code != 0) {
    std::cerr << "mission did not complete before t_end\n";
  }
  return out.exit_code;
}

int cli_check(const std::string& path) {
  const Scenario s = load_scenario_file(path);
  const RigidityReport rep =
      rigidity_check(s.make_constraint_set(), s.initial_particles());
  const int m = static_cast<int>(s.constraints.size());
  const bool full = s.rigidity == RigidityMode::full;
  const int required = full ? rep.required_rank : m;
  const bool rigid = full ? (rep.is_rigid && !rep.is_overconstrained)
                          : rep.rank == m;

  std::cout << "scenario: " << (s.name.empty() ? path : s.name) << "\n"
            << "agents: " << s.agent_count() << ", constraints: " << m
            << (full ? "" : " (partial mode)") << "\n"
            << "rank " << rep.rank << " / required " << required
            << ", rigid: " << (rigid ? "yes" : "no") << "\n";

  const DoubleIntegratorGains tg = solve_channel_gains(s.guidance.translation);
  const DoubleIntegratorGains ag = solve_channel_gains(s.guidance.attitude);
  std::cout << "translation gains: k_state=" << fmt(tg.k_state)
            << ", k_rate=" << fmt(tg.k_rate) << " (care residual "
            << fmt(tg.residual) << ", max pole "
            << fmt(tg.max_closed_loop_real) << ")\n"
            << "attitude gains: k_state=" << fmt(ag.k_state)
            << ", k_rate=" << fmt(ag.k_rate) << " (care residual "
            << fmt(ag.residual) << ", max pole "
            << fmt(ag.max_closed_loop_real) << ")\n";
  return rigid ? 0 : 1;
}

int cli_sweep(const std::string& path, const std::string& param,
              const std::vector<std::string>& values,
              const std::string& out_dir) {
  const njson base = load_document(path);

  std::vector<std::string> tokens;
  {
    std::stringstream ss(param);
    std::string tok;
    while (std::getline(ss, tok, '.')) {
      if (tok.empty()) throw ParseError("--param: empty path component");
      tokens.push_back(tok);
    }
    if (tokens.empty()) throw ParseError("--param: empty path");
  }

  std::string dir_stem = param;
  for (char& ch : dir_stem) {
    if (ch == '.') ch = '-';
  }

  struct Job {
    std::string value, dir;
    std::future<RunOutcome> future;
  };
  std::vector<Job> jobs;
  for (const std::string& value : values) {
    njson doc = base;
    njson* node = &doc;
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      node = &((*node)[tokens[i]]);
    }
    njson parsed;
    try {
      parsed = njson::parse(value);
    } catch (const nlohmann::json::exception&) {
      parsed = value;  // treat as a plain string
    }
    (*node)[tokens.back()] = parsed;
    const std::string dir =
        (std::filesystem::path(out_dir) / (dir_stem + "-" + value)).string();
    jobs.push_back(Job{value, dir,
                       std::async(std::launch::async, run_document, doc, dir)});
  }

  int worst = 0;
  for (auto& job : jobs) {
    try {
      const RunOutcome out = job.future.get();
      std::cout << param << " = " << job.value << " -> "
                << (out.exit_code == 0 ? "complete" : "incomplete") << " ("
                << job.dir << ")\n";
      worst = std::max(worst, out.exit_code);
    } catch (const ParseError& e) {
      std::cerr << param << " = " << job.value << " -> error: " << e.what()
                << "\n";
      worst = std::max(worst, 1);
    } catch (const ValidationError& e) {
      std::cerr << param << " = " << job.value << " -> error: " << e.what()
                << "\n";
      worst = std::max(worst, 1);
    } catch (const Error& e) {
      std::cerr << param << " = " << job.value << " -> error: " << e.what()
                << "\n";
      worst = std::max(worst, 2);
    }
  }
  return worst;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"virtual rigid body formation simulator"};
  app.require_subcommand(1);

  std::string run_scenario, run_out, run_overrides;
  double run_dt = -1.0, run_t_end = -1.0;
  CLI::App* run = app.add_subcommand("run", "execute a mission");
  run->add_option("scenario", run_scenario, "scenario file")->required();
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--dt", run_dt, "override sim.dt");
  run->add_option("--t-end", run_t_end, "override sim.t_end");
  run->add_option("--seed-overrides", run_overrides,
                  "JSON merge-patch applied to the scenario before validation");

  std::string check_scenario;
  CLI::App* check = app.add_subcommand(
      "check", "parse, rigidity-check, and gain-solve without simulating");
  check->add_option("scenario", check_scenario, "scenario file")->required();

  std::string sweep_scenario, sweep_param, sweep_out = "sweep";
  std::vector<std::string> sweep_values;
  CLI::App* sweep =
      app.add_subcommand("sweep", "run one mission per parameter value");
  sweep->add_option("scenario", sweep_scenario, "scenario file")->required();
  sweep->add_option("--param", sweep_param, "dot-separated field path")
      ->required();
  sweep->add_option("--values", sweep_values, "values to substitute")
      ->required()
      ->expected(-1);
  sweep->add_option("--out", sweep_out, "output root directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) {
      return cli_run(run_scenario, run_out, run_dt, run_t_end, run_overrides);
    }
    if (check->parsed()) return cli_check(check_scenario);
    if (sweep->parsed()) {
      return cli_sweep(sweep_scenario, sweep_param, sweep_values, sweep_out);
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NotStabilizable& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IllConditioned& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace vrb
