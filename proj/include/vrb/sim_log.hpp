#pragma once

// Time-series record of one mission. One row per step start plus a final
// row at t_end. All stacked vectors are agent-major 3N.

#include <utility>
#include <vector>

#include "vrb/types.hpp"
#include "vrb/wrench_allocation.hpp"

namespace vrb {

struct SimLog {
  int agent_count = 0;
  VecX masses;
  std::vector<std::pair<int, int>> constraint_pairs;  // 0-based

  std::vector<double> t;
  std::vector<int> phase;           // PhaseKind as int
  std::vector<int> waypoint_index;  // -1 before tracking
  std::vector<VecX> r, v;           // absolute agent states
  std::vector<VecX> f_ext, f_con, f_in;
  std::vector<VecX> c, d_des;
  std::vector<Vec3> r_cm, v_cm;
  std::vector<Quat> q;
  std::vector<Vec3> euler_deg;
  std::vector<Vec3> omega_dps;
  std::vector<WrenchCommand> cmd_wrench, achieved_wrench;
  std::vector<double> quat_drift;     // pre-normalization |norm - 1|
  std::vector<double> cm_pos_residual, cm_vel_residual;
  std::vector<double> shadow_deviation;

  bool mission_complete = false;
  double completed_at = -1.0;
  bool timed_out = false;
  double attach_time = -1.0;
  std::vector<double> waypoint_reached_at;
  int attitude_gain_solves = 0;
  double max_care_residual = 0.0;

  int rows() const { return static_cast<int>(t.size()); }
};

}  // namespace vrb
