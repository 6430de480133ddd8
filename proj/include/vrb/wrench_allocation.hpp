#pragma once

// Distributes a desired CM force and torque to per-agent input forces.
//
// Two allocation maps are provided. min_norm_wrench (default) solves the
// 6x3N system [sum f_i; sum dr_i x f_i] = [f_cm; tau_cm] exactly with
// minimum stacked norm. per_agent_torque assembles the (3+3N)x3N stacked map
// whose rows demand the force sum plus one per-agent torque target
// tau_cm / N each, and returns its least-squares solution; with per-agent
// torque targets fixed a priori the achieved net force is generally traded
// off against them, which is why it is not the default.

#include "vrb/errors.hpp"
#include "vrb/types.hpp"

namespace vrb {

struct WrenchCommand {
  Vec3 f_cm_b = Vec3::Zero();    // desired force at CM, body frame
  Vec3 tau_cm_b = Vec3::Zero();  // desired torque about CM, body frame
};

enum class AllocationMode { min_norm_wrench, per_agent_torque };

struct AllocationMatrix {
  MatX H;  // 6x3N (min_norm_wrench) or (3+3N)x3N (per_agent_torque)
  AllocationMode mode = AllocationMode::min_norm_wrench;
  int agent_count = 0;
  int rank = 0;             // numerical rank of H
  bool rank_deficient = false;  // e.g. collinear formation: no torque
                                // authority about the line axis
};

AllocationMatrix build_allocation(const Mat3X& rel_pos_b, AllocationMode mode);

// Per-agent forces (3xN, body frame) realizing the commanded wrench per the
// matrix's mode. Rank-deficient geometry drops the unreachable demand
// component (minimum-norm least squares) rather than failing.
Mat3X allocate(const AllocationMatrix& alloc, const WrenchCommand& cmd);

// Achieved wrench of a force set: sum f_i and sum dr_i x f_i.
WrenchCommand recombine(const Mat3X& rel_pos_b, const Mat3X& forces_b);

}  // namespace vrb
