#pragma once

// Mission orchestration: fixed-step RK4 propagation, the phase state machine
// (Establishing -> attach frame -> Tracking through waypoints, with
// Reconfiguring excursions at schedule breakpoints), and full signal logging.
//
// Establishing integrates absolute Newton dynamics with the open-loop
// establishment inputs plus the constraint force. After establishment the
// body frame is attached and the relative-coordinate rigid-body equations
// take over, driven by the allocated LQR wrench (or local per-agent LQR
// forces) plus the constraint force. A shadow absolute-coordinate integrator
// is fed the exact per-stage force vectors of every tracking step; its
// divergence from the primary propagation is recorded as the equations-of-
// motion equivalence metric.

#include <array>
#include <vector>

#include "vrb/scenario.hpp"
#include "vrb/sim_log.hpp"

namespace vrb {

enum class PhaseKind { establishing = 0, tracking = 1, reconfiguring = 2 };

class Simulator {
 public:
  explicit Simulator(Scenario scenario);

  // Advances one dt, appending one log row at the pre-step time. Returns
  // false once t_end has been reached (no step taken).
  bool step();

  // Runs until t_end and returns the completed log (also kept internally).
  SimLog run_mission();

  double time() const { return t_; }
  PhaseKind phase() const { return phase_; }
  const Scenario& scenario() const { return scenario_; }
  const SimLog& log() const { return log_; }

  // Absolute-coordinate view of the current state (reconstructed from the
  // VRB state after attachment).
  ParticleSystem particles() const;

 private:
  struct Forces {
    VecX external;    // gravity, stacked 3N
    VecX input;       // control / establishment input, stacked 3N
    WrenchCommand commanded;
    WrenchCommand achieved;
  };

  Forces current_forces();
  void log_row(const Forces& f);
  void step_absolute(const Forces& f);
  void step_vrb(const Forces& f);
  void shadow_step(const std::array<VecX, 4>& stage_forces);
  void check_divergence() const;
  void handle_establishment_progress();
  void handle_waypoint_progress();
  void attach_frame();
  bool waypoint_satisfied(const Waypoint& wp) const;
  Vec3 attitude_error_controllable(const Quat& q_des, Vec3* rate_err) const;

  Scenario scenario_;
  ConstraintSet cs_;
  VecX masses_;
  double t_ = 0.0;
  PhaseKind phase_ = PhaseKind::establishing;

  ParticleSystem abs_;    // authoritative during Establishing
  VrbState vrb_;          // authoritative after attachment
  bool attached_ = false;

  GainScheduler scheduler_;
  int active_waypoint_ = -1;
  int reconfigs_completed_ = 0;
  int reconfigs_seen_at_waypoint_ = 0;
  double tol_met_since_ = -1.0;  // establishment / reconvergence hold timer

  // Shadow direct-Newton integrator state (valid once attached).
  VecX shadow_pos_, shadow_vel_;

  // Metrics produced by the step that ends at the next logged row.
  double pending_quat_drift_ = 0.0;
  double pending_shadow_dev_ = 0.0;

  SimLog log_;
};

struct AuditReport {
  double max_net_constraint_force = 0.0;   // ||sum f_C|| over time
  double max_net_constraint_torque = 0.0;  // about the CM
  double max_rowspace_residual = 0.0;      // f_C vs rowspace(J^T)
  double max_quat_drift = 0.0;             // pre-normalization, per step
  double max_cm_pos_residual = 0.0;        // ||sum m dr|| (tracking)
  double max_cm_vel_residual = 0.0;        // ||sum m drdot|| (tracking)
  double max_agent_input = 0.0;            // max_i ||f_u,i + f_C,i||
  double max_shadow_deviation = 0.0;       // EOM equivalence metric
  double max_care_residual = 0.0;
  int attitude_gain_solves = 0;
  bool mission_complete = false;
  bool timed_out = false;
};

AuditReport momentum_energy_audit(const SimLog& log);

}  // namespace vrb
