#pragma once

// Waypoint guidance: an infinite-horizon LQR per control channel.
//
// Translation runs one double-integrator design per inertial axis on
// (position error, velocity error). Attitude runs one design per principal
// axis of the formation inertia on (2 * error-quaternion vector component,
// rate error). Both are solved in acceleration-normalized form (B = [0; 1]),
// and the attitude channel scales the commanded angular acceleration by the
// principal inertia, so the closed-loop poles are the same for every
// formation while the torque gains track the inertia. Gains are re-solved
// when the inertia drifts past a relative threshold (reconfiguration).

#include "vrb/attitude.hpp"
#include "vrb/errors.hpp"
#include "vrb/types.hpp"
#include "vrb/vrb_dynamics.hpp"
#include "vrb/wrench_allocation.hpp"

namespace vrb {

enum class WaypointHold { stop, fly_through };

struct Waypoint {
  Vec3 r_cm_des = Vec3::Zero();        // m, inertial
  Vec3 v_cm_des = Vec3::Zero();        // m/s, inertial
  Vec3 sigma_des_deg = Vec3::Zero();   // 3-2-1 Euler [roll, pitch, yaw], deg
  Vec3 omega_b_des_dps = Vec3::Zero(); // body rates, deg/s
  WaypointHold hold = WaypointHold::stop;
  // When set, the waypoint is not considered achieved until a schedule
  // reconfiguration has completed after it became active.
  bool await_schedule = false;

  Quat attitude_quat() const {
    return euler321_to_quat(sigma_des_deg * M_PI / 180.0);
  }
  Vec3 omega_des_rad() const { return omega_b_des_dps * M_PI / 180.0; }
};

// P solves A^T P + P A - P B R^-1 B^T P + Q = 0; K = R^-1 B^T P. Solved via
// the stable invariant subspace of the Hamiltonian [A, -B R^-1 B^T; -Q, -A^T]
// and polished with Kleinman-Newton iterations (Lyapunov solves).
struct CareResult {
  MatX P;
  MatX K;
  double residual = 0.0;             // inf-norm of the CARE residual
  double max_closed_loop_real = 0.0; // max Re(eig(A - BK))
};

CareResult solve_care(const MatX& A, const MatX& B, const MatX& Q,
                      const MatX& R);

struct ChannelWeights {
  double q_state = 1.0;  // weight on the position-like error
  double q_rate = 1.0;   // weight on the velocity-like error
  double r = 1.0;        // weight on the (acceleration) input
};

// Gains of one double-integrator channel, acceleration-normalized.
struct DoubleIntegratorGains {
  double k_state = 0.0;
  double k_rate = 0.0;
  double residual = 0.0;
  double max_closed_loop_real = 0.0;
};

DoubleIntegratorGains solve_channel_gains(const ChannelWeights& w);

struct AttitudeGains {
  DoubleIntegratorGains channel;
  Mat3 principal_axes = Mat3::Identity();   // columns, body frame
  Vec3 principal_inertia = Vec3::Zero();
  Eigen::Vector3i axis_enabled = Eigen::Vector3i::Ones();  // 0: near-null axis
  Mat3 inertia_at_solve = Mat3::Zero();
};

struct GuidanceWeights {
  // Defaults sized so a fresh waypoint error of ~19 m with the hover load
  // stays inside a ~23 N per-agent envelope at the moment tracking begins.
  ChannelWeights translation{0.4, 2.5, 1.0};
  ChannelWeights attitude{1.0, 2.0, 1.0};
  double reschedule_threshold = 0.05;  // relative Frobenius inertia drift
};

AttitudeGains solve_attitude_gains(const ChannelWeights& w, const Mat3& inertia);

// Owns the channel designs used by a mission; re-solves attitude gains when
// the inertia drifts past the threshold and counts the solves.
class GainScheduler {
 public:
  GainScheduler(GuidanceWeights weights, double total_mass);

  const DoubleIntegratorGains& translation() const { return translation_; }

  // Returns current attitude gains, re-solving first if the inertia moved
  // more than the threshold since the last solve.
  const AttitudeGains& attitude(const Mat3& inertia);

  int attitude_solve_count() const { return attitude_solves_; }
  double max_residual() const { return max_residual_; }
  double total_mass() const { return total_mass_; }
  const GuidanceWeights& weights() const { return weights_; }

 private:
  GuidanceWeights weights_;
  double total_mass_;
  DoubleIntegratorGains translation_;
  AttitudeGains attitude_;
  bool attitude_valid_ = false;
  int attitude_solves_ = 0;
  double max_residual_ = 0.0;
};

// LQR wrench for the active waypoint: per-axis translation feedback plus
// gravity feedforward (rotated to body), and principal-axis attitude
// feedback. Throws StaleGains if `gains` was solved for an inertia that has
// since drifted past the threshold.
WrenchCommand wrench_command(const VrbState& state, const InertiaTensor& inertia,
                             const Waypoint& wp,
                             const DoubleIntegratorGains& translation,
                             const AttitudeGains& attitude_gains,
                             double total_mass, double gravity,
                             double stale_threshold = 0.05);

struct AgentTargets {
  Mat3X positions;   // inertial
  Mat3X velocities;  // inertial
};

// Per-agent desired states implied by a waypoint: each agent sits at its
// body-frame slot rotated by the waypoint attitude.
AgentTargets desired_agent_states(const Waypoint& wp, const Mat3X& rel_pos_b);

// Local mode: per-agent double-integrator LQR force toward the agent's
// desired slot, plus per-agent gravity feedforward. Inertial frame. The
// constraint force is added by the simulator on top.
Mat3X local_agent_control(const ParticleSystem& sys, const AgentTargets& targets,
                          const DoubleIntegratorGains& gains, double gravity);

}  // namespace vrb
