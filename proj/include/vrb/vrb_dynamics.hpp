#pragma once

// Aggregated rigid-body model of the formation: body frame attachment,
// formation inertia, and the relative-coordinate equations of motion.
//
// The integration state is {r_cm, v_cm, q, omega_b, rel_pos_b, rel_vel_b}.
// Within one derivative evaluation the angular acceleration is computed
// first from torque, gyroscopic, inertia-rate, and relative-momentum terms
// (the h_dot = tau bookkeeping); the relative accelerations then use that
// omega_dot. With the body rate seeded by the least-squares rigid fit, the
// relative angular momentum term stays at zero up to integration error.

#include "vrb/attitude.hpp"
#include "vrb/errors.hpp"
#include "vrb/types.hpp"

namespace vrb {

struct VrbState {
  Vec3 r_cm = Vec3::Zero();   // inertial
  Vec3 v_cm = Vec3::Zero();   // inertial
  Quat q = Quat(1, 0, 0, 0);  // inertial -> body
  Vec3 omega_b = Vec3::Zero();
  Mat3X rel_pos_b;  // 3xN agent offsets from CM, body frame
  Mat3X rel_vel_b;  // 3xN relative velocities as seen in the body frame

  int agent_count() const { return static_cast<int>(rel_pos_b.cols()); }
};

struct InertiaTensor {
  Mat3 I_cm_b = Mat3::Zero();
  Mat3 I_dot_cm_b = Mat3::Zero();
};

struct FrameSpec {
  int x_axis_agent = 0;       // agent whose CM offset defines body x
  int y_axis_from = 1;        // y seed is position(y_axis_to) - position(y_axis_from)
  int y_axis_to = 2;
};

struct BodyFrame {
  Mat3 dcm = Mat3::Identity();  // inertial -> body; rows are the body axes
  Quat q0 = Quat(1, 0, 0, 0);
};

// Orthonormal formation frame from agent geometry: x along the designated
// agent's CM offset, y from Gram-Schmidt of the pair difference, z = x cross y.
BodyFrame attach_body_frame(const ParticleSystem& sys, const FrameSpec& spec);

// Full VRB state at attachment: body frame, CM state, body-frame relative
// coordinates, and the least-squares rigid body rate
// omega = argmin sum m_i ||w_i - omega x dr_i||^2 (normal equations
// I omega = sum m_i dr_i x w_i, pseudo-solved for degenerate inertia).
VrbState attach_vrb_state(const ParticleSystem& sys, const FrameSpec& spec);

Vec3 fit_rigid_body_rate(const Mat3X& rel_pos, const Mat3X& rel_vel,
                         const VecX& masses);

// I = sum m_i (|dr|^2 Id - dr dr^T); Idot = sum m_i (2 (dr.drdot) Id
// - drdot dr^T - dr drdot^T). Inputs must be CM-relative.
InertiaTensor formation_inertia(const Mat3X& rel_pos_b, const Mat3X& rel_vel_b,
                                const VecX& masses);

// h_rel = sum m_i dr_i x drdot_i (body frame).
Vec3 relative_angular_momentum(const Mat3X& rel_pos_b, const Mat3X& rel_vel_b,
                               const VecX& masses);

// Total angular momentum about the CM in body coordinates:
// h_cm = I omega_b + h_rel.
Vec3 angular_momentum_cm(const VrbState& state, const InertiaTensor& inertia,
                         const VecX& masses);

// Relative principal-inertia threshold below which an axis is treated as
// null: its rate is held constant, no torque is commanded about it, and
// waypoint attitude criteria ignore it. Collinear point-mass formations have
// no meaningful dynamics about their own axis.
constexpr double kInertiaNullRel = 1e-4;

enum class InertiaSolve {
  full,   // throw SingularInertia when the inertia loses rank
  pseudo  // drop near-null principal axes; their rates are held constant
};

// omega_dot_b from torque about the CM. `rel_accel_b`, when supplied, adds
// the explicit - sum dr_i x m_i ddr_i term of the printed operator form; the
// derivative path omits it because the term vanishes identically once the
// relative accelerations come from the translational dynamics below.
Vec3 rotational_dynamics(const VrbState& state, const InertiaTensor& inertia,
                         const Mat3X& forces_b, const VecX& masses,
                         InertiaSolve solve = InertiaSolve::full,
                         const Mat3X* rel_accel_b = nullptr);

// Relative accelerations in the body frame:
// ddr = -2 w x drdot - wdot x dr - w x (w x dr) + T (f_i/m_i - F_tot/M_tot),
// with per-agent forces given in the inertial frame.
Mat3X translational_dynamics(const VrbState& state, const Vec3& omega_dot_b,
                             const Mat3X& forces_inertial, const VecX& masses);

// Absolute agent positions r_i = r_cm + T^T dr_i.
Mat3X agent_inertial_positions(const VrbState& state);

// Absolute agent velocities rdot_i = v_cm + T^T (drdot_i + w x dr_i).
Mat3X agent_inertial_velocities(const VrbState& state);

// Time derivative of every VRB state block under the given per-agent
// inertial forces. One evaluation per RK4 stage.
struct VrbDerivative {
  Vec3 r_cm_dot, v_cm_dot;
  Quat q_dot;
  Vec3 omega_dot;
  Mat3X rel_pos_dot;
  Mat3X rel_vel_dot;
};

VrbDerivative vrb_derivative(const VrbState& state, const Mat3X& forces_inertial,
                             const VecX& masses,
                             InertiaSolve solve = InertiaSolve::pseudo);

// Reconstructs the absolute-coordinate view of a VRB state.
ParticleSystem to_particle_system(const VrbState& state, const VecX& masses);

}  // namespace vrb
