#include "vrb/vrb_dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace vrb {

namespace {

constexpr double kSeedFloor = 1e-9;     // near-zero axis seed
const double kMinSeedSin = std::sin(M_PI / 180.0);  // 1 degree

// Applies inv(I) restricted to the non-null principal axes of a symmetric
// PSD inertia. `strict` demands full rank.
Vec3 inertia_solve(const Mat3& I, const Vec3& rhs, bool strict) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(I);
  const Vec3 vals = eig.eigenvalues();
  const double vmax = vals.cwiseAbs().maxCoeff();
  if (vmax <= 0.0) {
    if (strict) throw SingularInertia("zero inertia tensor");
    return Vec3::Zero();
  }
  Vec3 inv = Vec3::Zero();
  for (int k = 0; k < 3; ++k) {
    if (vals[k] > kInertiaNullRel * vmax) {
      inv[k] = 1.0 / vals[k];
    } else if (strict) {
      throw SingularInertia(
          "inertia eigenvalue " + std::to_string(vals[k]) +
          " below threshold (collinear formation); full inversion refused");
    }
  }
  return eig.eigenvectors() *
         (inv.asDiagonal() * (eig.eigenvectors().transpose() * rhs));
}

}  // namespace

BodyFrame attach_body_frame(const ParticleSystem& sys, const FrameSpec& spec) {
  const Vec3 cm = sys.center_of_mass();
  const Vec3 x_seed = sys.position_of(spec.x_axis_agent) - cm;
  if (x_seed.norm() < kSeedFloor) {
    throw IllConditionedFrame("x-axis agent sits at the center of mass");
  }
  const Vec3 x_hat = x_seed.normalized();

  const Vec3 y_seed =
      sys.position_of(spec.y_axis_to) - sys.position_of(spec.y_axis_from);
  if (y_seed.norm() < kSeedFloor) {
    throw IllConditionedFrame("y-axis pair is coincident");
  }
  if (x_hat.cross(y_seed).norm() < kMinSeedSin * y_seed.norm()) {
    throw IllConditionedFrame("frame axis seeds within 1 degree of parallel");
  }
  const Vec3 y_hat = (y_seed - y_seed.dot(x_hat) * x_hat).normalized();
  const Vec3 z_hat = x_hat.cross(y_hat);

  BodyFrame frame;
  frame.dcm.row(0) = x_hat.transpose();
  frame.dcm.row(1) = y_hat.transpose();
  frame.dcm.row(2) = z_hat.transpose();
  frame.q0 = dcm_to_quat(frame.dcm);
  return frame;
}

Vec3 fit_rigid_body_rate(const Mat3X& rel_pos, const Mat3X& rel_vel,
                         const VecX& masses) {
  const InertiaTensor it = formation_inertia(rel_pos, rel_vel, masses);
  Vec3 rhs = Vec3::Zero();
  for (int i = 0; i < rel_pos.cols(); ++i) {
    rhs += masses[i] * Vec3(rel_pos.col(i)).cross(Vec3(rel_vel.col(i)));
  }
  return inertia_solve(it.I_cm_b, rhs, false);
}

VrbState attach_vrb_state(const ParticleSystem& sys, const FrameSpec& spec) {
  const BodyFrame frame = attach_body_frame(sys, spec);
  const int n = sys.agent_count();

  VrbState st;
  st.r_cm = sys.center_of_mass();
  st.v_cm = sys.cm_velocity();
  st.q = frame.q0;
  st.rel_pos_b.resize(3, n);
  st.rel_vel_b.resize(3, n);

  Mat3X w(3, n);  // body-frame view of the inertial relative velocities
  for (int i = 0; i < n; ++i) {
    st.rel_pos_b.col(i) = frame.dcm * (sys.position_of(i) - st.r_cm);
    w.col(i) = frame.dcm * (sys.velocity_of(i) - st.v_cm);
  }
  st.omega_b = fit_rigid_body_rate(st.rel_pos_b, w, sys.masses);
  for (int i = 0; i < n; ++i) {
    st.rel_vel_b.col(i) = w.col(i) - st.omega_b.cross(Vec3(st.rel_pos_b.col(i)));
  }
  return st;
}

InertiaTensor formation_inertia(const Mat3X& rel_pos_b, const Mat3X& rel_vel_b,
                                const VecX& masses) {
  InertiaTensor out;
  for (int i = 0; i < rel_pos_b.cols(); ++i) {
    const Vec3 r = rel_pos_b.col(i);
    const Vec3 v = rel_vel_b.col(i);
    const double m = masses[i];
    out.I_cm_b += m * (r.squaredNorm() * Mat3::Identity() - r * r.transpose());
    out.I_dot_cm_b += m * (2.0 * r.dot(v) * Mat3::Identity() -
                           v * r.transpose() - r * v.transpose());
  }
  return out;
}

Vec3 relative_angular_momentum(const Mat3X& rel_pos_b, const Mat3X& rel_vel_b,
                               const VecX& masses) {
  Vec3 h = Vec3::Zero();
  for (int i = 0; i < rel_pos_b.cols(); ++i) {
    h += masses[i] * Vec3(rel_pos_b.col(i)).cross(Vec3(rel_vel_b.col(i)));
  }
  return h;
}

Vec3 angular_momentum_cm(const VrbState& state, const InertiaTensor& inertia,
                         const VecX& masses) {
  return inertia.I_cm_b * state.omega_b +
         relative_angular_momentum(state.rel_pos_b, state.rel_vel_b, masses);
}

Vec3 rotational_dynamics(const VrbState& state, const InertiaTensor& inertia,
                         const Mat3X& forces_b, const VecX& masses,
                         InertiaSolve solve, const Mat3X* rel_accel_b) {
  Vec3 torque = Vec3::Zero();
  for (int i = 0; i < forces_b.cols(); ++i) {
    torque += Vec3(state.rel_pos_b.col(i)).cross(Vec3(forces_b.col(i)));
  }
  const Vec3 h_rel =
      relative_angular_momentum(state.rel_pos_b, state.rel_vel_b, masses);
  Vec3 rhs = torque - state.omega_b.cross(inertia.I_cm_b * state.omega_b) -
             inertia.I_dot_cm_b * state.omega_b - state.omega_b.cross(h_rel);
  if (rel_accel_b != nullptr) {
    for (int i = 0; i < rel_accel_b->cols(); ++i) {
      rhs -= masses[i] *
             Vec3(state.rel_pos_b.col(i)).cross(Vec3(rel_accel_b->col(i)));
    }
  }
  return inertia_solve(inertia.I_cm_b, rhs, solve == InertiaSolve::full);
}

Mat3X translational_dynamics(const VrbState& state, const Vec3& omega_dot_b,
                             const Mat3X& forces_inertial, const VecX& masses) {
  const Mat3 T = quat_to_dcm(state.q);
  const int n = static_cast<int>(forces_inertial.cols());
  const Vec3 f_total = forces_inertial.rowwise().sum();
  const double m_total = masses.sum();
  const Vec3& w = state.omega_b;

  Mat3X ddr(3, n);
  for (int i = 0; i < n; ++i) {
    const Vec3 dr = state.rel_pos_b.col(i);
    const Vec3 dv = state.rel_vel_b.col(i);
    ddr.col(i) = -2.0 * w.cross(dv) - omega_dot_b.cross(dr) -
                 w.cross(w.cross(dr)) +
                 T * (Vec3(forces_inertial.col(i)) / masses[i] -
                      f_total / m_total);
  }
  return ddr;
}

Mat3X agent_inertial_positions(const VrbState& state) {
  const Mat3 Tt = quat_to_dcm(state.q).transpose();
  Mat3X r(3, state.agent_count());
  for (int i = 0; i < state.agent_count(); ++i) {
    r.col(i) = state.r_cm + Tt * Vec3(state.rel_pos_b.col(i));
  }
  return r;
}

Mat3X agent_inertial_velocities(const VrbState& state) {
  const Mat3 Tt = quat_to_dcm(state.q).transpose();
  Mat3X v(3, state.agent_count());
  for (int i = 0; i < state.agent_count(); ++i) {
    v.col(i) = state.v_cm +
               Tt * (Vec3(state.rel_vel_b.col(i)) +
                     state.omega_b.cross(Vec3(state.rel_pos_b.col(i))));
  }
  return v;
}

VrbDerivative vrb_derivative(const VrbState& state,
                             const Mat3X& forces_inertial, const VecX& masses,
                             InertiaSolve solve) {
  const Mat3 T = quat_to_dcm(state.q);
  const Mat3X forces_b = T * forces_inertial;
  const InertiaTensor inertia =
      formation_inertia(state.rel_pos_b, state.rel_vel_b, masses);

  VrbDerivative d;
  d.omega_dot = rotational_dynamics(state, inertia, forces_b, masses, solve);
  d.rel_vel_dot =
      translational_dynamics(state, d.omega_dot, forces_inertial, masses);
  d.rel_pos_dot = state.rel_vel_b;
  d.r_cm_dot = state.v_cm;
  d.v_cm_dot = forces_inertial.rowwise().sum() / masses.sum();
  d.q_dot = quat_derivative(state.q, state.omega_b);
  return d;
}

ParticleSystem to_particle_system(const VrbState& state, const VecX& masses) {
  ParticleSystem sys = make_particle_system(state.agent_count());
  sys.masses = masses;
  const Mat3X r = agent_inertial_positions(state);
  const Mat3X v = agent_inertial_velocities(state);
  for (int i = 0; i < state.agent_count(); ++i) {
    sys.set_position(i, r.col(i));
    sys.set_velocity(i, v.col(i));
  }
  return sys;
}

}  // namespace vrb
