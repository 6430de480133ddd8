#include "vrb/guidance_control.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include "vrb/attitude.hpp"
#include "vrb/errors.hpp"

namespace vrb {

namespace {

constexpr double kRcondFloor = 1e-12;
constexpr double kCareResidualTol = 1e-8;
constexpr int kNewtonMaxIters = 30;

MatX care_residual_matrix(const MatX& A, const MatX& B, const MatX& Q,
                          const MatX& R, const MatX& P) {
  return A.transpose() * P + P * A - P * B * R.inverse() * B.transpose() * P + Q;
}

// Solves the Lyapunov equation F' X + X F = -W for symmetric W by stacking
// columns: (I kron F' + F' kron I) vec(X) = vec(-W).
MatX solve_lyapunov(const MatX& F, const MatX& W) {
  const int n = static_cast<int>(F.rows());
  const MatX Ft = F.transpose();
  MatX L = MatX::Zero(n * n, n * n);
  for (int j = 0; j < n; ++j) {
    L.block(j * n, j * n, n, n) += Ft;
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) {
        // (F' kron I): vec(XF)[j*n+i] picks up X(i,k) with weight F(k,j).
        L(j * n + i, k * n + i) += Ft(j, k);
      }
    }
  }
  VecX rhs(n * n);
  for (int j = 0; j < n; ++j) rhs.segment(j * n, n) = -W.col(j);
  Eigen::FullPivLU<MatX> lu(L);
  if (!lu.isInvertible()) {
    throw IllConditioned("Lyapunov system is singular");
  }
  const VecX x = lu.solve(rhs);
  MatX X(n, n);
  for (int j = 0; j < n; ++j) X.col(j) = x.segment(j * n, n);
  return 0.5 * (X + X.transpose());
}

double max_real_eigenvalue(const MatX& F) {
  Eigen::EigenSolver<MatX> es(F);
  double worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < F.rows(); ++i) {
    worst = std::max(worst, es.eigenvalues()(i).real());
  }
  return worst;
}

}  // namespace

CareResult solve_care(const MatX& A, const MatX& B, const MatX& Q,
                      const MatX& R) {
  const int n = static_cast<int>(A.rows());
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != B.cols() || R.cols() != B.cols()) {
    throw IllConditioned("Riccati dimensions are inconsistent");
  }
  const MatX Rinv = R.inverse();
  const MatX S = B * Rinv * B.transpose();

  // Stable invariant subspace of the Hamiltonian matrix.
  MatX H(2 * n, 2 * n);
  H.topLeftCorner(n, n) = A;
  H.topRightCorner(n, n) = -S;
  H.bottomLeftCorner(n, n) = -Q;
  H.bottomRightCorner(n, n) = -A.transpose();

  Eigen::EigenSolver<MatX> es(H);
  if (es.info() != Eigen::Success) {
    throw IllConditioned("Hamiltonian eigendecomposition failed");
  }
  Eigen::MatrixXcd basis(2 * n, n);
  int found = 0;
  for (int i = 0; i < 2 * n; ++i) {
    if (es.eigenvalues()(i).real() < 0.0) {
      if (found < n) basis.col(found) = es.eigenvectors().col(i);
      ++found;
    }
  }
  if (found != n) {
    throw NotStabilizable("Hamiltonian has " + std::to_string(found) +
                          " stable eigenvalues, expected " + std::to_string(n));
  }
  const Eigen::MatrixXcd Xc = basis.topRows(n);
  const Eigen::MatrixXcd Yc = basis.bottomRows(n);
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(Xc);
  if (!lu.isInvertible()) {
    throw NotStabilizable("stable subspace is not a graph over the state");
  }
  {
    // Crude reciprocal condition estimate from the pivot magnitudes.
    const auto& lumat = lu.matrixLU();
    double pmax = 0.0, pmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double p = std::abs(lumat(i, i));
      pmax = std::max(pmax, p);
      pmin = std::min(pmin, p);
    }
    if (!(pmax > 0.0) || pmin / pmax < kRcondFloor) {
      throw IllConditioned("stable-subspace basis is numerically singular");
    }
  }
  MatX P = (Yc * lu.inverse()).real();
  P = 0.5 * (P + P.transpose()).eval();

  // Kleinman-Newton polish: each iterate solves a Lyapunov equation for the
  // closed-loop matrix of the previous gain.
  double residual = care_residual_matrix(A, B, Q, R, P).cwiseAbs().maxCoeff();
  for (int it = 0; it < kNewtonMaxIters && residual > 1e-14; ++it) {
    const MatX K = Rinv * B.transpose() * P;
    const MatX F = A - B * K;
    const MatX W = Q + K.transpose() * R * K;
    MatX Pn;
    try {
      Pn = solve_lyapunov(F, W);
    } catch (const IllConditioned&) {
      break;  // keep the best iterate found so far
    }
    const double rn = care_residual_matrix(A, B, Q, R, Pn).cwiseAbs().maxCoeff();
    if (!(rn < residual)) break;
    P = Pn;
    residual = rn;
  }
  if (!(residual < kCareResidualTol)) {
    throw IllConditioned("Riccati residual " + std::to_string(residual) +
                         " exceeds tolerance");
  }

  CareResult out;
  out.P = P;
  out.K = Rinv * B.transpose() * P;
  out.residual = residual;
  out.max_closed_loop_real = max_real_eigenvalue(A - B * out.K);
  if (!(out.max_closed_loop_real < 0.0)) {
    throw NotStabilizable("closed loop is not strictly stable");
  }
  return out;
}

DoubleIntegratorGains solve_channel_gains(const ChannelWeights& w) {
  if (!(w.q_state >= 0.0) || !(w.q_rate >= 0.0) || !(w.r > 0.0)) {
    throw IllConditioned("channel weights must satisfy q >= 0, r > 0");
  }
  MatX A = MatX::Zero(2, 2);
  A(0, 1) = 1.0;
  MatX B = MatX::Zero(2, 1);
  B(1, 0) = 1.0;
  MatX Q = MatX::Zero(2, 2);
  Q(0, 0) = w.q_state;
  Q(1, 1) = w.q_rate;
  MatX R = MatX::Constant(1, 1, w.r);
  const CareResult res = solve_care(A, B, Q, R);
  DoubleIntegratorGains g;
  g.k_state = res.K(0, 0);
  g.k_rate = res.K(0, 1);
  g.residual = res.residual;
  g.max_closed_loop_real = res.max_closed_loop_real;
  return g;
}

AttitudeGains solve_attitude_gains(const ChannelWeights& w,
                                   const Mat3& inertia) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(inertia);
  if (eig.info() != Eigen::Success) {
    throw SingularInertia("inertia eigendecomposition failed");
  }
  const Vec3 lam = eig.eigenvalues();
  const double lam_max = lam.maxCoeff();
  if (!(lam_max > 0.0)) {
    throw SingularInertia("inertia tensor is not positive");
  }
  AttitudeGains g;
  g.channel = solve_channel_gains(w);
  g.principal_axes = eig.eigenvectors();
  g.principal_inertia = lam;
  for (int j = 0; j < 3; ++j) {
    g.axis_enabled(j) = lam(j) > kInertiaNullRel * lam_max ? 1 : 0;
  }
  g.inertia_at_solve = inertia;
  return g;
}

GainScheduler::GainScheduler(GuidanceWeights weights, double total_mass)
    : weights_(weights), total_mass_(total_mass) {
  if (!(total_mass > 0.0)) {
    throw IllConditioned("total mass must be positive");
  }
  translation_ = solve_channel_gains(weights_.translation);
  max_residual_ = translation_.residual;
}

const AttitudeGains& GainScheduler::attitude(const Mat3& inertia) {
  const double scale = inertia.norm();
  const bool stale =
      !attitude_valid_ ||
      (inertia - attitude_.inertia_at_solve).norm() >
          weights_.reschedule_threshold * (scale > 0.0 ? scale : 1.0);
  if (stale) {
    attitude_ = solve_attitude_gains(weights_.attitude, inertia);
    attitude_valid_ = true;
    ++attitude_solves_;
    max_residual_ = std::max(max_residual_, attitude_.channel.residual);
  }
  return attitude_;
}

WrenchCommand wrench_command(const VrbState& state,
                             const InertiaTensor& inertia, const Waypoint& wp,
                             const DoubleIntegratorGains& translation,
                             const AttitudeGains& attitude_gains,
                             double total_mass, double gravity,
                             double stale_threshold) {
  const double scale = inertia.I_cm_b.norm();
  if ((inertia.I_cm_b - attitude_gains.inertia_at_solve).norm() >
      stale_threshold * (scale > 0.0 ? scale : 1.0)) {
    throw StaleGains("attitude gains were solved for a different inertia");
  }

  // Translation: per-axis double-integrator feedback plus gravity
  // feedforward, expressed in the body frame for allocation.
  Vec3 accel;
  for (int k = 0; k < 3; ++k) {
    accel(k) = -translation.k_state * (state.r_cm(k) - wp.r_cm_des(k)) -
               translation.k_rate * (state.v_cm(k) - wp.v_cm_des(k));
  }
  Vec3 f_inertial = total_mass * accel;
  f_inertial(2) += total_mass * gravity;
  const Mat3 T = quat_to_dcm(state.q);

  // Attitude: gains act on acceleration in principal coordinates so the
  // closed-loop poles match the translational design; the inertia converts
  // the commanded angular acceleration into torque.
  const Quat q_err = shortest_error_quat(state.q, wp.attitude_quat());
  Vec3 e;
  e << 2.0 * q_err(1), 2.0 * q_err(2), 2.0 * q_err(3);
  const Vec3 omega_err = state.omega_b - wp.omega_des_rad();
  const Vec3 ep = attitude_gains.principal_axes.transpose() * e;
  const Vec3 wp_err = attitude_gains.principal_axes.transpose() * omega_err;
  Vec3 tau_p;
  for (int j = 0; j < 3; ++j) {
    if (!attitude_gains.axis_enabled(j)) {
      tau_p(j) = 0.0;
      continue;
    }
    const double u = -attitude_gains.channel.k_state * ep(j) -
                     attitude_gains.channel.k_rate * wp_err(j);
    tau_p(j) = attitude_gains.principal_inertia(j) * u;
  }

  WrenchCommand cmd;
  cmd.f_cm_b = T * f_inertial;
  cmd.tau_cm_b = attitude_gains.principal_axes * tau_p;
  return cmd;
}

AgentTargets desired_agent_states(const Waypoint& wp, const Mat3X& rel_pos_b) {
  const int n = static_cast<int>(rel_pos_b.cols());
  const Mat3 T_des = quat_to_dcm(wp.attitude_quat());
  const Vec3 omega_des = wp.omega_des_rad();
  AgentTargets out;
  out.positions.resize(3, n);
  out.velocities.resize(3, n);
  for (int i = 0; i < n; ++i) {
    const Vec3 slot_inertial = T_des.transpose() * rel_pos_b.col(i);
    out.positions.col(i) = wp.r_cm_des + slot_inertial;
    out.velocities.col(i) =
        wp.v_cm_des + T_des.transpose() * omega_des.cross(rel_pos_b.col(i));
  }
  return out;
}

Mat3X local_agent_control(const ParticleSystem& sys, const AgentTargets& targets,
                          const DoubleIntegratorGains& gains, double gravity) {
  const int n = static_cast<int>(sys.masses.size());
  if (targets.positions.cols() != n || targets.velocities.cols() != n) {
    throw IllConditioned("agent target count does not match the system");
  }
  Mat3X f(3, n);
  for (int i = 0; i < n; ++i) {
    const double m = sys.masses(i);
    const Vec3 r = sys.position_of(i);
    const Vec3 v = sys.velocity_of(i);
    Vec3 u = -gains.k_state * (r - targets.positions.col(i)) -
             gains.k_rate * (v - targets.velocities.col(i));
    u(2) += gravity;
    f.col(i) = m * u;
  }
  return f;
}

}  // namespace vrb
