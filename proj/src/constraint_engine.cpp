#include "vrb/constraint_engine.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace vrb {

namespace {

// Relative pivot threshold for rank decisions on J M^-1 J^T.
constexpr double kPivotRel = 1e-10;

// Relative spectral damping for the min-norm solve. Near shape degeneracies
// (for example three agents passing through a collinear arrangement) the
// smallest eigenvalue of J M^-1 J^T decays continuously to zero while the
// demanded correction in that direction does not, so an unfiltered solve
// produces force spikes that scale like one over the vanishing eigenvalue.
// The Tikhonov filter e / (e^2 + mu^2) caps that amplification at
// 1 / (2 mu) and leaves well-separated directions biased by only
// (mu / e)^2 relative.
constexpr double kDampRel = 1e-4;

Vec3 pair_direction(const ParticleSystem& sys, const DistanceConstraint& dc,
                    double floor) {
  const Vec3 e = sys.position_of(dc.agent_i) - sys.position_of(dc.agent_j);
  const double n = e.norm();
  if (n < floor) {
    throw DegenerateGeometry("constrained pair (" +
                             std::to_string(dc.agent_i) + ", " +
                             std::to_string(dc.agent_j) + ") separation " +
                             std::to_string(n) + " below floor");
  }
  return e / n;
}

}  // namespace

ConstraintSet::ConstraintSet(std::vector<DistanceConstraint> constraints,
                             BaumgarteGains gains, double separation_floor)
    : constraints_(std::move(constraints)),
      gains_(gains),
      separation_floor_(separation_floor),
      integral_(VecX::Zero(static_cast<int>(constraints_.size()))),
      segment_(constraints_.size(), 0) {
  for (size_t k = 0; k < constraints_.size(); ++k) {
    segment_[k] = constraints_[k].desired_distance.segment_index(0.0);
  }
}

VecX ConstraintSet::desired_distances(double t) const {
  VecX d(size());
  for (int k = 0; k < size(); ++k) {
    d[k] = constraints_[k].desired_distance.value_at(t);
  }
  return d;
}

void ConstraintSet::refresh_segments(double t) {
  for (int k = 0; k < size(); ++k) {
    const int seg = constraints_[k].desired_distance.segment_index(t);
    if (seg != segment_[k]) {
      segment_[k] = seg;
      integral_[k] = 0.0;
    }
  }
}

bool ConstraintSet::segment_changed(double t) const {
  for (int k = 0; k < size(); ++k) {
    if (constraints_[k].desired_distance.segment_index(t) != segment_[k]) {
      return true;
    }
  }
  return false;
}

VecX evaluate_constraints(const ParticleSystem& sys, const ConstraintSet& cs,
                          double t) {
  VecX c(cs.size());
  for (int k = 0; k < cs.size(); ++k) {
    const DistanceConstraint& dc = cs.constraint(k);
    const Vec3 e = sys.position_of(dc.agent_i) - sys.position_of(dc.agent_j);
    const double n = e.norm();
    if (n < cs.separation_floor()) {
      throw DegenerateGeometry("constrained pair (" +
                               std::to_string(dc.agent_i) + ", " +
                               std::to_string(dc.agent_j) +
                               ") separation below floor");
    }
    c[k] = n - dc.desired_distance.value_at(t);
  }
  return c;
}

MatX constraint_jacobian(const ParticleSystem& sys, const ConstraintSet& cs,
                         double /*t*/) {
  MatX J = MatX::Zero(cs.size(), 3 * sys.agent_count());
  for (int k = 0; k < cs.size(); ++k) {
    const DistanceConstraint& dc = cs.constraint(k);
    const Vec3 u = pair_direction(sys, dc, cs.separation_floor());
    J.row(k).segment<3>(3 * dc.agent_i) = u.transpose();
    J.row(k).segment<3>(3 * dc.agent_j) = -u.transpose();
  }
  return J;
}

MatX jacobian_rate(const ParticleSystem& sys, const ConstraintSet& cs,
                   double /*t*/) {
  MatX Jdot = MatX::Zero(cs.size(), 3 * sys.agent_count());
  for (int k = 0; k < cs.size(); ++k) {
    const DistanceConstraint& dc = cs.constraint(k);
    const Vec3 e = sys.position_of(dc.agent_i) - sys.position_of(dc.agent_j);
    const double n = e.norm();
    if (n < cs.separation_floor()) {
      throw DegenerateGeometry("constrained pair separation below floor");
    }
    const Vec3 u = e / n;
    const Vec3 edot =
        sys.velocity_of(dc.agent_i) - sys.velocity_of(dc.agent_j);
    // d/dt (e/||e||) = (Id - u u^T) edot / ||e||.
    const Vec3 udot = (edot - u * u.dot(edot)) / n;
    Jdot.row(k).segment<3>(3 * dc.agent_i) = udot.transpose();
    Jdot.row(k).segment<3>(3 * dc.agent_j) = -udot.transpose();
  }
  return Jdot;
}

ConstraintForceResult synthesize_constraint_force(const ParticleSystem& sys,
                                                  const ConstraintSet& cs,
                                                  const VecX& f_external,
                                                  double t, RankPolicy policy) {
  const int n3 = 3 * sys.agent_count();
  ConstraintForceResult out;
  out.force = VecX::Zero(n3);
  out.multipliers = VecX::Zero(cs.size());
  if (cs.size() == 0) return out;

  const VecX c = evaluate_constraints(sys, cs, t);
  const MatX J = constraint_jacobian(sys, cs, t);
  const MatX Jdot = jacobian_rate(sys, cs, t);

  VecX minv_f(n3);
  for (int i = 0; i < sys.agent_count(); ++i) {
    minv_f.segment<3>(3 * i) = f_external.segment<3>(3 * i) / sys.masses[i];
  }

  const VecX cdot = J * sys.velocities;
  const BaumgarteGains& g = cs.gains();
  const VecX b = -J * minv_f - Jdot * sys.velocities - 2.0 * g.alpha * cdot -
                 g.beta * g.beta * c - g.gamma * cs.integral_state();

  MatX A(cs.size(), cs.size());
  {
    MatX JMinv = J;
    for (int i = 0; i < sys.agent_count(); ++i) {
      JMinv.middleCols<3>(3 * i) /= sys.masses[i];
    }
    A = JMinv * J.transpose();
  }

  Eigen::SelfAdjointEigenSolver<MatX> eig(A);
  const VecX vals = eig.eigenvalues();
  const double vmax = vals.cwiseAbs().maxCoeff();
  int rank = 0;
  for (int k = 0; k < vals.size(); ++k) {
    if (vals[k] > kPivotRel * vmax) ++rank;
  }
  out.rank = rank;

  if (rank < cs.size() && policy == RankPolicy::strict) {
    throw RankDeficient("constraint system rank " + std::to_string(rank) +
                        " of " + std::to_string(cs.size()) +
                        " (dependent constraints at this configuration)");
  }

  if (vmax > 0.0) {
    const VecX bp = eig.eigenvectors().transpose() * b;
    VecX lp(vals.size());
    if (policy == RankPolicy::strict) {
      // Exact full-rank solve; strict callers asked for unfiltered
      // enforcement.
      lp = bp.cwiseQuotient(vals);
    } else {
      const double mu = kDampRel * vmax;
      for (int k = 0; k < vals.size(); ++k) {
        const double e = std::max(vals[k], 0.0);
        lp[k] = e * bp[k] / (e * e + mu * mu);
      }
    }
    out.multipliers = eig.eigenvectors() * lp;
  }

  out.force = J.transpose() * out.multipliers;
  return out;
}

ConstraintForceResult constraint_force(const ParticleSystem& sys,
                                       ConstraintSet& cs,
                                       const VecX& f_external, double t,
                                       double dt, RankPolicy policy) {
  cs.refresh_segments(t);
  ConstraintForceResult out =
      synthesize_constraint_force(sys, cs, f_external, t, policy);
  cs.accumulate_integral(evaluate_constraints(sys, cs, t), dt);
  return out;
}

RigidityReport rigidity_check(const ConstraintSet& cs,
                              const ParticleSystem& sys) {
  RigidityReport rep;
  rep.constraint_count = cs.size();
  rep.required_rank = std::max(0, 3 * sys.agent_count() - 6);
  if (cs.size() > 0) {
    const MatX J = constraint_jacobian(sys, cs, 0.0);
    Eigen::JacobiSVD<MatX> svd(J);
    const VecX sv = svd.singularValues();
    const double tol = sv.maxCoeff() * 3.0 * sys.agent_count() *
                       std::numeric_limits<double>::epsilon();
    rep.rank = 0;
    for (int k = 0; k < sv.size(); ++k) {
      if (sv[k] > tol) ++rep.rank;
    }
  }
  rep.is_rigid = (rep.rank == rep.required_rank);
  rep.is_overconstrained = (rep.constraint_count > rep.rank);
  return rep;
}

}  // namespace vrb
