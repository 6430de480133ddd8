#pragma once

// Distance-constraint machinery: constraint evaluation, Jacobians, and the
// Baumgarte-stabilized constraint force that makes N point agents behave as
// one rigid body. The synthesized force always lies in the row space of the
// constraint Jacobian transpose, so it does no virtual work and carries zero
// net force and zero net torque about the center of mass.

#include <vector>

#include "vrb/errors.hpp"
#include "vrb/schedule.hpp"
#include "vrb/types.hpp"

namespace vrb {

struct DistanceConstraint {
  int agent_i = 0;  // 0-based, agent_i < agent_j
  int agent_j = 0;
  PiecewiseConstant desired_distance;  // meters, piecewise constant in time
};

struct BaumgarteGains {
  double alpha = 2.0;  // 1/s, velocity-error damping
  double beta = 2.0;   // 1/s, position-error stiffness (enters squared)
  double gamma = 0.02;  // 1/s^3, integral action; small so the slow closed-loop
                        // pole's residue stays inside the convergence windows
};

// Constraint list plus the per-constraint integral memory used by the
// stabilization term. The integral resets whenever a constraint's schedule
// enters a new segment (desired-distance jump).
class ConstraintSet {
 public:
  ConstraintSet() = default;
  ConstraintSet(std::vector<DistanceConstraint> constraints,
                BaumgarteGains gains = {}, double separation_floor = 1e-6);

  int size() const { return static_cast<int>(constraints_.size()); }
  const DistanceConstraint& constraint(int k) const { return constraints_[k]; }
  const std::vector<DistanceConstraint>& constraints() const {
    return constraints_;
  }
  const BaumgarteGains& gains() const { return gains_; }
  double separation_floor() const { return separation_floor_; }

  VecX desired_distances(double t) const;

  const VecX& integral_state() const { return integral_; }
  void set_integral_state(const VecX& v) { integral_ = v; }

  // Zeroes the integral of every constraint whose schedule segment at time t
  // differs from the segment seen on the previous call.
  void refresh_segments(double t);

  // True if any constraint's schedule segment changes at time t relative to
  // the last refresh (used by the mission phase machine).
  bool segment_changed(double t) const;

  void accumulate_integral(const VecX& c, double dt) { integral_ += c * dt; }

 private:
  std::vector<DistanceConstraint> constraints_;
  BaumgarteGains gains_;
  double separation_floor_ = 1e-6;
  VecX integral_;
  std::vector<int> segment_;
};

// c_k = ||r_i - r_j|| - d_k(t), in constraint order.
VecX evaluate_constraints(const ParticleSystem& sys, const ConstraintSet& cs,
                          double t);

// Row k: (r_i - r_j)^T / ||r_i - r_j|| in agent i's columns, negated in
// agent j's, zero elsewhere. Independent of the desired distances.
MatX constraint_jacobian(const ParticleSystem& sys, const ConstraintSet& cs,
                         double t);

// Exact d/dt of the Jacobian at the current velocities.
MatX jacobian_rate(const ParticleSystem& sys, const ConstraintSet& cs,
                   double t);

enum class RankPolicy {
  strict,   // throw RankDeficient when J M^-1 J^T loses rank
  min_norm  // rank-revealing pseudo-solve (minimum-norm multipliers)
};

struct ConstraintForceResult {
  VecX force;        // stacked 3N constraint force
  VecX multipliers;  // Lagrange multipliers lambda, one per constraint
  int rank = 0;      // numerical rank of J M^-1 J^T at this state
};

// Stabilized constraint force at the given state, without touching the
// integral memory. f_C = J^T (J M^-1 J^T)^-1 [ -J M^-1 f_E - Jdot rdot
// - 2 alpha cdot - beta^2 c - gamma integral(c) ].
ConstraintForceResult synthesize_constraint_force(
    const ParticleSystem& sys, const ConstraintSet& cs, const VecX& f_external,
    double t, RankPolicy policy = RankPolicy::strict);

// Same force, then advances the integral memory by c*dt (resetting first any
// constraint whose schedule segment changed). One call per time step.
ConstraintForceResult constraint_force(const ParticleSystem& sys,
                                       ConstraintSet& cs,
                                       const VecX& f_external, double t,
                                       double dt,
                                       RankPolicy policy = RankPolicy::strict);

struct RigidityReport {
  int constraint_count = 0;
  int rank = 0;           // numerical rank of J at this configuration
  int required_rank = 0;  // 3N - 6 (clamped at 0)
  bool is_rigid = false;            // rank == required_rank
  bool is_overconstrained = false;  // m > rank (dependent rows present)
};

RigidityReport rigidity_check(const ConstraintSet& cs,
                              const ParticleSystem& sys);

}  // namespace vrb
