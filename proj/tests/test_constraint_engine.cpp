#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "test_helpers.hpp"
#include "vrb/constraint_engine.hpp"

using namespace vrb;
using vrb_test::fd_constraint_jacobian;
using vrb_test::fd_jacobian_rate;
using vrb_test::random_constraints;
using vrb_test::random_forces;
using vrb_test::random_system;

namespace {

ParticleSystem two_agents(const Vec3& r1, const Vec3& r2, double m = 1.0) {
  ParticleSystem sys;
  sys.masses = VecX::Constant(2, m);
  sys.positions = VecX(6);
  sys.velocities = VecX::Zero(6);
  sys.set_position(0, r1);
  sys.set_position(1, r2);
  return sys;
}

ConstraintSet single_pair(double d, BaumgarteGains gains = {}) {
  DistanceConstraint dc;
  dc.agent_i = 0;
  dc.agent_j = 1;
  dc.desired_distance = PiecewiseConstant::constant(d);
  return ConstraintSet({dc}, gains);
}

// Line formation 0-1-2 with targets (4, 8, 4): rows become dependent when the
// agents are exactly collinear.
ConstraintSet line_triple() {
  std::vector<DistanceConstraint> dcs(3);
  dcs[0] = {0, 1, PiecewiseConstant::constant(4.0)};
  dcs[1] = {0, 2, PiecewiseConstant::constant(8.0)};
  dcs[2] = {1, 2, PiecewiseConstant::constant(4.0)};
  return ConstraintSet(dcs);
}

}  // namespace

TEST_CASE("distance evaluation matches hand values") {
  ParticleSystem on_surface = two_agents({0, 0, 0}, {3, 4, 0});
  VecX c = evaluate_constraints(on_surface, single_pair(5.0), 0.0);
  CHECK(c.size() == 1);
  CHECK(c[0] == doctest::Approx(0.0).epsilon(1e-14));

  ParticleSystem offset = two_agents({1, 6, 3}, {8, 3, 3});
  c = evaluate_constraints(offset, single_pair(4.0), 0.0);
  CHECK(c[0] == doctest::Approx(std::sqrt(58.0) - 4.0).epsilon(1e-12));

  ParticleSystem coincident = two_agents({1, 1, 1}, {1, 1, 1});
  CHECK_THROWS_AS(evaluate_constraints(coincident, single_pair(1.0), 0.0),
                  DegenerateGeometry);
}

TEST_CASE("jacobian rows follow the pair direction") {
  ParticleSystem sys = two_agents({0, 0, 0}, {3, 4, 0});
  const MatX J = constraint_jacobian(sys, single_pair(5.0), 0.0);
  REQUIRE(J.rows() == 1);
  REQUIRE(J.cols() == 6);
  const double expected[6] = {-0.6, -0.8, 0.0, 0.6, 0.8, 0.0};
  for (int k = 0; k < 6; ++k) {
    CHECK(J(0, k) == doctest::Approx(expected[k]).epsilon(1e-12));
  }

  // No motion, no Jacobian rate.
  CHECK(jacobian_rate(sys, single_pair(5.0), 0.0).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0));
}

TEST_CASE("jacobian matches central differences on random states") {
  for (unsigned seed = 1; seed <= 20; ++seed) {
    ParticleSystem sys = random_system(4, seed);
    ConstraintSet cs = random_constraints(sys, 5, seed + 100);
    const MatX J = constraint_jacobian(sys, cs, 0.0);
    const MatX J_fd = fd_constraint_jacobian(sys, cs, 0.0);
    const double rel =
        (J - J_fd).cwiseAbs().maxCoeff() / J.cwiseAbs().maxCoeff();
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("jacobian rate matches central differences on random states") {
  for (unsigned seed = 1; seed <= 20; ++seed) {
    ParticleSystem sys = random_system(4, seed);
    ConstraintSet cs = random_constraints(sys, 5, seed + 100);
    const MatX Jdot = jacobian_rate(sys, cs, 0.0);
    const MatX Jdot_fd = fd_jacobian_rate(sys, cs, 0.0);
    const double scale = std::max(1.0, Jdot.cwiseAbs().maxCoeff());
    CHECK((Jdot - Jdot_fd).cwiseAbs().maxCoeff() / scale < 1e-5);
  }
}

TEST_CASE("constraint velocity equals J times stacked velocity") {
  ParticleSystem sys = random_system(5, 7);
  ConstraintSet cs = random_constraints(sys, 6, 8);
  const MatX J = constraint_jacobian(sys, cs, 0.0);
  const double h = 1e-6;
  ParticleSystem plus = sys;
  ParticleSystem minus = sys;
  plus.positions += h * sys.velocities;
  minus.positions -= h * sys.velocities;
  const VecX cdot_fd = (evaluate_constraints(plus, cs, 0.0) -
                        evaluate_constraints(minus, cs, 0.0)) /
                       (2.0 * h);
  CHECK((J * sys.velocities - cdot_fd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("force vanishes on satisfied resting constraints") {
  // Exactly on the constraint surface, at rest, no external force.
  ParticleSystem sys = two_agents({0, 0, 0}, {3, 4, 0});
  ConstraintSet cs = single_pair(5.0);
  ConstraintForceResult r =
      synthesize_constraint_force(sys, cs, VecX::Zero(6), 0.0);
  CHECK(r.force.cwiseAbs().maxCoeff() < 1e-12);

  // Identical gravity on both agents is orthogonal to the pair direction,
  // so J M^-1 f_E = 0 and no force is needed.
  ParticleSystem level = two_agents({0, 0, 0}, {5, 0, 0});
  ConstraintSet cs5 = single_pair(5.0);
  VecX grav(6);
  grav << 0, 0, -9.81, 0, 0, -9.81;
  r = synthesize_constraint_force(level, cs5, grav, 0.0);
  CHECK(r.force.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("synthesis solves the stabilized normal equations") {
  for (unsigned seed = 1; seed <= 10; ++seed) {
    ParticleSystem sys = random_system(4, seed);
    ConstraintSet cs = random_constraints(sys, 4, seed + 50);
    VecX integral = 0.1 * random_forces(4, seed + 90).head(cs.size());
    cs.set_integral_state(integral);
    const VecX f_ext = random_forces(4, seed + 200);

    // Independent dense reconstruction of the closed-form multiplier solve.
    const VecX c = evaluate_constraints(sys, cs, 0.0);
    const MatX J = constraint_jacobian(sys, cs, 0.0);
    const MatX Jdot = jacobian_rate(sys, cs, 0.0);
    MatX Minv = MatX::Zero(12, 12);
    for (int i = 0; i < 4; ++i) {
      Minv.block<3, 3>(3 * i, 3 * i) =
          Mat3::Identity() / sys.masses[i];
    }
    const BaumgarteGains& g = cs.gains();
    const VecX b = -J * Minv * f_ext - Jdot * sys.velocities -
                   2.0 * g.alpha * (J * sys.velocities) -
                   g.beta * g.beta * c - g.gamma * integral;
    const VecX lam_expected =
        (J * Minv * J.transpose()).fullPivLu().solve(b);

    ConstraintForceResult strict =
        synthesize_constraint_force(sys, cs, f_ext, 0.0, RankPolicy::strict);
    CHECK((strict.multipliers - lam_expected).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((strict.force - J.transpose() * lam_expected).cwiseAbs().maxCoeff() <
          1e-9);

    // The damped policy agrees on well-conditioned systems.
    ConstraintForceResult damped =
        synthesize_constraint_force(sys, cs, f_ext, 0.0, RankPolicy::min_norm);
    const double scale = std::max(1.0, strict.force.cwiseAbs().maxCoeff());
    CHECK((damped.force - strict.force).cwiseAbs().maxCoeff() / scale < 1e-5);
  }
}

TEST_CASE("constraint force carries no net force or torque") {
  for (unsigned seed = 1; seed <= 10; ++seed) {
    ParticleSystem sys = random_system(5, seed);
    ConstraintSet cs = random_constraints(sys, 7, seed + 31);
    const VecX f_ext = random_forces(5, seed + 77);
    ConstraintForceResult r =
        synthesize_constraint_force(sys, cs, f_ext, 0.0, RankPolicy::min_norm);

    Vec3 net = Vec3::Zero();
    Vec3 torque = Vec3::Zero();
    const Vec3 r_cm = sys.center_of_mass();
    for (int i = 0; i < 5; ++i) {
      const Vec3 fi = r.force.segment<3>(3 * i);
      net += fi;
      torque += (sys.position_of(i) - r_cm).cross(fi);
    }
    CHECK(net.norm() < 1e-9);
    CHECK(torque.norm() < 1e-9);
  }
}

TEST_CASE("closed-loop constraint dynamics satisfy the stabilized ODE") {
  // With f = f_E + f_C, the design makes cddot + 2 alpha cdot + beta^2 c
  // + gamma int(c) vanish; evaluate cddot analytically from the dynamics.
  for (unsigned seed = 1; seed <= 10; ++seed) {
    ParticleSystem sys = random_system(4, seed);
    ConstraintSet cs = random_constraints(sys, 4, seed + 11);
    cs.set_integral_state(0.2 * random_forces(4, seed).head(cs.size()));
    const VecX f_ext = random_forces(4, seed + 3);
    ConstraintForceResult r =
        synthesize_constraint_force(sys, cs, f_ext, 0.0, RankPolicy::strict);

    VecX accel(12);
    for (int i = 0; i < 4; ++i) {
      accel.segment<3>(3 * i) =
          (f_ext.segment<3>(3 * i) + r.force.segment<3>(3 * i)) /
          sys.masses[i];
    }
    const MatX J = constraint_jacobian(sys, cs, 0.0);
    const MatX Jdot = jacobian_rate(sys, cs, 0.0);
    const VecX c = evaluate_constraints(sys, cs, 0.0);
    const VecX cddot = Jdot * sys.velocities + J * accel;
    const BaumgarteGains& g = cs.gains();
    const VecX residual = cddot + 2.0 * g.alpha * (J * sys.velocities) +
                          g.beta * g.beta * c +
                          g.gamma * cs.integral_state();
    CHECK(residual.cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("logged constraint histories satisfy the ODE to FD accuracy") {
  // Same invariant as above, but cddot taken from second differences of a
  // simulated c(t) history. Central differences at dt = 0.01 carry
  // O(dt^2 * c'''') truncation error (~5e-4 during transients), so the
  // tolerance here is 1e-2; the analytic test above is the tight one.
  const double dt = 0.01;
  const int steps = 300;
  ParticleSystem sys;
  sys.masses = VecX::Constant(3, 1.0);
  sys.positions = VecX(9);
  sys.velocities = VecX::Zero(9);
  sys.set_position(0, {1, 6, 3});
  sys.set_position(1, {8, 3, 3});
  sys.set_position(2, {7, 6, 3});
  ConstraintSet cs({{0, 1, PiecewiseConstant::constant(4.0)},
                    {0, 2, PiecewiseConstant::constant(4.0)},
                    {1, 2, PiecewiseConstant::constant(4.0)}});
  VecX f_ext(9);
  for (int i = 0; i < 3; ++i) f_ext.segment<3>(3 * i) = Vec3(0.1, 0.1, 0.0);

  std::vector<VecX> c_hist, i_hist;
  auto accel = [&](const ParticleSystem& s, double t) -> VecX {
    const VecX total =
        f_ext +
        synthesize_constraint_force(s, cs, f_ext, t, RankPolicy::min_norm)
            .force;
    VecX a(9);
    for (int i = 0; i < 3; ++i) {
      a.segment<3>(3 * i) = total.segment<3>(3 * i) / s.masses[i];
    }
    return a;
  };
  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    c_hist.push_back(evaluate_constraints(sys, cs, t));
    i_hist.push_back(cs.integral_state());

    auto at = [&](const VecX& dr, const VecX& dv, double s) {
      ParticleSystem out = sys;
      out.positions += s * dr;
      out.velocities += s * dv;
      return out;
    };
    const VecX k1r = sys.velocities, k1v = accel(sys, t);
    const VecX k2r = sys.velocities + 0.5 * dt * k1v;
    const VecX k2v = accel(at(k1r, k1v, 0.5 * dt), t);
    const VecX k3r = sys.velocities + 0.5 * dt * k2v;
    const VecX k3v = accel(at(k2r, k2v, 0.5 * dt), t);
    const VecX k4r = sys.velocities + dt * k3v;
    const VecX k4v = accel(at(k3r, k3v, dt), t);
    sys.positions += (dt / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
    sys.velocities += (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    cs.accumulate_integral(c_hist.back(), dt);
  }

  const BaumgarteGains& g = cs.gains();
  double worst = 0.0;
  for (int k = 1; k + 1 < steps; ++k) {
    const VecX cddot =
        (c_hist[k + 1] - 2.0 * c_hist[k] + c_hist[k - 1]) / (dt * dt);
    const VecX cdot = (c_hist[k + 1] - c_hist[k - 1]) / (2.0 * dt);
    const VecX res = cddot + 2.0 * g.alpha * cdot +
                     g.beta * g.beta * c_hist[k] + g.gamma * i_hist[k];
    worst = std::max(worst, res.cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-2);
  // And the history actually converged to the constraint manifold.
  CHECK(c_hist.back().cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("collinear formations drop rank but keep finite forces") {
  ParticleSystem sys;
  sys.masses = VecX::Constant(3, 1.0);
  sys.positions = VecX(9);
  sys.velocities = VecX::Zero(9);
  sys.set_position(0, {0, 0, 0});
  sys.set_position(1, {4, 0, 0});
  sys.set_position(2, {8, 0, 0});
  sys.set_velocity(1, {0, 0.3, 0});
  ConstraintSet cs = line_triple();
  const VecX f_ext = random_forces(3, 5);

  CHECK_THROWS_AS(
      synthesize_constraint_force(sys, cs, f_ext, 0.0, RankPolicy::strict),
      RankDeficient);

  ConstraintForceResult r =
      synthesize_constraint_force(sys, cs, f_ext, 0.0, RankPolicy::min_norm);
  CHECK(r.rank == 2);
  CHECK(r.force.allFinite());
  Vec3 net = Vec3::Zero();
  for (int i = 0; i < 3; ++i) net += r.force.segment<3>(3 * i);
  CHECK(net.norm() < 1e-9);
}

TEST_CASE("permuting constraints permutes rows and preserves the force") {
  ParticleSystem sys = random_system(4, 9);
  std::vector<DistanceConstraint> dcs;
  for (int k = 0; k < random_constraints(sys, 5, 10).size(); ++k) {
    dcs.push_back(random_constraints(sys, 5, 10).constraint(k));
  }
  ConstraintSet cs(dcs);
  std::vector<DistanceConstraint> rev(dcs.rbegin(), dcs.rend());
  ConstraintSet cs_rev(rev);

  const MatX J = constraint_jacobian(sys, cs, 0.0);
  const MatX Jr = constraint_jacobian(sys, cs_rev, 0.0);
  for (int k = 0; k < cs.size(); ++k) {
    CHECK((J.row(k) - Jr.row(cs.size() - 1 - k)).cwiseAbs().maxCoeff() <
          1e-14);
  }

  const VecX f_ext = random_forces(4, 12);
  ConstraintForceResult a =
      synthesize_constraint_force(sys, cs, f_ext, 0.0, RankPolicy::min_norm);
  ConstraintForceResult b = synthesize_constraint_force(sys, cs_rev, f_ext,
                                                        0.0,
                                                        RankPolicy::min_norm);
  CHECK((a.force - b.force).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("schedules are left-closed and reset the integral on change") {
  std::vector<DistanceConstraint> dcs(2);
  dcs[0] = {0, 1, PiecewiseConstant::constant(4.0)};
  dcs[1] = {0, 2, PiecewiseConstant({0.0, 6.0, 13.0}, {4.0, 8.0, 4.0})};
  ConstraintSet cs(dcs);

  CHECK(cs.desired_distances(5.999)[1] == doctest::Approx(4.0));
  CHECK(cs.desired_distances(6.0)[1] == doctest::Approx(8.0));
  CHECK(cs.desired_distances(12.999)[1] == doctest::Approx(8.0));
  CHECK(cs.desired_distances(13.0)[1] == doctest::Approx(4.0));

  cs.refresh_segments(0.0);
  VecX acc = VecX::Zero(2);
  cs.accumulate_integral(VecX::Constant(2, 0.5), 0.01);
  cs.accumulate_integral(VecX::Constant(2, 0.3), 0.01);
  CHECK(cs.integral_state()[0] == doctest::Approx(0.008));
  CHECK(cs.integral_state()[1] == doctest::Approx(0.008));

  CHECK(!cs.segment_changed(5.9));
  CHECK(cs.segment_changed(6.0));
  cs.refresh_segments(6.0);
  CHECK(!cs.segment_changed(6.0));
  CHECK(cs.integral_state()[0] == doctest::Approx(0.008));  // unscheduled row
  CHECK(cs.integral_state()[1] == doctest::Approx(0.0));    // reset on jump
}

TEST_CASE("rigidity reports rank against the rigid-body requirement") {
  // Equilateral triangle, side 4: three independent constraints, 3N-6 = 3.
  ParticleSystem tri;
  tri.masses = VecX::Constant(3, 1.0);
  tri.positions = VecX(9);
  tri.velocities = VecX::Zero(9);
  tri.set_position(0, {0, 0, 0});
  tri.set_position(1, {4, 0, 0});
  tri.set_position(2, {2, 2.0 * std::sqrt(3.0), 0});
  std::vector<DistanceConstraint> dcs(3);
  dcs[0] = {0, 1, PiecewiseConstant::constant(4.0)};
  dcs[1] = {0, 2, PiecewiseConstant::constant(4.0)};
  dcs[2] = {1, 2, PiecewiseConstant::constant(4.0)};
  RigidityReport rep = rigidity_check(ConstraintSet(dcs), tri);
  CHECK(rep.rank == 3);
  CHECK(rep.required_rank == 3);
  CHECK(rep.is_rigid);
  CHECK(!rep.is_overconstrained);

  // A duplicated constraint adds a dependent row.
  dcs.push_back(dcs[0]);
  rep = rigidity_check(ConstraintSet(dcs), tri);
  CHECK(rep.rank == 3);
  CHECK(rep.is_overconstrained);

  // Planar square with one diagonal: rigid in the plane (rank 5) but one
  // fold short of the spatial requirement 3N-6 = 6.
  ParticleSystem sq;
  sq.masses = VecX::Constant(4, 1.0);
  sq.positions = VecX(12);
  sq.velocities = VecX::Zero(12);
  sq.set_position(0, {0, 0, 0});
  sq.set_position(1, {4, 0, 0});
  sq.set_position(2, {4, 4, 0});
  sq.set_position(3, {0, 4, 0});
  std::vector<DistanceConstraint> sq_dcs(5);
  sq_dcs[0] = {0, 1, PiecewiseConstant::constant(4.0)};
  sq_dcs[1] = {1, 2, PiecewiseConstant::constant(4.0)};
  sq_dcs[2] = {2, 3, PiecewiseConstant::constant(4.0)};
  sq_dcs[3] = {0, 3, PiecewiseConstant::constant(4.0)};
  sq_dcs[4] = {0, 2, PiecewiseConstant::constant(4.0 * std::sqrt(2.0))};
  rep = rigidity_check(ConstraintSet(sq_dcs), sq);
  CHECK(rep.rank == 5);
  CHECK(rep.required_rank == 6);
  CHECK(!rep.is_rigid);
  CHECK(!rep.is_overconstrained);
}

TEST_CASE("braced cube ranks fully rigid") {
  ParticleSystem cube;
  cube.masses = VecX::Constant(8, 1.0);
  cube.positions = VecX(24);
  cube.velocities = VecX::Zero(24);
  const double s = 4.0;
  int idx = 0;
  // Bottom 0-3 counterclockwise, then top 4-7 above them.
  const double corners[4][2] = {{0, 0}, {s, 0}, {s, s}, {0, s}};
  for (int level = 0; level < 2; ++level) {
    for (const auto& c : corners) {
      cube.set_position(idx++, {c[0], c[1], level * s});
    }
  }
  std::vector<DistanceConstraint> dcs;
  auto add = [&](int i, int j, double d) {
    dcs.push_back({i, j, PiecewiseConstant::constant(d)});
  };
  const double diag = s * std::sqrt(2.0);
  for (int k = 0; k < 4; ++k) {
    add(k, (k + 1) % 4, s);              // bottom edges
    add(4 + k, 4 + ((k + 1) % 4), s);    // top edges
    add(k, 4 + k, s);                    // verticals
  }
  add(0, 2, diag);      // bottom face diagonal
  add(4, 6, diag);      // top face diagonal
  add(0, 5, diag);      // four side-face diagonals
  add(1, 6, diag);
  add(2, 7, diag);
  add(3, 4, diag);
  REQUIRE(static_cast<int>(dcs.size()) == 18);
  RigidityReport rep = rigidity_check(ConstraintSet(dcs), cube);
  CHECK(rep.rank == 18);
  CHECK(rep.required_rank == 18);
  CHECK(rep.is_rigid);
}

TEST_CASE("separation floor rejects near-coincident pairs") {
  ParticleSystem sys = two_agents({0, 0, 0}, {1e-9, 0, 0});
  ConstraintSet cs = single_pair(1.0);
  CHECK_THROWS_AS(constraint_jacobian(sys, cs, 0.0), DegenerateGeometry);
  CHECK_THROWS_AS(
      synthesize_constraint_force(sys, cs, VecX::Zero(6), 0.0),
      DegenerateGeometry);
}
