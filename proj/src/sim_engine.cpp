#include "vrb/sim_engine.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>

#include "vrb/attitude.hpp"
#include "vrb/errors.hpp"

namespace vrb {

namespace {

constexpr double kTimeEps = 1e-9;
constexpr double kDivergenceBound = 1e6;
constexpr double kRadToDeg = 180.0 / M_PI;

VecX collect_masses(const Scenario& s) {
  VecX m(s.agent_count());
  for (int i = 0; i < s.agent_count(); ++i) m(i) = s.agents[i].mass;
  return m;
}

VecX gravity_vector(const VecX& masses, double g) {
  VecX f = VecX::Zero(3 * masses.size());
  for (int i = 0; i < masses.size(); ++i) f(3 * i + 2) = -masses(i) * g;
  return f;
}

Mat3X stack_to_mat(const VecX& f) {
  const int n = static_cast<int>(f.size()) / 3;
  Mat3X m(3, n);
  for (int i = 0; i < n; ++i) m.col(i) = f.segment<3>(3 * i);
  return m;
}

VrbState advance_state(const VrbState& s, const VrbDerivative& d, double h) {
  VrbState o = s;
  o.r_cm += h * d.r_cm_dot;
  o.v_cm += h * d.v_cm_dot;
  o.q += h * d.q_dot;
  o.omega_b += h * d.omega_dot;
  o.rel_pos_b += h * d.rel_pos_dot;
  o.rel_vel_b += h * d.rel_vel_dot;
  return o;
}

}  // namespace

Simulator::Simulator(Scenario scenario)
    : scenario_(std::move(scenario)),
      cs_(scenario_.make_constraint_set()),
      masses_(collect_masses(scenario_)),
      abs_(scenario_.initial_particles()),
      scheduler_(scenario_.guidance, masses_.sum()) {
  if (!scenario_.waypoints.empty() && !scenario_.frame.has_value()) {
    throw ValidationError("frame", "required when waypoints are present");
  }
  log_.agent_count = scenario_.agent_count();
  log_.masses = masses_;
  for (const auto& c : scenario_.constraints) {
    log_.constraint_pairs.emplace_back(c.agent_i, c.agent_j);
  }
  log_.waypoint_reached_at.assign(scenario_.waypoints.size(), -1.0);
}

ParticleSystem Simulator::particles() const {
  return attached_ ? to_particle_system(vrb_, masses_) : abs_;
}

Simulator::Forces Simulator::current_forces() {
  const int n = scenario_.agent_count();
  Forces f;
  f.external = gravity_vector(masses_, scenario_.gravity);
  f.input = VecX::Zero(3 * n);

  if (!attached_) {
    for (int i = 0; i < n; ++i) {
      f.input.segment<3>(3 * i) = scenario_.agents[i].establishment_input;
    }
    return f;
  }

  const Waypoint& wp =
      scenario_.waypoints[std::min<std::size_t>(
          static_cast<std::size_t>(std::max(active_waypoint_, 0)),
          scenario_.waypoints.size() - 1)];
  const InertiaTensor inertia =
      formation_inertia(vrb_.rel_pos_b, vrb_.rel_vel_b, masses_);
  const Mat3 T = quat_to_dcm(vrb_.q);

  if (scenario_.control_mode == ControlMode::wrench) {
    const AttitudeGains& att = scheduler_.attitude(inertia.I_cm_b);
    const WrenchCommand cmd = wrench_command(
        vrb_, inertia, wp, scheduler_.translation(), att,
        scheduler_.total_mass(), scenario_.gravity,
        scheduler_.weights().reschedule_threshold);
    const AllocationMatrix alloc =
        build_allocation(vrb_.rel_pos_b, scenario_.allocation);
    const Mat3X forces_b = allocate(alloc, cmd);
    for (int i = 0; i < n; ++i) {
      f.input.segment<3>(3 * i) = T.transpose() * forces_b.col(i);
    }
    f.commanded = cmd;
    f.achieved = recombine(vrb_.rel_pos_b, forces_b);
  } else {
    const AgentTargets targets = desired_agent_states(wp, vrb_.rel_pos_b);
    const ParticleSystem sys = to_particle_system(vrb_, masses_);
    const Mat3X fi = local_agent_control(sys, targets, scheduler_.translation(),
                                         scenario_.gravity);
    Mat3X forces_b(3, n);
    for (int i = 0; i < n; ++i) {
      f.input.segment<3>(3 * i) = fi.col(i);
      forces_b.col(i) = T * fi.col(i);
    }
    f.commanded = recombine(vrb_.rel_pos_b, forces_b);
    f.achieved = f.commanded;
  }
  return f;
}

void Simulator::log_row(const Forces& f) {
  const ParticleSystem sys = particles();
  const VecX f_total_ext = f.external + f.input;
  const ConstraintForceResult con =
      cs_.size() > 0
          ? synthesize_constraint_force(sys, cs_, f_total_ext, t_,
                                        RankPolicy::min_norm)
          : ConstraintForceResult{VecX::Zero(3 * scenario_.agent_count()),
                                  VecX::Zero(0), 0};

  log_.t.push_back(t_);
  log_.phase.push_back(static_cast<int>(phase_));
  int wp_idx = -1;
  if (attached_ && !scenario_.waypoints.empty()) {
    wp_idx = std::min(active_waypoint_,
                      static_cast<int>(scenario_.waypoints.size()) - 1);
  }
  log_.waypoint_index.push_back(wp_idx);
  log_.r.push_back(sys.positions);
  log_.v.push_back(sys.velocities);
  log_.f_ext.push_back(f.external);
  log_.f_con.push_back(con.force);
  log_.f_in.push_back(f.input);
  log_.c.push_back(evaluate_constraints(sys, cs_, t_));
  log_.d_des.push_back(cs_.desired_distances(t_));

  if (attached_) {
    log_.r_cm.push_back(vrb_.r_cm);
    log_.v_cm.push_back(vrb_.v_cm);
    log_.q.push_back(vrb_.q);
    log_.euler_deg.push_back(quat_to_euler321(vrb_.q) * kRadToDeg);
    log_.omega_dps.push_back(vrb_.omega_b * kRadToDeg);
    Vec3 mom_pos = Vec3::Zero(), mom_vel = Vec3::Zero();
    for (int i = 0; i < vrb_.agent_count(); ++i) {
      mom_pos += masses_(i) * vrb_.rel_pos_b.col(i);
      mom_vel += masses_(i) * vrb_.rel_vel_b.col(i);
    }
    log_.cm_pos_residual.push_back(mom_pos.norm());
    log_.cm_vel_residual.push_back(mom_vel.norm());
  } else {
    log_.r_cm.push_back(sys.center_of_mass());
    log_.v_cm.push_back(sys.cm_velocity());
    log_.q.push_back(Quat(1, 0, 0, 0));
    log_.euler_deg.push_back(Vec3::Zero());
    log_.omega_dps.push_back(Vec3::Zero());
    log_.cm_pos_residual.push_back(0.0);
    log_.cm_vel_residual.push_back(0.0);
  }

  log_.cmd_wrench.push_back(f.commanded);
  log_.achieved_wrench.push_back(f.achieved);
  log_.quat_drift.push_back(pending_quat_drift_);
  log_.shadow_deviation.push_back(pending_shadow_dev_);
  pending_quat_drift_ = 0.0;
}

void Simulator::step_absolute(const Forces& f) {
  const double h = std::min(scenario_.sim.dt, scenario_.sim.t_end - t_);
  const VecX f_ext_total = f.external + f.input;
  const int n = scenario_.agent_count();

  auto accel = [&](const ParticleSystem& sys, double t) -> VecX {
    VecX total = f_ext_total;
    if (cs_.size() > 0) {
      total += synthesize_constraint_force(sys, cs_, f_ext_total, t,
                                           RankPolicy::min_norm)
                   .force;
    }
    VecX a(3 * n);
    for (int i = 0; i < n; ++i) {
      a.segment<3>(3 * i) = total.segment<3>(3 * i) / masses_(i);
    }
    return a;
  };
  auto at = [&](const VecX& dr, const VecX& dv, double s) {
    ParticleSystem sys = abs_;
    sys.positions += s * dr;
    sys.velocities += s * dv;
    return sys;
  };

  const VecX k1r = abs_.velocities;
  const VecX k1v = accel(abs_, t_);
  const VecX k2r = abs_.velocities + 0.5 * h * k1v;
  const VecX k2v = accel(at(k1r, k1v, 0.5 * h), t_ + 0.5 * h);
  const VecX k3r = abs_.velocities + 0.5 * h * k2v;
  const VecX k3v = accel(at(k2r, k2v, 0.5 * h), t_ + 0.5 * h);
  const VecX k4r = abs_.velocities + h * k3v;
  const VecX k4v = accel(at(k3r, k3v, h), t_ + h);

  abs_.positions += (h / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
  abs_.velocities += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);

  // Launch pad: agents cannot pass below the ground while establishing.
  for (int i = 0; i < n; ++i) {
    if (abs_.positions(3 * i + 2) < 0.0) {
      abs_.positions(3 * i + 2) = 0.0;
      if (abs_.velocities(3 * i + 2) < 0.0) abs_.velocities(3 * i + 2) = 0.0;
    }
  }
}

void Simulator::step_vrb(const Forces& f) {
  const double h = std::min(scenario_.sim.dt, scenario_.sim.t_end - t_);
  const VecX f_ext_total = f.external + f.input;
  const int n = scenario_.agent_count();

  std::array<VecX, 4> stage_forces;
  int stage = 0;
  auto deriv = [&](const VrbState& s, double t) -> VrbDerivative {
    const ParticleSystem sys = to_particle_system(s, masses_);
    VecX total = f_ext_total;
    if (cs_.size() > 0) {
      total += synthesize_constraint_force(sys, cs_, f_ext_total, t,
                                           RankPolicy::min_norm)
                   .force;
    }
    stage_forces[stage++] = total;
    return vrb_derivative(s, stack_to_mat(total), masses_,
                          InertiaSolve::pseudo);
  };

  const VrbDerivative k1 = deriv(vrb_, t_);
  const VrbDerivative k2 = deriv(advance_state(vrb_, k1, 0.5 * h), t_ + 0.5 * h);
  const VrbDerivative k3 = deriv(advance_state(vrb_, k2, 0.5 * h), t_ + 0.5 * h);
  const VrbDerivative k4 = deriv(advance_state(vrb_, k3, h), t_ + h);

  VrbDerivative sum = k1;
  sum.r_cm_dot += 2.0 * k2.r_cm_dot + 2.0 * k3.r_cm_dot + k4.r_cm_dot;
  sum.v_cm_dot += 2.0 * k2.v_cm_dot + 2.0 * k3.v_cm_dot + k4.v_cm_dot;
  sum.q_dot += 2.0 * k2.q_dot + 2.0 * k3.q_dot + k4.q_dot;
  sum.omega_dot += 2.0 * k2.omega_dot + 2.0 * k3.omega_dot + k4.omega_dot;
  sum.rel_pos_dot += 2.0 * k2.rel_pos_dot + 2.0 * k3.rel_pos_dot + k4.rel_pos_dot;
  sum.rel_vel_dot += 2.0 * k2.rel_vel_dot + 2.0 * k3.rel_vel_dot + k4.rel_vel_dot;
  vrb_ = advance_state(vrb_, sum, h / 6.0);

  pending_quat_drift_ = std::abs(vrb_.q.norm() - 1.0);
  vrb_.q = quat_normalized(vrb_.q);

  shadow_step(stage_forces);
  const Mat3X primary = agent_inertial_positions(vrb_);
  double dev = 0.0;
  for (int i = 0; i < n; ++i) {
    dev = std::max(dev,
                   (primary.col(i) - shadow_pos_.segment<3>(3 * i)).norm());
  }
  pending_shadow_dev_ = dev;
}

void Simulator::shadow_step(const std::array<VecX, 4>& stage_forces) {
  const double h = std::min(scenario_.sim.dt, scenario_.sim.t_end - t_);
  const int n = scenario_.agent_count();
  std::array<VecX, 4> a;
  for (int s = 0; s < 4; ++s) {
    a[s].resize(3 * n);
    for (int i = 0; i < n; ++i) {
      a[s].segment<3>(3 * i) = stage_forces[s].segment<3>(3 * i) / masses_(i);
    }
  }
  const VecX k1r = shadow_vel_;
  const VecX k2r = shadow_vel_ + 0.5 * h * a[0];
  const VecX k3r = shadow_vel_ + 0.5 * h * a[1];
  const VecX k4r = shadow_vel_ + h * a[2];
  shadow_pos_ += (h / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
  shadow_vel_ += (h / 6.0) * (a[0] + 2.0 * a[1] + 2.0 * a[2] + a[3]);
}

void Simulator::check_divergence() const {
  const ParticleSystem sys = particles();
  const bool finite = sys.positions.allFinite() && sys.velocities.allFinite();
  if (!finite || sys.positions.cwiseAbs().maxCoeff() > kDivergenceBound ||
      sys.velocities.cwiseAbs().maxCoeff() > kDivergenceBound) {
    throw NumericalDivergence("state exceeded bounds at t = " +
                              std::to_string(t_));
  }
}

void Simulator::attach_frame() {
  vrb_ = attach_vrb_state(abs_, *scenario_.frame);
  attached_ = true;
  phase_ = PhaseKind::tracking;
  active_waypoint_ = 0;
  reconfigs_seen_at_waypoint_ = reconfigs_completed_;
  shadow_pos_ = abs_.positions;
  shadow_vel_ = abs_.velocities;
  log_.attach_time = t_;
}

void Simulator::handle_establishment_progress() {
  const ParticleSystem sys = particles();
  const VecX c = evaluate_constraints(sys, cs_, t_);
  const double cmax = cs_.size() > 0 ? c.cwiseAbs().maxCoeff() : 0.0;
  if (cmax < scenario_.sim.establish_tol) {
    if (tol_met_since_ < 0.0) tol_met_since_ = t_;
    if (t_ - tol_met_since_ >= scenario_.sim.establish_hold - kTimeEps) {
      if (!scenario_.waypoints.empty()) {
        attach_frame();
        tol_met_since_ = -1.0;
      } else if (!log_.mission_complete) {
        log_.mission_complete = true;
        log_.completed_at = t_;
      }
    }
  } else {
    tol_met_since_ = -1.0;
  }
}

Vec3 Simulator::attitude_error_controllable(const Quat& q_des,
                                            Vec3* rate_err) const {
  const Quat qe = shortest_error_quat(vrb_.q, q_des);
  const Vec3 qv(qe(1), qe(2), qe(3));
  const double nv = qv.norm();
  Vec3 rotvec = nv > 1e-12 ? Vec3(2.0 * std::atan2(nv, qe(0)) * qv / nv)
                           : Vec3(2.0 * qv);
  Vec3 werr = vrb_.omega_b;
  const InertiaTensor inertia =
      formation_inertia(vrb_.rel_pos_b, vrb_.rel_vel_b, masses_);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(inertia.I_cm_b);
  const Vec3 lam = eig.eigenvalues();
  const double lam_max = lam.maxCoeff();
  for (int j = 0; j < 3; ++j) {
    if (lam(j) <= kInertiaNullRel * lam_max) {
      const Vec3 axis = eig.eigenvectors().col(j);
      rotvec -= axis.dot(rotvec) * axis;
      werr -= axis.dot(werr) * axis;
    }
  }
  if (rate_err != nullptr) *rate_err = werr;
  return rotvec;
}

bool Simulator::waypoint_satisfied(const Waypoint& wp) const {
  if (wp.await_schedule &&
      reconfigs_completed_ <= reconfigs_seen_at_waypoint_) {
    return false;
  }
  const double pos_err = (vrb_.r_cm - wp.r_cm_des).norm();
  if (wp.hold == WaypointHold::fly_through) {
    return pos_err < scenario_.sim.flythrough_radius;
  }
  if (pos_err >= scenario_.sim.wp_pos_tol) return false;
  if ((vrb_.v_cm - wp.v_cm_des).norm() >= scenario_.sim.wp_vel_tol) {
    return false;
  }
  Vec3 rate_err;
  Vec3 att_err = attitude_error_controllable(wp.attitude_quat(), &rate_err);
  rate_err -= wp.omega_des_rad();
  if (att_err.norm() * kRadToDeg >= scenario_.sim.wp_att_tol_deg) return false;
  if (rate_err.norm() * kRadToDeg >= scenario_.sim.wp_rate_tol_dps) {
    return false;
  }
  return true;
}

void Simulator::handle_waypoint_progress() {
  if (phase_ == PhaseKind::reconfiguring) {
    const ParticleSystem sys = particles();
    const VecX c = evaluate_constraints(sys, cs_, t_);
    const double cmax = cs_.size() > 0 ? c.cwiseAbs().maxCoeff() : 0.0;
    if (cmax < scenario_.sim.establish_tol) {
      if (tol_met_since_ < 0.0) tol_met_since_ = t_;
      if (t_ - tol_met_since_ >= scenario_.sim.establish_hold - kTimeEps) {
        phase_ = PhaseKind::tracking;
        ++reconfigs_completed_;
        tol_met_since_ = -1.0;
      }
    } else {
      tol_met_since_ = -1.0;
    }
    return;
  }

  const int n_wp = static_cast<int>(scenario_.waypoints.size());
  if (active_waypoint_ >= n_wp) return;  // station keeping
  const Waypoint& wp = scenario_.waypoints[active_waypoint_];
  if (!waypoint_satisfied(wp)) return;

  log_.waypoint_reached_at[active_waypoint_] = t_;
  ++active_waypoint_;
  reconfigs_seen_at_waypoint_ = reconfigs_completed_;
  if (active_waypoint_ == n_wp) {
    log_.mission_complete = true;
    log_.completed_at = t_;
  }
}

bool Simulator::step() {
  if (t_ >= scenario_.sim.t_end - kTimeEps) return false;
  const double h = std::min(scenario_.sim.dt, scenario_.sim.t_end - t_);

  if (attached_ && phase_ == PhaseKind::tracking && cs_.segment_changed(t_)) {
    phase_ = PhaseKind::reconfiguring;
    tol_met_since_ = -1.0;
  }
  cs_.refresh_segments(t_);

  const VecX c0 = evaluate_constraints(particles(), cs_, t_);
  const Forces f = current_forces();
  log_row(f);

  if (attached_) {
    step_vrb(f);
  } else {
    step_absolute(f);
  }
  cs_.accumulate_integral(c0, h);
  t_ += h;

  check_divergence();
  if (attached_) {
    handle_waypoint_progress();
  } else {
    handle_establishment_progress();
  }
  return true;
}

SimLog Simulator::run_mission() {
  while (step()) {
  }
  if (scenario_.sim.t_end > 0.0) {
    cs_.refresh_segments(t_);
    const Forces f = current_forces();
    log_row(f);
  }
  log_.timed_out = !log_.mission_complete;
  log_.attitude_gain_solves = scheduler_.attitude_solve_count();
  log_.max_care_residual = scheduler_.max_residual();
  return log_;
}

AuditReport momentum_energy_audit(const SimLog& log) {
  AuditReport rep;
  rep.max_care_residual = log.max_care_residual;
  rep.attitude_gain_solves = log.attitude_gain_solves;
  rep.mission_complete = log.mission_complete;
  rep.timed_out = log.timed_out;

  const int n = log.agent_count;
  const int m = static_cast<int>(log.constraint_pairs.size());
  const double mass_total = log.masses.sum();

  for (int row = 0; row < log.rows(); ++row) {
    const VecX& r = log.r[row];
    const VecX& fc = log.f_con[row];
    const VecX& fin = log.f_in[row];

    Vec3 net = Vec3::Zero();
    for (int i = 0; i < n; ++i) net += fc.segment<3>(3 * i);
    rep.max_net_constraint_force =
        std::max(rep.max_net_constraint_force, net.norm());

    Vec3 cm = Vec3::Zero();
    for (int i = 0; i < n; ++i) cm += log.masses(i) * r.segment<3>(3 * i);
    cm /= mass_total;
    Vec3 torque = Vec3::Zero();
    for (int i = 0; i < n; ++i) {
      torque += (Vec3(r.segment<3>(3 * i)) - cm)
                    .cross(Vec3(fc.segment<3>(3 * i)));
    }
    rep.max_net_constraint_torque =
        std::max(rep.max_net_constraint_torque, torque.norm());

    if (m > 0) {
      MatX Jt = MatX::Zero(3 * n, m);
      bool ok = true;
      for (int k = 0; k < m; ++k) {
        const auto [i, j] = log.constraint_pairs[k];
        const Vec3 diff =
            Vec3(r.segment<3>(3 * i)) - Vec3(r.segment<3>(3 * j));
        const double dist = diff.norm();
        if (dist < 1e-12) {
          ok = false;
          break;
        }
        Jt.block<3, 1>(3 * i, k) = diff / dist;
        Jt.block<3, 1>(3 * j, k) = -diff / dist;
      }
      if (ok) {
        const VecX lam =
            Jt.completeOrthogonalDecomposition().solve(fc);
        rep.max_rowspace_residual =
            std::max(rep.max_rowspace_residual, (Jt * lam - fc).norm());
      }
    }

    for (int i = 0; i < n; ++i) {
      const double u =
          (Vec3(fin.segment<3>(3 * i)) + Vec3(fc.segment<3>(3 * i))).norm();
      rep.max_agent_input = std::max(rep.max_agent_input, u);
    }

    rep.max_quat_drift = std::max(rep.max_quat_drift, log.quat_drift[row]);
    rep.max_cm_pos_residual =
        std::max(rep.max_cm_pos_residual, log.cm_pos_residual[row]);
    rep.max_cm_vel_residual =
        std::max(rep.max_cm_vel_residual, log.cm_vel_residual[row]);
    rep.max_shadow_deviation =
        std::max(rep.max_shadow_deviation, log.shadow_deviation[row]);
  }
  return rep;
}

}  // namespace vrb
