#pragma once

// The full mission description consumed by the simulator. Built either
// programmatically (tests) or by scenario_io's JSON parser.

#include <optional>
#include <string>
#include <vector>

#include "vrb/constraint_engine.hpp"
#include "vrb/guidance_control.hpp"
#include "vrb/types.hpp"
#include "vrb/vrb_dynamics.hpp"
#include "vrb/wrench_allocation.hpp"

namespace vrb {

struct AgentSpec {
  double mass = 1.0;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  // Open-loop input applied during Establishing (inertial, constant).
  Vec3 establishment_input = Vec3::Zero();
};

enum class RigidityMode {
  full,    // require rank(J) == 3N-6 with no dependent constraints
  partial  // require rank(J) == m (declared sub-rigid formation)
};

enum class ControlMode { wrench, local };

struct SimConfig {
  double dt = 0.01;
  double t_end = 20.0;
  double establish_tol = 0.05;    // m, inf-norm of c
  double establish_hold = 1.0;    // s the tolerance must be sustained
  double wp_pos_tol = 0.1;        // m
  double wp_vel_tol = 0.05;       // m/s
  double wp_att_tol_deg = 1.0;
  double wp_rate_tol_dps = 0.5;
  double flythrough_radius = 0.5; // m
};

struct Scenario {
  std::string name;
  std::vector<AgentSpec> agents;
  std::vector<DistanceConstraint> constraints;  // 0-based agent indices
  BaumgarteGains gains;
  double separation_floor = 1e-6;
  RigidityMode rigidity = RigidityMode::full;
  std::optional<FrameSpec> frame;
  std::vector<Waypoint> waypoints;
  ControlMode control_mode = ControlMode::wrench;
  AllocationMode allocation = AllocationMode::min_norm_wrench;
  GuidanceWeights guidance;
  double gravity = kDefaultGravity;
  SimConfig sim;

  int agent_count() const { return static_cast<int>(agents.size()); }

  ParticleSystem initial_particles() const {
    ParticleSystem sys = make_particle_system(agent_count());
    for (int i = 0; i < agent_count(); ++i) {
      sys.masses[i] = agents[i].mass;
      sys.set_position(i, agents[i].position);
      sys.set_velocity(i, agents[i].velocity);
    }
    return sys;
  }

  ConstraintSet make_constraint_set() const {
    return ConstraintSet(constraints, gains, separation_floor);
  }
};

}  // namespace vrb
