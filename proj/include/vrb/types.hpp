#pragma once

#include <Eigen/Dense>

namespace vrb {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Mat3X = Eigen::Matrix3Xd;

// Quaternion as [q0, q1, q2, q3], scalar first. Rotates inertial into body:
// v_b = dcm(q) * v_i.
using Quat = Eigen::Vector4d;

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s <<     0, -v.z(),  v.y(),
       v.z(),      0, -v.x(),
      -v.y(),  v.x(),      0;
  return s;
}

// N point agents in inertial coordinates. Positions and velocities are
// stacked agent-major: segment 3i holds agent i.
struct ParticleSystem {
  VecX masses;      // N, strictly positive
  VecX positions;   // 3N
  VecX velocities;  // 3N

  int agent_count() const { return static_cast<int>(masses.size()); }

  Vec3 position_of(int i) const { return positions.segment<3>(3 * i); }
  Vec3 velocity_of(int i) const { return velocities.segment<3>(3 * i); }
  void set_position(int i, const Vec3& r) { positions.segment<3>(3 * i) = r; }
  void set_velocity(int i, const Vec3& v) { velocities.segment<3>(3 * i) = v; }

  double total_mass() const { return masses.sum(); }

  Vec3 center_of_mass() const {
    Vec3 cm = Vec3::Zero();
    for (int i = 0; i < agent_count(); ++i) cm += masses[i] * position_of(i);
    return cm / total_mass();
  }

  Vec3 cm_velocity() const {
    Vec3 v = Vec3::Zero();
    for (int i = 0; i < agent_count(); ++i) v += masses[i] * velocity_of(i);
    return v / total_mass();
  }
};

inline ParticleSystem make_particle_system(int n) {
  ParticleSystem sys;
  sys.masses = VecX::Ones(n);
  sys.positions = VecX::Zero(3 * n);
  sys.velocities = VecX::Zero(3 * n);
  return sys;
}

constexpr double kDefaultGravity = 9.81;

}  // namespace vrb
