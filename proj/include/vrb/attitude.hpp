#pragma once

// Attitude kinematics shared by the rigid-body dynamics and guidance layers.
// Quaternions are scalar-first [q0, qv] and rotate inertial into body; the
// 3-2-1 Euler set (yaw psi, pitch theta, roll phi) composes as
// dcm = Rx(phi) * Ry(theta) * Rz(psi).

#include "vrb/types.hpp"

namespace vrb {

// Direction cosine matrix mapping inertial vectors into the body frame.
Mat3 quat_to_dcm(const Quat& q);

// Inverse of quat_to_dcm via Shepperd's method (largest of the four trace
// candidates, stable for any attitude). Scalar part is kept non-negative.
Quat dcm_to_quat(const Mat3& dcm);

// Hamilton product a*b; composes rotations so that dcm(a*b) = dcm(b)*dcm(a)
// under the inertial-to-body convention used here.
Quat quat_multiply(const Quat& a, const Quat& b);

Quat quat_conjugate(const Quat& q);

Quat quat_normalized(const Quat& q);

// Kinematic rate for body angular velocity omega_b (rad/s):
//   q_dot = 1/2 * Omega(omega_b) * q
// with the standard 4x4 skew operator of the scalar-first convention.
Quat quat_derivative(const Quat& q, const Vec3& omega_b);

// 3-2-1 Euler angles [roll, pitch, yaw] in radians.
Vec3 quat_to_euler321(const Quat& q);
Quat euler321_to_quat(const Vec3& roll_pitch_yaw);

// Rotation angle (rad) of the relative rotation between two attitudes.
double attitude_error_angle(const Quat& q, const Quat& q_des);

// Error quaternion q_des^-1 * q with scalar part forced non-negative, so the
// vector part encodes the shortest rotation from desired to actual.
Quat shortest_error_quat(const Quat& q, const Quat& q_des);

}  // namespace vrb
