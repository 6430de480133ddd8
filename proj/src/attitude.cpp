#include "vrb/attitude.hpp"

#include <cmath>

namespace vrb {

Mat3 quat_to_dcm(const Quat& q) {
  const double q0 = q[0];
  const Vec3 qv = q.tail<3>();
  return (q0 * q0 - qv.squaredNorm()) * Mat3::Identity() +
         2.0 * qv * qv.transpose() - 2.0 * q0 * skew(qv);
}

Quat dcm_to_quat(const Mat3& T) {
  // Four squared candidates from the diagonal; build from the largest.
  const double tr = T.trace();
  Eigen::Vector4d sq;
  sq[0] = 1.0 + tr;
  sq[1] = 1.0 + 2.0 * T(0, 0) - tr;
  sq[2] = 1.0 + 2.0 * T(1, 1) - tr;
  sq[3] = 1.0 + 2.0 * T(2, 2) - tr;
  int k;
  sq.maxCoeff(&k);
  Quat q;
  const double s = 0.5 * std::sqrt(sq[k]);
  const double w = 0.25 / s;
  switch (k) {
    case 0:
      q << s, w * (T(1, 2) - T(2, 1)), w * (T(2, 0) - T(0, 2)),
          w * (T(0, 1) - T(1, 0));
      break;
    case 1:
      q << w * (T(1, 2) - T(2, 1)), s, w * (T(0, 1) + T(1, 0)),
          w * (T(2, 0) + T(0, 2));
      break;
    case 2:
      q << w * (T(2, 0) - T(0, 2)), w * (T(0, 1) + T(1, 0)), s,
          w * (T(1, 2) + T(2, 1));
      break;
    default:
      q << w * (T(0, 1) - T(1, 0)), w * (T(2, 0) + T(0, 2)),
          w * (T(1, 2) + T(2, 1)), s;
      break;
  }
  if (q[0] < 0.0) q = -q;
  return quat_normalized(q);
}

Quat quat_multiply(const Quat& a, const Quat& b) {
  const double a0 = a[0], b0 = b[0];
  const Vec3 av = a.tail<3>(), bv = b.tail<3>();
  Quat out;
  out[0] = a0 * b0 - av.dot(bv);
  out.tail<3>() = a0 * bv + b0 * av + av.cross(bv);
  return out;
}

Quat quat_conjugate(const Quat& q) {
  Quat out;
  out << q[0], -q[1], -q[2], -q[3];
  return out;
}

Quat quat_normalized(const Quat& q) { return q / q.norm(); }

Quat quat_derivative(const Quat& q, const Vec3& w) {
  const double p = w[0], qq = w[1], r = w[2];
  Eigen::Matrix4d omega;
  omega << 0, -p, -qq, -r,
           p,  0,   r, -qq,
          qq, -r,   0,  p,
           r, qq,  -p,  0;
  return 0.5 * omega * q;
}

Vec3 quat_to_euler321(const Quat& q) {
  const Mat3 T = quat_to_dcm(q);
  Vec3 rpy;
  rpy[0] = std::atan2(T(1, 2), T(2, 2));                          // roll
  rpy[1] = -std::asin(std::clamp(T(0, 2), -1.0, 1.0));            // pitch
  rpy[2] = std::atan2(T(0, 1), T(0, 0));                          // yaw
  return rpy;
}

Quat euler321_to_quat(const Vec3& rpy) {
  const double hr = 0.5 * rpy[0], hp = 0.5 * rpy[1], hy = 0.5 * rpy[2];
  // Rotation sequence yaw, then pitch, then roll; quaternions compose in
  // application order under this convention.
  Quat qz, qy, qx;
  qz << std::cos(hy), 0, 0, std::sin(hy);
  qy << std::cos(hp), 0, std::sin(hp), 0;
  qx << std::cos(hr), std::sin(hr), 0, 0;
  return quat_normalized(quat_multiply(quat_multiply(qz, qy), qx));
}

Quat shortest_error_quat(const Quat& q, const Quat& q_des) {
  Quat e = quat_multiply(quat_conjugate(q_des), q);
  if (e[0] < 0.0) e = -e;
  return quat_normalized(e);
}

double attitude_error_angle(const Quat& q, const Quat& q_des) {
  const Quat e = shortest_error_quat(q, q_des);
  return 2.0 * std::atan2(e.tail<3>().norm(), e[0]);
}

}  // namespace vrb
