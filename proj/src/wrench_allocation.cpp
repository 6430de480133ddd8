#include "vrb/wrench_allocation.hpp"

#include <Eigen/QR>

#include <algorithm>

namespace vrb {

AllocationMatrix build_allocation(const Mat3X& rel_pos_b, AllocationMode mode) {
  const int n = static_cast<int>(rel_pos_b.cols());
  AllocationMatrix out;
  out.mode = mode;
  out.agent_count = n;

  if (mode == AllocationMode::min_norm_wrench) {
    out.H = MatX::Zero(6, 3 * n);
    for (int i = 0; i < n; ++i) {
      out.H.block<3, 3>(0, 3 * i) = Mat3::Identity();
      out.H.block<3, 3>(3, 3 * i) = skew(rel_pos_b.col(i));
    }
  } else {
    // Force-sum rows, then one torque block row per agent demanding
    // dr_i x f_i = tau_cm / N.
    out.H = MatX::Zero(3 + 3 * n, 3 * n);
    for (int i = 0; i < n; ++i) {
      out.H.block<3, 3>(0, 3 * i) = Mat3::Identity();
      out.H.block<3, 3>(3 + 3 * i, 3 * i) = skew(rel_pos_b.col(i));
    }
  }

  Eigen::CompleteOrthogonalDecomposition<MatX> cod(out.H);
  out.rank = static_cast<int>(cod.rank());
  const int full = static_cast<int>(
      std::min(out.H.rows(), out.H.cols()));
  out.rank_deficient = (out.rank < full);
  return out;
}

Mat3X allocate(const AllocationMatrix& alloc, const WrenchCommand& cmd) {
  const int n = alloc.agent_count;
  VecX demand;
  if (alloc.mode == AllocationMode::min_norm_wrench) {
    demand.resize(6);
    demand << cmd.f_cm_b, cmd.tau_cm_b;
  } else {
    demand.resize(3 + 3 * n);
    demand.segment<3>(0) = cmd.f_cm_b;
    for (int i = 0; i < n; ++i) {
      demand.segment<3>(3 + 3 * i) = cmd.tau_cm_b / n;
    }
  }

  // Minimum-norm least squares; exact for in-range demands, drops the
  // unreachable component otherwise.
  Eigen::CompleteOrthogonalDecomposition<MatX> cod(alloc.H);
  const VecX f = cod.solve(demand);

  Mat3X forces(3, n);
  for (int i = 0; i < n; ++i) forces.col(i) = f.segment<3>(3 * i);
  return forces;
}

WrenchCommand recombine(const Mat3X& rel_pos_b, const Mat3X& forces_b) {
  WrenchCommand out;
  for (int i = 0; i < rel_pos_b.cols(); ++i) {
    out.f_cm_b += forces_b.col(i);
    out.tau_cm_b += Vec3(rel_pos_b.col(i)).cross(Vec3(forces_b.col(i)));
  }
  return out;
}

}  // namespace vrb
