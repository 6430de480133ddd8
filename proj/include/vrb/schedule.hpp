#pragma once

#include <vector>

namespace vrb {

// Piecewise-constant value of time. Intervals are left-closed: value(t) for
// t in [from_k, from_{k+1}) is value_k, so at a breakpoint the new phase's
// value is already in force. First breakpoint must be 0, breakpoints strictly
// increasing; t before 0 clamps to the first phase.
class PiecewiseConstant {
 public:
  PiecewiseConstant() = default;
  PiecewiseConstant(std::vector<double> from, std::vector<double> value)
      : from_(std::move(from)), value_(std::move(value)) {}

  static PiecewiseConstant constant(double v) { return {{0.0}, {v}}; }

  int segment_index(double t) const {
    int k = 0;
    while (k + 1 < static_cast<int>(from_.size()) && t >= from_[k + 1]) ++k;
    return k;
  }

  double value_at(double t) const { return value_[segment_index(t)]; }

  int segment_count() const { return static_cast<int>(from_.size()); }
  double segment_start(int k) const { return from_[k]; }
  double segment_value(int k) const { return value_[k]; }

 private:
  std::vector<double> from_{0.0};
  std::vector<double> value_{0.0};
};

}  // namespace vrb
