#pragma once

#include <stdexcept>
#include <string>

namespace vrb {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Constraint geometry: an agent pair closer than the separation floor, so the
// constraint direction is undefined.
struct DegenerateGeometry : Error {
  using Error::Error;
};

// J*M^-1*J^T (or another factorized operator) lost rank under a strict policy.
struct RankDeficient : Error {
  using Error::Error;
};

// Body-frame axis seeds are too close to parallel to span a plane.
struct IllConditionedFrame : Error {
  using Error::Error;
};

// Full 3-axis inertia inversion requested on a rank-deficient inertia tensor.
struct SingularInertia : Error {
  using Error::Error;
};

// The (A, B) pair handed to the Riccati solver has an uncontrollable unstable
// (or undamped) mode.
struct NotStabilizable : Error {
  using Error::Error;
};

// A linear-algebra step produced results too inaccurate to trust.
struct IllConditioned : Error {
  using Error::Error;
};

// Controller gains used against an inertia that drifted past the re-solve
// threshold without being refreshed.
struct StaleGains : Error {
  using Error::Error;
};

// Scenario file is not parseable JSON.
struct ParseError : Error {
  using Error::Error;
};

// Scenario parsed but violates a semantic rule. `field` names the offending
// entry with a file-level path like "agents[2].mass".
struct ValidationError : Error {
  std::string field;
  ValidationError(std::string field_path, const std::string& what)
      : Error(field_path + ": " + what), field(std::move(field_path)) {}
};

// A simulated state component left the sane range (|x| > 1e6).
struct NumericalDivergence : Error {
  using Error::Error;
};

}  // namespace vrb
