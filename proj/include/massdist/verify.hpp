#pragma once

// Self-checks runnable from the command line: physics oracles, gradient
// checks and the identifiability invariants.

#include "massdist/chain_sim.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace massdist::verify {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  // Friction used by every physics check; the mutation probe flips its sign.
  FrictionParams friction;
  std::uint64_t seed = 7;
};

// Pinned tolerances.
inline constexpr double kStoppingDistanceTol = 0.01;  // relative
inline constexpr double kPassivityTol = 1e-8;
inline constexpr double kMassScalingTol = 1e-6;
inline constexpr double kGradientTol = 1e-4;
inline constexpr double kReconstructionTol = 1e-12;
inline constexpr double kNullResponseTol = 1e-8;

/// Sliding distance of a single link launched at `v0` along its axis.
double stopping_distance(double v0, double mu, const FrictionParams& friction = {});

std::vector<CheckResult> physics_suite(const VerifyOptions& opts = {});
std::vector<CheckResult> gradients_suite(const VerifyOptions& opts = {});
std::vector<CheckResult> identifiability_suite(const VerifyOptions& opts = {});

/// "physics", "gradients", "identifiability" or "all"; std::invalid_argument otherwise.
std::vector<CheckResult> run_suite(const std::string& name, const VerifyOptions& opts = {});

}  // namespace massdist::verify
