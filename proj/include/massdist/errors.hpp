#pragma once

#include <stdexcept>
#include <string>

namespace massdist {

// Simulation
struct SingularMassMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SettleTimeout : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EpisodeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Control / analysis
struct KinematicSingularity : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ZeroAcceleration : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Learning
struct ShapeMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct NonFiniteGradient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiments
struct CollectionStalled : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace massdist
