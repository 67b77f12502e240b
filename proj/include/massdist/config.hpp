#pragma once

// Experiment configuration: sampling ranges, dataset sizes, network and
// optimizer settings. Stored as JSON; the hash of the canonical dump tags
// every artifact a run produces.

#include "massdist/estimator.hpp"
#include "massdist/explorer.hpp"
#include "massdist/interaction.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

namespace massdist {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct ExperimentConfig {
  int links = 2;
  Range mass{0.1, 1.0};
  Range friction{0.5, 1.0};
  Range length{0.1, 0.15};
  double joint_limit = 2.6;
  double noise_std = 0.01;
  int pushes = 5;

  long stage0_episodes = 2000;
  long episodes_per_meta = 2000;
  int meta_iterations = 2;
  long validation_episodes = 300;
  long test_episodes = 500;
  std::uint64_t seed = 0;
  int workers = 16;

  estimator::PredictorShape predictor;
  estimator::TrainSchedule schedule;
  // Steps used when the predictor is retrained on a fresh dataset.
  long finetune_steps = 50000;

  explorer::PolicyShape policy;
  explorer::PpoConfig ppo;
  long ppo_env_steps = 70000;
  int ppo_steps_per_worker = 128;
  // Rollout slots per PPO update. Fixed here rather than tied to the thread
  // count so results do not depend on how many threads run them.
  int ppo_parallel_envs = 16;
  double reward_beta = 1.0;

  PushParams push;

  /// Throws std::invalid_argument on degenerate ranges or sizes.
  void validate() const;
};

std::string to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the canonical JSON dump (minus the worker count), as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// Fresh chain with masses, friction and lengths drawn from the config ranges.
ChainModel sample_chain(const ExperimentConfig& cfg, Rng& rng);

}  // namespace massdist
