#pragma once

// Dataset collection, alternating predictor/policy training, baselines and
// evaluation, plus the on-disk run directory they write into.

#include "massdist/config.hpp"
#include "massdist/dataset_io.hpp"
#include "massdist/estimator.hpp"
#include "massdist/explorer.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace massdist::meta {

// Episode seed ids are partitioned by split so train, validation and test
// episodes can never coincide: train ids live in [0, 1e9), validation in
// [1e9, 2e9), test in [2e9, 3e9). Within train and validation each stream
// (dataset stage or PPO phase) owns a block of 1e7 ids.
enum class Split { Train, Validation, Test };

inline constexpr std::uint64_t kSplitBlock = 1'000'000'000ULL;
inline constexpr std::uint64_t kStreamBlock = 10'000'000ULL;

std::uint64_t episode_seed_id(Split split, int stream, std::uint64_t index);
Split split_of(std::uint64_t seed_id);

// Streams: dataset of stage s uses 2s, the PPO phase of meta-iteration m uses 2m + 1.
inline int dataset_stream(int stage) { return 2 * stage; }
inline int ppo_stream(int meta_iteration) { return 2 * meta_iteration + 1; }

/// Builds a fresh action source per episode, so recurrent state never leaks.
using SourceFactory = std::function<ActionSource()>;
SourceFactory uniform_source_factory();
SourceFactory policy_source_factory(std::shared_ptr<const explorer::PolicyNet> policy, bool deterministic);

/// Roll out one episode from its seed id: model, initial state, actions and
/// noise all come from that id alone.
EpisodeTrajectory rollout_from_seed(const ExperimentConfig& cfg, const SourceFactory& source,
                                    std::uint64_t seed_id);

struct CollectStats {
  long attempts = 0;
  long failures = 0;
};

/// Exactly `count` successful episodes from consecutive seed ids of the
/// stream, in seed order, regardless of the worker count. Failed episodes are
/// skipped; CollectionStalled when more than 20 % of attempts fail.
std::vector<EpisodeTrajectory> collect_dataset(const SourceFactory& source, const ExperimentConfig& cfg,
                                               Split split, int stream, long count, int workers,
                                               CollectStats* stats = nullptr);

/// Mean over the sampler of 100 * |m_true - uniform|_1.
double uniform_guess_baseline(const ExperimentConfig& cfg, long samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Run directory

class RunDirectory {
 public:
  /// Creates the layout, or reopens it and checks the stored config hash
  /// (ConfigMismatch when it differs).
  RunDirectory(std::filesystem::path root, const ExperimentConfig& cfg);

  const std::filesystem::path& root() const { return root_; }
  const std::string& config_hash() const { return hash_; }
  std::filesystem::path dataset(const std::string& name) const;
  std::filesystem::path checkpoint(const std::string& name) const;
  std::filesystem::path metrics(const std::string& name) const;
  std::filesystem::path report(const std::string& ext) const;

  /// Append one manifest record listing artifacts that exist.
  void record(const std::string& event, const std::vector<std::filesystem::path>& artifacts) const;

 private:
  std::filesystem::path root_;
  std::string hash_;
};

std::string build_identifier();

// ---------------------------------------------------------------------------
// Training

struct HistoryRow {
  int meta_iteration = 0;  // 0 is the uniform-random stage
  double val_error = 0.0;  // 100 * final-step L1 on that stage's validation set
  long episodes_used = 0;  // cumulative predictor-training episodes
};

struct PpoRow {
  int meta_iteration = 0;
  int update = 0;
  double mean_reward = 0.0;
  double mean_prediction_error = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

struct TrainHooks {
  std::function<void(const std::string&)> log;
  // Stop the predictor training of the named phase after this many SGD steps
  // (simulates an interruption; the phase can then be resumed).
  std::optional<std::pair<std::string, long>> interrupt;
};

struct Interrupted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AlternateResult {
  // predictors[s] is the predictor after stage s: 0 is the uniform-random
  // (RP) predictor, 1 the single-meta-iteration (TP) predictor, the last one
  // the final (TP+) predictor.
  std::vector<std::unique_ptr<estimator::Predictor>> predictors;
  // policies[m - 1] is the policy trained in meta-iteration m.
  std::vector<std::shared_ptr<const explorer::PolicyNet>> policies;
  std::vector<HistoryRow> history;
  std::vector<PpoRow> ppo;

  const estimator::Predictor& final_predictor() const { return *predictors.back(); }
};

/// Action source that generated stage m's data: uniform for m = 0, the
/// sampled policy of meta-iteration m, or its mean action in the last one.
SourceFactory stage_source(const AlternateResult& result, const ExperimentConfig& cfg, int stage);

/// Stage 0 on uniform-random data; then per meta-iteration: PPO against the
/// frozen predictor, a fresh dataset under the frozen policy (mean action in
/// the last iteration), and retraining of the predictor on it.
AlternateResult alternate_train(const ExperimentConfig& cfg, const RunDirectory* run = nullptr,
                                const TrainHooks& hooks = {});

/// Predictor trained from scratch on uniform-random data with the episode
/// and SGD-step budget of the single-meta-iteration predictor.
std::unique_ptr<estimator::Predictor> train_rp_plus(const ExperimentConfig& cfg,
                                                    const RunDirectory* run = nullptr,
                                                    const TrainHooks& hooks = {});

/// Stage 0 alone.
std::unique_ptr<estimator::Predictor> train_rp(const ExperimentConfig& cfg, const RunDirectory* run = nullptr,
                                               const TrainHooks& hooks = {});

/// Episodes behind the predictor after `meta_iterations` iterations.
long predictor_episodes(const ExperimentConfig& cfg, int meta_iterations);

/// One PPO phase of `ppo_env_steps` pushes against a frozen predictor.
std::vector<PpoRow> train_policy(explorer::PolicyNet& policy, const estimator::Predictor& predictor,
                                 const ExperimentConfig& cfg, int meta_iteration);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalModel {
  std::string name;
  const estimator::Predictor* predictor = nullptr;
  SourceFactory source;
};

struct EvalRow {
  std::string name;
  double error_pct = 0.0;  // 100 * mean final-step L1
  std::vector<double> per_step;
  long episodes = 0;
  long failures = 0;
};

struct EvaluationReport {
  std::vector<EvalRow> rows;
  double monte_carlo_uniform_guess = 0.0;
  long test_episodes = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  const EvalRow* find(const std::string& name) const;
  std::string to_csv() const;
  std::string to_text() const;
};

/// Every model sees the same test seed ids; each drives its own action
/// source. A uniform-guess row is always appended.
EvaluationReport evaluate(const std::vector<EvalModel>& models, const ExperimentConfig& cfg,
                          std::uint64_t first_test_index = 0);

/// Load a predictor checkpoint; ConfigMismatch when it names another config.
std::unique_ptr<estimator::Predictor> load_predictor(const std::filesystem::path& path,
                                                     const ExperimentConfig& cfg);
std::shared_ptr<explorer::PolicyNet> load_policy(const std::filesystem::path& path,
                                                 const ExperimentConfig& cfg);

}  // namespace massdist::meta
