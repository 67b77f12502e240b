#pragma once

// Recurrent push policy and its PPO training.

#include "massdist/estimator.hpp"
#include "massdist/interaction.hpp"
#include "massdist/neural.hpp"

#include <vector>

namespace massdist::explorer {

using nn::Mat;
using nn::Vec;

inline constexpr double kMinLogStd = -5.0;
inline constexpr double kMaxLogStd = 1.0;

struct PolicyShape {
  int encoder = 64;
  int lstm = 64;
  double init_log_std = -0.5;
};

class PolicyNet {
 public:
  PolicyNet(int obs_dim, PolicyShape shape, std::uint64_t seed);

  int obs_dim() const { return obs_dim_; }
  const PolicyShape& shape() const { return shape_; }
  nn::NetworkParams& params() { return params_; }
  const nn::NetworkParams& params() const { return params_; }

  Vec log_std() const;
  void clamp_log_std();

  struct StepOutput {
    Mat mean;   // 2 x batch (pre-squash)
    Mat value;  // 1 x batch
    nn::LstmState state;
  };

  StepOutput step(const Mat& obs, const nn::LstmState& state) const;

  struct Trace {
    std::vector<nn::DenseCache> enc1, enc2, actor, critic;
    std::vector<nn::LstmStepCache> core;
  };

  /// Sequence forward from `initial` over obs[t] (obs_dim x batch).
  std::vector<StepOutput> forward(const std::vector<Mat>& obs, const nn::LstmState& initial,
                                  Trace* trace = nullptr) const;
  /// Accumulates gradients given d(loss)/d(mean_t), d(loss)/d(value_t), and
  /// d(loss)/d(log_std) (added directly).
  void backward(const Trace& trace, const std::vector<Mat>& grad_mean,
                const std::vector<Mat>& grad_value, const Vec& grad_log_std);

  int log_std_block() const { return log_std_; }

 private:
  int obs_dim_;
  PolicyShape shape_;
  nn::NetworkParams params_;
  nn::Dense enc1_, enc2_;
  nn::Lstm core_;
  nn::Dense actor_, critic_;
  int log_std_ = -1;
};

/// log N(u; mean, exp(log_std)) - sum log(1 - tanh(u)^2), per column.
double squashed_log_prob(const Vec& u, const Vec& mean, const Vec& log_std);
/// Differential entropy of the pre-squash Gaussian.
double gaussian_entropy(const Vec& log_std);

struct ActionSample {
  PushAction action;
  Vec pre_squash;
  double log_prob = 0.0;
  double value = 0.0;
  nn::LstmState next_state;
};

/// Draw from the tanh-squashed Gaussian; `deterministic` returns tanh(mean).
ActionSample sample_action(const PolicyNet& policy, const Vec& obs, const nn::LstmState& state,
                           Rng& rng, bool deterministic = false);

/// r = 1 - beta |m_true - m_hat|_1.
double reward(const Vec& m_true, const Vec& m_hat, double beta = 1.0);

struct EpisodeRecord {
  std::vector<Vec> observations;
  std::vector<Vec> pre_squash;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<bool> dones;
  std::vector<nn::LstmState> state_snapshots;  // recurrent state before each step
  double bootstrap_value = 0.0;                // value after the last step if not done
  double prediction_error = 0.0;               // mean per-step L1 of the predictor
  double final_error = 0.0;                    // final-step L1 of the predictor

  std::size_t size() const { return rewards.size(); }
};

struct RolloutBuffer {
  std::vector<EpisodeRecord> episodes;
  std::size_t steps() const;
};

struct Advantages {
  std::vector<std::vector<double>> advantages;  // per episode, per step
  std::vector<std::vector<double>> returns;
};

/// Generalized advantage estimation per episode; advantages are normalized
/// to zero mean and unit variance over the whole buffer when `normalize`.
Advantages compute_gae(const RolloutBuffer& buffer, double gamma, double lambda, bool normalize = true);

struct PpoConfig {
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  // Tuned at desk scale: 4 epochs of 64-episode minibatches at 1e-4 barely
  // moved the policy within a meta-iteration.
  int epochs = 10;
  int minibatch_episodes = 8;
  double lr = 3e-4;
  double gamma = 0.99;
  double lambda = 0.95;
  double max_grad_norm = 0.5;
};

struct PpoMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  // Largest |recomputed - stored| log-prob/value before the first epoch.
  double replay_mismatch = 0.0;
};

/// Clipped-surrogate loss over a set of whole episodes, with gradients
/// accumulated into the policy. Ratio/clip statistics go to `metrics`.
double ppo_loss_and_grad(PolicyNet& policy, const RolloutBuffer& buffer, const Advantages& adv,
                         const std::vector<std::size_t>& episode_indices, const PpoConfig& cfg,
                         PpoMetrics* metrics = nullptr);

PpoMetrics ppo_update(PolicyNet& policy, nn::AdamState& adam, const RolloutBuffer& buffer,
                      const PpoConfig& cfg, Rng& rng);

/// Action source that drives the policy and records what PPO needs.
class PolicyActor {
 public:
  PolicyActor(const PolicyNet& policy, bool deterministic);
  PushAction operator()(std::span<const Eigen::VectorXd> history, Rng& rng);
  EpisodeRecord take_record();

 private:
  const PolicyNet* policy_;
  bool deterministic_;
  nn::LstmState state_;
  EpisodeRecord record_;
};

ActionSource policy_action_source(const PolicyNet& policy, bool deterministic);

/// Fill rewards from the frozen predictor's per-step estimates.
void score_episode(EpisodeRecord& record, const EpisodeTrajectory& traj,
                   const estimator::Predictor& predictor, double beta = 1.0);

}  // namespace massdist::explorer
