#pragma once

// Recurrent predictor of the normalized mass distribution from a sequence
// of (observation, push, next observation) triples.

#include "massdist/interaction.hpp"
#include "massdist/neural.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace massdist::estimator {

using nn::Mat;
using nn::Vec;

// Root translation is expressed relative to the episode start and scaled to
// decimeters; every angle is encoded as a (sin, cos) pair.
inline constexpr double kTranslationScale = 10.0;

int observation_features(int links);
Vec encode_observation(const Eigen::VectorXd& q, const Eigen::VectorXd& q_start);

int step_features(int links);
/// Root motion between two equilibria in the body frame of the first:
/// (dx, dy) scaled like translations, then (sin, cos) of the yaw change.
Vec push_displacement(const Eigen::VectorXd& q_before, const Eigen::VectorXd& q_after);
/// Input at push t: joint angles (sin, cos) before, a_t, joint angles after,
/// push_displacement(q_t, q_{t+1}). Invariant to the root pose.
Vec step_input(const EpisodeTrajectory& ep, int t);

struct PredictorShape {
  int encoder = 32;
  int lstm = 64;
  int head = 32;
};

class Predictor {
 public:
  Predictor(int links, PredictorShape shape, std::uint64_t seed);

  int links() const { return links_; }
  int input_dim() const { return input_dim_; }
  const PredictorShape& shape() const { return shape_; }

  nn::NetworkParams& params() { return params_; }
  const nn::NetworkParams& params() const { return params_; }

  struct Trace {
    std::vector<nn::DenseCache> encoder;
    std::vector<nn::LstmStepCache> core;
    std::vector<nn::DenseCache> head;
    std::vector<nn::DenseCache> logits;
    std::vector<Mat> probs;
  };

  /// inputs[t] is (input_dim x batch); returns per-step simplex columns.
  std::vector<Mat> forward(const std::vector<Mat>& inputs, Trace* trace = nullptr) const;
  /// Accumulates parameter gradients from d(loss)/d(probs[t]).
  void backward(Trace& trace, const std::vector<Mat>& grad_probs);

  /// One estimate per push, each conditioned on everything up to (a_t, q_{t+1}).
  std::vector<Vec> predict_sequence(const EpisodeTrajectory& ep) const;

  /// Zero the output layer so every estimate is uniform.
  void zero_head();

 private:
  int links_;
  int input_dim_;
  PredictorShape shape_;
  nn::NetworkParams params_;
  nn::Dense encoder_;
  nn::Lstm core_;
  nn::Dense head_;
  nn::Dense logits_;
};

/// Stack episodes (equal push counts) into per-step input batches.
std::vector<Mat> batch_inputs(const std::vector<const EpisodeTrajectory*>& episodes);

/// Mean over steps of |m_true - m_hat_t|_2.
double loss(const std::vector<Vec>& predictions, const Vec& m_true);

/// Batch loss (mean over episodes of `loss`) with gradients accumulated into
/// the predictor's parameters (not zeroed first).
double loss_and_grad(Predictor& net, const std::vector<const EpisodeTrajectory*>& batch);

/// Mean final-step L1 error over episodes.
double final_step_l1(const Predictor& net, const std::vector<EpisodeTrajectory>& episodes);
/// Mean L1 error per push step.
std::vector<double> per_step_l1(const Predictor& net, const std::vector<EpisodeTrajectory>& episodes);

struct TrainSchedule {
  long total_steps = 50000;
  int batch_size = 16;
  double lr0 = 0.1;
  long halving_period = 16600;
  long eval_every = 1000;
  double grad_clip = 0.0;  // 0 disables
};

struct MetricsRow {
  long step = 0;
  double train_loss = 0.0;
  double val_l1 = 0.0;
  double lr = 0.0;
};

struct TrainProgress {
  long step = 0;
  std::vector<MetricsRow> history;
  double best_val = std::numeric_limits<double>::infinity();
  long best_step = -1;
  nn::NetworkParams current;
  nn::NetworkParams best;
};

struct TrainOptions {
  TrainSchedule schedule;
  std::uint64_t seed = 0;
  // Called after every evaluation; may persist the progress for resumption.
  std::function<void(const TrainProgress&)> on_eval;
  // Stop (without finishing) once this many steps are reached; for resume tests.
  std::optional<long> stop_after;
};

struct TrainResult {
  std::vector<MetricsRow> history;
  double best_val = 0.0;
  long best_step = 0;
  bool completed = true;
};

double learning_rate(const TrainSchedule& s, long step);

/// Minibatch SGD on the per-step distance loss. Leaves the best-validation
/// parameters in `net`. On NonFiniteGradient the best parameters so far are
/// restored before the exception propagates.
TrainResult train_predictor(Predictor& net, const std::vector<EpisodeTrajectory>& train,
                            const std::vector<EpisodeTrajectory>& validation,
                            const TrainOptions& opts,
                            std::optional<TrainProgress> resume = std::nullopt);

}  // namespace massdist::estimator
