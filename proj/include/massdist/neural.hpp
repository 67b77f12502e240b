#pragma once

// Minimal double-precision network engine. Activations are column-major
// batches: a (features x batch) matrix per time step.

#include "massdist/rng.hpp"

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace massdist::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct ParamBlock {
  std::string name;
  Mat value;
  Mat grad;
};

class NetworkParams {
 public:
  /// Adds a zero-initialized block and returns its index. Names must be unique.
  int add(const std::string& name, int rows, int cols);

  ParamBlock& operator[](int i) { return blocks_.at(i); }
  const ParamBlock& operator[](int i) const { return blocks_.at(i); }
  int index_of(const std::string& name) const;

  std::size_t size() const { return blocks_.size(); }
  std::size_t parameter_count() const;
  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  void zero_grad();
  bool grads_finite() const;
  bool values_finite() const;
  /// Copy values from `other`; throws ShapeMismatch unless the layouts agree.
  void assign_values(const NetworkParams& other);
  /// Add `other`'s gradients into this one's.
  void accumulate_grads(const NetworkParams& other);

 private:
  std::vector<ParamBlock> blocks_;
};

// ---------------------------------------------------------------------------
// Layers

struct DenseCache {
  Mat input;
  Mat output;  // post-activation
};

struct Dense {
  int weight = -1;
  int bias = -1;
  int in = 0;
  int out = 0;
  bool relu = false;

  static Dense create(NetworkParams& p, const std::string& name, int in, int out, bool relu);
  void init(NetworkParams& p, Rng& rng) const;

  Mat forward(const NetworkParams& p, const Mat& x, DenseCache* cache = nullptr) const;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  Mat backward(NetworkParams& p, const DenseCache& cache, const Mat& grad_out) const;
};

struct LstmState {
  Mat hidden;
  Mat cell;

  static LstmState zeros(int width, int batch = 1);
  bool finite() const { return hidden.allFinite() && cell.allFinite(); }
};

struct LstmStepCache {
  Mat input;
  Mat prev_hidden;
  Mat prev_cell;
  Mat in_gate, forget_gate, out_gate, candidate;
  Mat cell;
  Mat cell_tanh;
};

// Gate order in the stacked weight matrix: input, forget, output, candidate.
struct Lstm {
  int weight = -1;  // 4H x (in + H)
  int bias = -1;    // 4H x 1
  int in = 0;
  int hidden = 0;

  static Lstm create(NetworkParams& p, const std::string& name, int in, int hidden);
  /// Orthogonal recurrent blocks, fan-in uniform input blocks, forget bias 1.
  void init(NetworkParams& p, Rng& rng) const;

  LstmState step(const NetworkParams& p, const Mat& x, const LstmState& state,
                 LstmStepCache* cache = nullptr) const;

  /// Backpropagation through time over a cached sequence. `grad_hidden[t]`
  /// is d(loss)/d(h_t) from layers above; returns d(loss)/d(x_t).
  std::vector<Mat> backward(NetworkParams& p, const std::vector<LstmStepCache>& caches,
                            const std::vector<Mat>& grad_hidden) const;
};

/// Column-wise softmax with max subtraction.
Mat softmax(const Mat& logits);
Vec softmax(const Vec& logits);
/// Gradient w.r.t. logits given softmax output and d(loss)/d(output).
Mat softmax_backward(const Mat& probs, const Mat& grad_probs);

// ---------------------------------------------------------------------------
// Optimizers

/// Throws NonFiniteGradient (without touching values) on NaN/Inf gradients.
void sgd_update(NetworkParams& p, double lr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;
};

void adam_update(NetworkParams& p, double lr, AdamState& state);

/// Global L2 gradient-norm clipping; returns the pre-clip norm.
double clip_grad_norm(NetworkParams& p, double max_norm);

// ---------------------------------------------------------------------------
// Verification

/// Evaluates the loss and fills gradients (after zeroing them itself).
using LossWithGrad = std::function<double(NetworkParams&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_block;
  std::size_t checked = 0;
};

/// Central differences over every parameter (or every `stride`-th one).
GradCheckReport gradient_check(NetworkParams& p, const LossWithGrad& loss, double eps = 1e-5,
                               std::size_t stride = 1);

double relative_error(double analytic, double numeric);

}  // namespace massdist::nn
