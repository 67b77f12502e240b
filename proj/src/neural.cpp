#include "massdist/neural.hpp"

#include "massdist/errors.hpp"

#include <algorithm>
#include <cmath>

namespace massdist::nn {

int NetworkParams::add(const std::string& name, int rows, int cols) {
  for (const auto& b : blocks_) {
    if (b.name == name) throw std::invalid_argument("duplicate parameter block " + name);
  }
  blocks_.push_back({name, Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
  return static_cast<int>(blocks_.size()) - 1;
}

int NetworkParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return static_cast<int>(i);
  }
  throw std::out_of_range("no parameter block named " + name);
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += static_cast<std::size_t>(b.value.size());
  return n;
}

void NetworkParams::zero_grad() {
  for (auto& b : blocks_) b.grad.setZero();
}

bool NetworkParams::grads_finite() const {
  return std::all_of(blocks_.begin(), blocks_.end(), [](const ParamBlock& b) { return b.grad.allFinite(); });
}

bool NetworkParams::values_finite() const {
  return std::all_of(blocks_.begin(), blocks_.end(), [](const ParamBlock& b) { return b.value.allFinite(); });
}

void NetworkParams::assign_values(const NetworkParams& other) {
  if (other.blocks_.size() != blocks_.size()) throw ShapeMismatch("parameter block count differs");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& src = other.blocks_[i];
    auto& dst = blocks_[i];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols()) {
      throw ShapeMismatch("parameter block layout differs at " + dst.name);
    }
    dst.value = src.value;
  }
}

void NetworkParams::accumulate_grads(const NetworkParams& other) {
  if (other.blocks_.size() != blocks_.size()) throw ShapeMismatch("parameter block count differs");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].grad += other.blocks_[i].grad;
}

// ---------------------------------------------------------------------------
// Dense

namespace {

void check_rows(const Mat& x, int expected, const char* what) {
  if (x.rows() != expected) {
    throw ShapeMismatch(std::string(what) + ": expected " + std::to_string(expected) + " rows, got " +
                        std::to_string(x.rows()));
  }
}

void fill_uniform(Mat& m, Rng& rng, double limit) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  }
}

Mat orthogonal(int n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat a(n, n);
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = dist(rng);
  }
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(n, n);
  // Sign fix so the distribution is uniform over orthogonal matrices.
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < n; ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  return q;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Dense Dense::create(NetworkParams& p, const std::string& name, int in, int out, bool relu) {
  Dense d;
  d.weight = p.add(name + ".W", out, in);
  d.bias = p.add(name + ".b", out, 1);
  d.in = in;
  d.out = out;
  d.relu = relu;
  return d;
}

void Dense::init(NetworkParams& p, Rng& rng) const {
  const double limit = std::sqrt((relu ? 6.0 : 3.0) / in);
  fill_uniform(p[weight].value, rng, limit);
  p[bias].value.setZero();
}

Mat Dense::forward(const NetworkParams& p, const Mat& x, DenseCache* cache) const {
  check_rows(x, in, "dense input");
  Mat y = p[weight].value * x;
  y.colwise() += p[bias].value.col(0);
  if (relu) y = y.cwiseMax(0.0);
  if (cache) {
    cache->input = x;
    cache->output = y;
  }
  return y;
}

Mat Dense::backward(NetworkParams& p, const DenseCache& cache, const Mat& grad_out) const {
  check_rows(grad_out, out, "dense grad");
  Mat g = grad_out;
  if (relu) g = (cache.output.array() > 0.0).select(g, 0.0);
  p[weight].grad.noalias() += g * cache.input.transpose();
  p[bias].grad += g.rowwise().sum();
  return p[weight].value.transpose() * g;
}

// ---------------------------------------------------------------------------
// LSTM

LstmState LstmState::zeros(int width, int batch) {
  return {Mat::Zero(width, batch), Mat::Zero(width, batch)};
}

Lstm Lstm::create(NetworkParams& p, const std::string& name, int in, int hidden) {
  Lstm l;
  l.weight = p.add(name + ".W", 4 * hidden, in + hidden);
  l.bias = p.add(name + ".b", 4 * hidden, 1);
  l.in = in;
  l.hidden = hidden;
  return l;
}

void Lstm::init(NetworkParams& p, Rng& rng) const {
  Mat& W = p[weight].value;
  const double limit = std::sqrt(3.0 / in);
  for (int gate = 0; gate < 4; ++gate) {
    Mat input_block(hidden, in);
    fill_uniform(input_block, rng, limit);
    W.block(gate * hidden, 0, hidden, in) = input_block;
    W.block(gate * hidden, in, hidden, hidden) = orthogonal(hidden, rng);
  }
  Mat& b = p[bias].value;
  b.setZero();
  b.block(hidden, 0, hidden, 1).setOnes();
}

LstmState Lstm::step(const NetworkParams& p, const Mat& x, const LstmState& state,
                     LstmStepCache* cache) const {
  check_rows(x, in, "lstm input");
  check_rows(state.hidden, hidden, "lstm hidden");
  const Eigen::Index batch = x.cols();
  const Mat& W = p[weight].value;
  Mat z = W.leftCols(in) * x + W.rightCols(hidden) * state.hidden;
  z.colwise() += p[bias].value.col(0);

  const int H = hidden;
  Mat i = z.topRows(H).unaryExpr([](double v) { return sigmoid(v); });
  Mat f = z.middleRows(H, H).unaryExpr([](double v) { return sigmoid(v); });
  Mat o = z.middleRows(2 * H, H).unaryExpr([](double v) { return sigmoid(v); });
  Mat g = z.bottomRows(H).array().tanh().matrix();

  LstmState next;
  next.cell = f.cwiseProduct(state.cell) + i.cwiseProduct(g);
  Mat ct = next.cell.array().tanh().matrix();
  next.hidden = o.cwiseProduct(ct);
  (void)batch;

  if (cache) {
    cache->input = x;
    cache->prev_hidden = state.hidden;
    cache->prev_cell = state.cell;
    cache->in_gate = std::move(i);
    cache->forget_gate = std::move(f);
    cache->out_gate = std::move(o);
    cache->candidate = std::move(g);
    cache->cell = next.cell;
    cache->cell_tanh = std::move(ct);
  }
  return next;
}

std::vector<Mat> Lstm::backward(NetworkParams& p, const std::vector<LstmStepCache>& caches,
                                const std::vector<Mat>& grad_hidden) const {
  if (caches.size() != grad_hidden.size()) throw ShapeMismatch("lstm backward: sequence length mismatch");
  const int H = hidden;
  const std::size_t T = caches.size();
  std::vector<Mat> grad_inputs(T);
  if (T == 0) return grad_inputs;

  const Mat& W = p[weight].value;
  Mat& dW = p[weight].grad;
  Mat& db = p[bias].grad;
  const Eigen::Index batch = caches.front().input.cols();
  Mat dh_next = Mat::Zero(H, batch);
  Mat dc_next = Mat::Zero(H, batch);
  Mat dz(4 * H, batch);

  for (std::size_t step = T; step-- > 0;) {
    const LstmStepCache& c = caches[step];
    const Mat dh = grad_hidden[step] + dh_next;
    const Mat dc = dc_next + dh.cwiseProduct(c.out_gate)
                                 .cwiseProduct((1.0 - c.cell_tanh.array().square()).matrix());
    const Mat d_o = dh.cwiseProduct(c.cell_tanh);
    const Mat d_i = dc.cwiseProduct(c.candidate);
    const Mat d_g = dc.cwiseProduct(c.in_gate);
    const Mat d_f = dc.cwiseProduct(c.prev_cell);

    dz.topRows(H) = d_i.cwiseProduct((c.in_gate.array() * (1.0 - c.in_gate.array())).matrix());
    dz.middleRows(H, H) = d_f.cwiseProduct((c.forget_gate.array() * (1.0 - c.forget_gate.array())).matrix());
    dz.middleRows(2 * H, H) = d_o.cwiseProduct((c.out_gate.array() * (1.0 - c.out_gate.array())).matrix());
    dz.bottomRows(H) = d_g.cwiseProduct((1.0 - c.candidate.array().square()).matrix());

    dW.leftCols(in).noalias() += dz * c.input.transpose();
    dW.rightCols(hidden).noalias() += dz * c.prev_hidden.transpose();
    db += dz.rowwise().sum();

    grad_inputs[step] = W.leftCols(in).transpose() * dz;
    dh_next = W.rightCols(hidden).transpose() * dz;
    dc_next = dc.cwiseProduct(c.forget_gate);
  }
  return grad_inputs;
}

// ---------------------------------------------------------------------------
// Softmax

Mat softmax(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    const Eigen::ArrayXd e = (logits.col(j).array() - mx).exp();
    out.col(j) = (e / e.sum()).matrix();
  }
  return out;
}

Vec softmax(const Vec& logits) { return softmax(Mat(logits)).col(0); }

Mat softmax_backward(const Mat& probs, const Mat& grad_probs) {
  Mat out(probs.rows(), probs.cols());
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    const double inner = probs.col(j).dot(grad_probs.col(j));
    out.col(j) = probs.col(j).cwiseProduct((grad_probs.col(j).array() - inner).matrix());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

void sgd_update(NetworkParams& p, double lr) {
  if (!p.grads_finite()) throw NonFiniteGradient("non-finite gradient in SGD update");
  for (auto& b : p.blocks()) b.value -= lr * b.grad;
}

void adam_update(NetworkParams& p, double lr, AdamState& s) {
  if (!p.grads_finite()) throw NonFiniteGradient("non-finite gradient in Adam update");
  if (s.m.size() != p.size()) {
    s.m.clear();
    s.v.clear();
    for (const auto& b : p.blocks()) {
      s.m.push_back(Mat::Zero(b.value.rows(), b.value.cols()));
      s.v.push_back(Mat::Zero(b.value.rows(), b.value.cols()));
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& b = p[static_cast<int>(i)];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * b.grad;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * b.grad.cwiseAbs2();
    b.value.array() -= lr * (s.m[i].array() / c1) / ((s.v[i].array() / c2).sqrt() + s.eps);
  }
}

double clip_grad_norm(NetworkParams& p, double max_norm) {
  double sq = 0.0;
  for (const auto& b : p.blocks()) sq += b.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& b : p.blocks()) b.grad *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Gradient check

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport gradient_check(NetworkParams& p, const LossWithGrad& loss, double eps,
                               std::size_t stride) {
  loss(p);
  std::vector<Mat> analytic;
  for (const auto& b : p.blocks()) analytic.push_back(b.grad);

  GradCheckReport report;
  std::size_t counter = 0;
  for (std::size_t bi = 0; bi < p.size(); ++bi) {
    Mat& value = p[static_cast<int>(bi)].value;
    for (Eigen::Index k = 0; k < value.size(); ++k, ++counter) {
      if (counter % stride != 0) continue;
      double& x = value.data()[k];
      const double saved = x;
      x = saved + eps;
      const double up = loss(p);
      x = saved - eps;
      const double down = loss(p);
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[bi].data()[k], numeric);
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_block = p[static_cast<int>(bi)].name;
      }
    }
  }
  // Leave gradients consistent with the unperturbed parameters.
  loss(p);
  return report;
}

}  // namespace massdist::nn
