#include "massdist/estimator.hpp"

#include "massdist/errors.hpp"

#include <cmath>
#include <limits>
#include <unordered_set>

namespace massdist::estimator {

int observation_features(int links) { return 2 + 2 * links; }

Vec encode_observation(const Eigen::VectorXd& q, const Eigen::VectorXd& q_start) {
  const int angles = static_cast<int>(q.size()) - 2;
  Vec out(2 + 2 * angles);
  out(0) = kTranslationScale * (q(0) - q_start(0));
  out(1) = kTranslationScale * (q(1) - q_start(1));
  for (int i = 0; i < angles; ++i) {
    out(2 + 2 * i) = std::sin(q(2 + i));
    out(3 + 2 * i) = std::cos(q(2 + i));
  }
  return out;
}

int step_features(int links) { return 4 * (links - 1) + 2 + 4; }

Vec push_displacement(const Eigen::VectorXd& q_before, const Eigen::VectorXd& q_after) {
  // Root displacement in the frame of link 0 before the push, so the same
  // push on the same chain reads the same at any yaw.
  const double c = std::cos(q_before(2)), s = std::sin(q_before(2));
  const double dx = q_after(0) - q_before(0), dy = q_after(1) - q_before(1);
  const double dyaw = q_after(2) - q_before(2);
  Vec d(4);
  d << kTranslationScale * (c * dx + s * dy), kTranslationScale * (-s * dx + c * dy), std::sin(dyaw), std::cos(dyaw);
  return d;
}

namespace {

Vec joint_features(const Eigen::VectorXd& q) {
  const Eigen::Index joints = q.size() - 3;
  Vec out(2 * joints);
  for (Eigen::Index i = 0; i < joints; ++i) {
    out(2 * i) = std::sin(q(3 + i));
    out(2 * i + 1) = std::cos(q(3 + i));
  }
  return out;
}

}  // namespace

Vec step_input(const EpisodeTrajectory& ep, int t) {
  // Only quantities the physics can depend on: the plane is uniform, so the
  // absolute root pose carries no information about the masses.
  const Eigen::VectorXd& before = ep.q_seq[t];
  const Eigen::VectorXd& after = ep.q_seq[t + 1];
  const Vec jb = joint_features(before), ja = joint_features(after);
  const Vec moved = push_displacement(before, after);
  Vec x(jb.size() + 2 + ja.size() + moved.size());
  x << jb, ep.a_seq[t].a1, ep.a_seq[t].a2, ja, moved;
  return x;
}

// ---------------------------------------------------------------------------

Predictor::Predictor(int links, PredictorShape shape, std::uint64_t seed)
    : links_(links), input_dim_(step_features(links)), shape_(shape) {
  encoder_ = nn::Dense::create(params_, "pred.enc", input_dim_, shape.encoder, true);
  core_ = nn::Lstm::create(params_, "pred.lstm", shape.encoder, shape.lstm);
  head_ = nn::Dense::create(params_, "pred.head", shape.lstm, shape.head, true);
  logits_ = nn::Dense::create(params_, "pred.out", shape.head, links, false);
  Rng rng(seed);
  encoder_.init(params_, rng);
  core_.init(params_, rng);
  head_.init(params_, rng);
  logits_.init(params_, rng);
}

void Predictor::zero_head() {
  params_[logits_.weight].value.setZero();
  params_[logits_.bias].value.setZero();
}

std::vector<Mat> Predictor::forward(const std::vector<Mat>& inputs, Trace* trace) const {
  std::vector<Mat> probs;
  probs.reserve(inputs.size());
  if (inputs.empty()) return probs;
  const Eigen::Index batch = inputs.front().cols();
  nn::LstmState state = nn::LstmState::zeros(shape_.lstm, static_cast<int>(batch));
  if (trace) {
    *trace = Trace{};
    trace->encoder.resize(inputs.size());
    trace->core.resize(inputs.size());
    trace->head.resize(inputs.size());
    trace->logits.resize(inputs.size());
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t].cols() != batch) throw ShapeMismatch("predictor: batch size changes over time");
    const Mat e = encoder_.forward(params_, inputs[t], trace ? &trace->encoder[t] : nullptr);
    state = core_.step(params_, e, state, trace ? &trace->core[t] : nullptr);
    const Mat h = head_.forward(params_, state.hidden, trace ? &trace->head[t] : nullptr);
    const Mat z = logits_.forward(params_, h, trace ? &trace->logits[t] : nullptr);
    probs.push_back(nn::softmax(z));
  }
  if (trace) trace->probs = probs;
  return probs;
}

void Predictor::backward(Trace& trace, const std::vector<Mat>& grad_probs) {
  const std::size_t T = grad_probs.size();
  std::vector<Mat> grad_hidden(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Mat dz = nn::softmax_backward(trace.probs[t], grad_probs[t]);
    const Mat dh = logits_.backward(params_, trace.logits[t], dz);
    grad_hidden[t] = head_.backward(params_, trace.head[t], dh);
  }
  const std::vector<Mat> grad_enc = core_.backward(params_, trace.core, grad_hidden);
  for (std::size_t t = 0; t < T; ++t) encoder_.backward(params_, trace.encoder[t], grad_enc[t]);
}

std::vector<Vec> Predictor::predict_sequence(const EpisodeTrajectory& ep) const {
  if (ep.links() != links_) throw ShapeMismatch("episode link count differs from predictor");
  const std::vector<Mat> probs = forward(batch_inputs({&ep}));
  std::vector<Vec> out;
  out.reserve(probs.size());
  for (const auto& p : probs) out.push_back(p.col(0));
  return out;
}

std::vector<Mat> batch_inputs(const std::vector<const EpisodeTrajectory*>& episodes) {
  std::vector<Mat> inputs;
  if (episodes.empty()) return inputs;
  const int pushes = episodes.front()->pushes();
  const int links = episodes.front()->links();
  const int dim = step_features(links);
  const auto batch = static_cast<Eigen::Index>(episodes.size());
  for (const auto* ep : episodes) {
    if (ep->pushes() != pushes || ep->links() != links) {
      throw ShapeMismatch("episodes in a batch must share push and link counts");
    }
    if (static_cast<int>(ep->q_seq.size()) != pushes + 1) throw ShapeMismatch("malformed episode");
  }
  for (int t = 0; t < pushes; ++t) {
    Mat x(dim, batch);
    for (Eigen::Index b = 0; b < batch; ++b) x.col(b) = step_input(*episodes[b], t);
    inputs.push_back(std::move(x));
  }
  return inputs;
}

double loss(const std::vector<Vec>& predictions, const Vec& m_true) {
  if (predictions.empty()) throw std::invalid_argument("loss needs at least one prediction");
  double acc = 0.0;
  for (const auto& p : predictions) acc += (m_true - p).norm();
  return acc / static_cast<double>(predictions.size());
}

double loss_and_grad(Predictor& net, const std::vector<const EpisodeTrajectory*>& batch) {
  const std::vector<Mat> inputs = batch_inputs(batch);
  Predictor::Trace trace;
  const std::vector<Mat> probs = net.forward(inputs, &trace);
  const auto T = static_cast<double>(probs.size());
  const auto B = static_cast<double>(batch.size());
  double total = 0.0;
  std::vector<Mat> grads(probs.size());
  for (std::size_t t = 0; t < probs.size(); ++t) {
    grads[t] = Mat::Zero(probs[t].rows(), probs[t].cols());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Vec diff = probs[t].col(b) - batch[b]->m_true;
      const double d = diff.norm();
      total += d;
      if (d > 0.0) grads[t].col(b) = diff / (d * T * B);
    }
  }
  net.backward(trace, grads);
  return total / (T * B);
}

double final_step_l1(const Predictor& net, const std::vector<EpisodeTrajectory>& episodes) {
  if (episodes.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& ep : episodes) {
    const auto preds = net.predict_sequence(ep);
    acc += (preds.back() - ep.m_true).lpNorm<1>();
  }
  return acc / static_cast<double>(episodes.size());
}

std::vector<double> per_step_l1(const Predictor& net, const std::vector<EpisodeTrajectory>& episodes) {
  std::vector<double> curve;
  for (const auto& ep : episodes) {
    const auto preds = net.predict_sequence(ep);
    if (curve.empty()) curve.assign(preds.size(), 0.0);
    for (std::size_t t = 0; t < preds.size() && t < curve.size(); ++t) {
      curve[t] += (preds[t] - ep.m_true).lpNorm<1>();
    }
  }
  for (double& c : curve) c /= static_cast<double>(episodes.size());
  return curve;
}

// ---------------------------------------------------------------------------

double learning_rate(const TrainSchedule& s, long step) {
  if (s.halving_period <= 0) return s.lr0;
  return s.lr0 * std::pow(0.5, static_cast<double>(step / s.halving_period));
}

namespace {

std::vector<const EpisodeTrajectory*> sample_batch(const std::vector<EpisodeTrajectory>& data,
                                                   int batch_size, std::uint64_t seed, long step) {
  Rng rng(derive_seed(seed, {0x5eed'ba7cULL, static_cast<std::uint64_t>(step)}));
  const std::size_t n = data.size();
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(batch_size), n);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> chosen;
  std::unordered_set<std::size_t> seen;
  while (chosen.size() < want) {
    const std::size_t i = pick(rng);
    if (seen.insert(i).second) chosen.push_back(i);
  }
  std::vector<const EpisodeTrajectory*> batch;
  for (std::size_t i : chosen) batch.push_back(&data[i]);
  return batch;
}

}  // namespace

TrainResult train_predictor(Predictor& net, const std::vector<EpisodeTrajectory>& train,
                            const std::vector<EpisodeTrajectory>& validation,
                            const TrainOptions& opts, std::optional<TrainProgress> resume) {
  if (train.empty()) throw std::invalid_argument("training set is empty");
  const TrainSchedule& s = opts.schedule;

  TrainProgress progress;
  if (resume) {
    progress = std::move(*resume);
    net.params().assign_values(progress.current);
  } else {
    progress.current = net.params();
    progress.best = net.params();
  }

  double window_loss = 0.0;
  long window_steps = 0;
  while (progress.step < s.total_steps) {
    if (opts.stop_after && progress.step >= *opts.stop_after) {
      return {progress.history, progress.best_val, progress.best_step, false};
    }
    const auto batch = sample_batch(train, s.batch_size, opts.seed, progress.step);
    net.params().zero_grad();
    const double lr = learning_rate(s, progress.step);
    try {
      const double l = loss_and_grad(net, batch);
      if (s.grad_clip > 0.0) nn::clip_grad_norm(net.params(), s.grad_clip);
      nn::sgd_update(net.params(), lr);
      window_loss += l;
      ++window_steps;
    } catch (const NonFiniteGradient&) {
      net.params().assign_values(progress.best);
      throw;
    }
    ++progress.step;

    if (progress.step % s.eval_every == 0 || progress.step == s.total_steps) {
      MetricsRow row;
      row.step = progress.step;
      row.train_loss = window_steps ? window_loss / static_cast<double>(window_steps) : 0.0;
      row.val_l1 = validation.empty() ? row.train_loss : final_step_l1(net, validation);
      row.lr = lr;
      progress.history.push_back(row);
      window_loss = 0.0;
      window_steps = 0;
      progress.current.assign_values(net.params());
      if (row.val_l1 < progress.best_val) {
        progress.best_val = row.val_l1;
        progress.best_step = row.step;
        progress.best.assign_values(net.params());
      }
      if (opts.on_eval) opts.on_eval(progress);
    }
  }
  net.params().assign_values(progress.best);
  return {progress.history, progress.best_val, progress.best_step, true};
}

}  // namespace massdist::estimator
