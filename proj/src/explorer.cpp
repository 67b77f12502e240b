#include "massdist/explorer.hpp"

#include "massdist/errors.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace massdist::explorer {

namespace {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2), stable for large |u|.
inline double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

}  // namespace

PolicyNet::PolicyNet(int obs_dim, PolicyShape shape, std::uint64_t seed)
    : obs_dim_(obs_dim), shape_(shape) {
  enc1_ = nn::Dense::create(params_, "pi.enc1", obs_dim, shape.encoder, true);
  enc2_ = nn::Dense::create(params_, "pi.enc2", shape.encoder, shape.encoder, true);
  core_ = nn::Lstm::create(params_, "pi.lstm", shape.encoder, shape.lstm);
  actor_ = nn::Dense::create(params_, "pi.actor", shape.lstm, 2, false);
  critic_ = nn::Dense::create(params_, "pi.critic", shape.lstm, 1, false);
  log_std_ = params_.add("pi.log_std", 2, 1);

  Rng rng(seed);
  enc1_.init(params_, rng);
  enc2_.init(params_, rng);
  core_.init(params_, rng);
  actor_.init(params_, rng);
  critic_.init(params_, rng);
  // Near-zero initial means keep early actions spread over the whole square.
  params_[actor_.weight].value *= 0.01;
  params_[log_std_].value.setConstant(shape.init_log_std);
  clamp_log_std();
}

Vec PolicyNet::log_std() const { return params_[log_std_].value.col(0); }

void PolicyNet::clamp_log_std() {
  auto& v = params_[log_std_].value;
  v = v.cwiseMax(kMinLogStd).cwiseMin(kMaxLogStd);
}

PolicyNet::StepOutput PolicyNet::step(const Mat& obs, const nn::LstmState& state) const {
  const Mat e1 = enc1_.forward(params_, obs);
  const Mat e2 = enc2_.forward(params_, e1);
  StepOutput out;
  out.state = core_.step(params_, e2, state);
  out.mean = actor_.forward(params_, out.state.hidden);
  out.value = critic_.forward(params_, out.state.hidden);
  return out;
}

std::vector<PolicyNet::StepOutput> PolicyNet::forward(const std::vector<Mat>& obs,
                                                      const nn::LstmState& initial,
                                                      Trace* trace) const {
  const std::size_t T = obs.size();
  if (trace) {
    *trace = Trace{};
    trace->enc1.resize(T);
    trace->enc2.resize(T);
    trace->actor.resize(T);
    trace->critic.resize(T);
    trace->core.resize(T);
  }
  std::vector<StepOutput> outs;
  outs.reserve(T);
  nn::LstmState state = initial;
  for (std::size_t t = 0; t < T; ++t) {
    const Mat e1 = enc1_.forward(params_, obs[t], trace ? &trace->enc1[t] : nullptr);
    const Mat e2 = enc2_.forward(params_, e1, trace ? &trace->enc2[t] : nullptr);
    state = core_.step(params_, e2, state, trace ? &trace->core[t] : nullptr);
    StepOutput o;
    o.mean = actor_.forward(params_, state.hidden, trace ? &trace->actor[t] : nullptr);
    o.value = critic_.forward(params_, state.hidden, trace ? &trace->critic[t] : nullptr);
    o.state = state;
    outs.push_back(std::move(o));
  }
  return outs;
}

void PolicyNet::backward(const Trace& trace, const std::vector<Mat>& grad_mean,
                         const std::vector<Mat>& grad_value, const Vec& grad_log_std) {
  const std::size_t T = grad_mean.size();
  std::vector<Mat> grad_hidden(T);
  for (std::size_t t = 0; t < T; ++t) {
    grad_hidden[t] = actor_.backward(params_, trace.actor[t], grad_mean[t]) +
                     critic_.backward(params_, trace.critic[t], grad_value[t]);
  }
  const std::vector<Mat> grad_e2 = core_.backward(params_, trace.core, grad_hidden);
  for (std::size_t t = 0; t < T; ++t) {
    const Mat grad_e1 = enc2_.backward(params_, trace.enc2[t], grad_e2[t]);
    enc1_.backward(params_, trace.enc1[t], grad_e1);
  }
  params_[log_std_].grad.col(0) += grad_log_std;
}

double squashed_log_prob(const Vec& u, const Vec& mean, const Vec& log_std) {
  double lp = 0.0;
  for (Eigen::Index d = 0; d < u.size(); ++d) {
    const double z = (u(d) - mean(d)) * std::exp(-log_std(d));
    lp += -0.5 * z * z - log_std(d) - 0.5 * std::log(2.0 * std::numbers::pi);
    lp -= log_one_minus_tanh_sq(u(d));
  }
  return lp;
}

double gaussian_entropy(const Vec& log_std) {
  return (log_std.array() + 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e)).sum();
}

ActionSample sample_action(const PolicyNet& policy, const Vec& obs, const nn::LstmState& state,
                           Rng& rng, bool deterministic) {
  if (obs.size() != policy.obs_dim()) throw ShapeMismatch("policy observation size");
  const PolicyNet::StepOutput out = policy.step(obs, state);
  const Vec mean = out.mean.col(0);
  const Vec log_std = policy.log_std();
  Vec u = mean;
  if (!deterministic) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index d = 0; d < u.size(); ++d) u(d) += std::exp(log_std(d)) * normal(rng);
  }
  ActionSample s;
  s.action = PushAction{std::tanh(u(0)), std::tanh(u(1))};
  s.pre_squash = u;
  s.log_prob = squashed_log_prob(u, mean, log_std);
  s.value = out.value(0, 0);
  s.next_state = out.state;
  return s;
}

double reward(const Vec& m_true, const Vec& m_hat, double beta) {
  return 1.0 - beta * (m_true - m_hat).lpNorm<1>();
}

std::size_t RolloutBuffer::steps() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.size();
  return n;
}

PolicyActor::PolicyActor(const PolicyNet& policy, bool deterministic)
    : policy_(&policy),
      deterministic_(deterministic),
      state_(nn::LstmState::zeros(policy.shape().lstm)) {}

PushAction PolicyActor::operator()(std::span<const Eigen::VectorXd> history, Rng& rng) {
  const Vec obs = estimator::encode_observation(history.back(), history.front());
  record_.state_snapshots.push_back(state_);
  ActionSample s = sample_action(*policy_, obs, state_, rng, deterministic_);
  record_.observations.push_back(obs);
  record_.pre_squash.push_back(s.pre_squash);
  record_.log_probs.push_back(s.log_prob);
  record_.values.push_back(s.value);
  state_ = std::move(s.next_state);
  return s.action;
}

EpisodeRecord PolicyActor::take_record() {
  EpisodeRecord r = std::move(record_);
  r.dones.assign(r.observations.size(), false);
  if (!r.dones.empty()) r.dones.back() = true;
  r.bootstrap_value = 0.0;
  record_ = EpisodeRecord{};
  state_ = nn::LstmState::zeros(policy_->shape().lstm);
  return r;
}

ActionSource policy_action_source(const PolicyNet& policy, bool deterministic) {
  auto actor = std::make_shared<PolicyActor>(policy, deterministic);
  return [actor](std::span<const Eigen::VectorXd> history, Rng& rng) { return (*actor)(history, rng); };
}

void score_episode(EpisodeRecord& record, const EpisodeTrajectory& traj,
                   const estimator::Predictor& predictor, double beta) {
  const auto preds = predictor.predict_sequence(traj);
  record.rewards.clear();
  double total = 0.0;
  for (const auto& p : preds) {
    record.rewards.push_back(reward(traj.m_true, p, beta));
    total += (p - traj.m_true).lpNorm<1>();
  }
  record.prediction_error = preds.empty() ? 0.0 : total / static_cast<double>(preds.size());
  record.final_error = preds.empty() ? 0.0 : (preds.back() - traj.m_true).lpNorm<1>();
}

}  // namespace massdist::explorer
