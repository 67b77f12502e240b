#include "massdist/errors.hpp"
#include "massdist/explorer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace massdist::explorer {

Advantages compute_gae(const RolloutBuffer& buffer, double gamma, double lambda, bool normalize) {
  Advantages out;
  for (const auto& ep : buffer.episodes) {
    const std::size_t T = ep.size();
    std::vector<double> adv(T, 0.0), ret(T, 0.0);
    double running = 0.0;
    for (std::size_t t = T; t-- > 0;) {
      const double next_value = ep.dones[t] ? 0.0 : (t + 1 < T ? ep.values[t + 1] : ep.bootstrap_value);
      const double not_done = ep.dones[t] ? 0.0 : 1.0;
      const double delta = ep.rewards[t] + gamma * next_value - ep.values[t];
      running = delta + gamma * lambda * not_done * running;
      adv[t] = running;
      ret[t] = adv[t] + ep.values[t];
    }
    out.advantages.push_back(std::move(adv));
    out.returns.push_back(std::move(ret));
  }
  if (normalize) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& a : out.advantages) {
      for (double v : a) {
        sum += v;
        sq += v * v;
        ++n;
      }
    }
    if (n > 1) {
      const double mean = sum / static_cast<double>(n);
      const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
      const double inv = 1.0 / (std::sqrt(var) + 1e-8);
      for (auto& a : out.advantages) {
        for (double& v : a) v = (v - mean) * inv;
      }
    }
  }
  return out;
}

double ppo_loss_and_grad(PolicyNet& policy, const RolloutBuffer& buffer, const Advantages& adv,
                         const std::vector<std::size_t>& episode_indices, const PpoConfig& cfg,
                         PpoMetrics* metrics) {
  // Group whole episodes by length so each group runs as one recurrent batch.
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  std::size_t samples = 0;
  for (std::size_t i : episode_indices) {
    by_length[buffer.episodes[i].size()].push_back(i);
    samples += buffer.episodes[i].size();
  }
  if (samples == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(samples);
  const Vec log_std = policy.log_std();
  const Vec inv_var = (-2.0 * log_std).array().exp();

  double policy_loss = 0.0, value_loss = 0.0;
  std::size_t clipped = 0;
  double kl = 0.0;
  Vec grad_log_std = Vec::Zero(2);

  for (const auto& [T, members] : by_length) {
    const auto B = static_cast<Eigen::Index>(members.size());
    const int H = policy.shape().lstm;
    std::vector<Mat> obs(T, Mat(policy.obs_dim(), B));
    nn::LstmState init = nn::LstmState::zeros(H, static_cast<int>(B));
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& ep = buffer.episodes[members[b]];
      for (std::size_t t = 0; t < T; ++t) obs[t].col(b) = ep.observations[t];
      init.hidden.col(b) = ep.state_snapshots.front().hidden.col(0);
      init.cell.col(b) = ep.state_snapshots.front().cell.col(0);
    }
    PolicyNet::Trace trace;
    const auto outs = policy.forward(obs, init, &trace);

    std::vector<Mat> grad_mean(T, Mat::Zero(2, B));
    std::vector<Mat> grad_value(T, Mat::Zero(1, B));
    for (std::size_t t = 0; t < T; ++t) {
      for (Eigen::Index b = 0; b < B; ++b) {
        const std::size_t e = members[b];
        const auto& ep = buffer.episodes[e];
        const Vec mean = outs[t].mean.col(b);
        const Vec& u = ep.pre_squash[t];
        const double logp = squashed_log_prob(u, mean, log_std);
        const double ratio = std::exp(logp - ep.log_probs[t]);
        const double A = adv.advantages[e][t];
        const double unclipped = ratio * A;
        const double clipped_obj = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * A;
        policy_loss += -std::min(unclipped, clipped_obj) * inv_n;
        if (std::abs(ratio - 1.0) > cfg.clip) ++clipped;
        kl += (ep.log_probs[t] - logp) * inv_n;

        if (unclipped <= clipped_obj) {
          // d(-ratio A)/d logp = -ratio A
          const double g = -ratio * A * inv_n;
          const Vec diff = u - mean;
          grad_mean[t].col(b) = g * diff.cwiseProduct(inv_var);
          grad_log_std += g * (diff.cwiseAbs2().cwiseProduct(inv_var).array() - 1.0).matrix();
        }

        const double v = outs[t].value(0, b);
        const double err = v - adv.returns[e][t];
        value_loss += cfg.value_coef * err * err * inv_n;
        grad_value[t](0, b) = 2.0 * cfg.value_coef * err * inv_n;
      }
    }
    policy.backward(trace, grad_mean, grad_value, Vec::Zero(2));
  }

  const double entropy = gaussian_entropy(log_std);
  grad_log_std -= Vec::Constant(2, cfg.entropy_coef);
  policy.params()[policy.log_std_block()].grad.col(0) += grad_log_std;

  if (metrics) {
    metrics->policy_loss = policy_loss;
    metrics->value_loss = value_loss;
    metrics->entropy = entropy;
    metrics->clip_fraction = static_cast<double>(clipped) * inv_n;
    metrics->approx_kl = kl;
  }
  return policy_loss + value_loss - cfg.entropy_coef * entropy;
}

namespace {

double replay_mismatch(const PolicyNet& policy, const RolloutBuffer& buffer) {
  double worst = 0.0;
  const Vec log_std = policy.log_std();
  for (const auto& ep : buffer.episodes) {
    nn::LstmState state = ep.state_snapshots.front();
    for (std::size_t t = 0; t < ep.size(); ++t) {
      const auto out = policy.step(ep.observations[t], state);
      const double logp = squashed_log_prob(ep.pre_squash[t], out.mean.col(0), log_std);
      worst = std::max({worst, std::abs(logp - ep.log_probs[t]), std::abs(out.value(0, 0) - ep.values[t]),
                        (out.state.hidden - (t + 1 < ep.size() ? ep.state_snapshots[t + 1].hidden
                                                               : out.state.hidden))
                            .cwiseAbs()
                            .maxCoeff()});
      state = out.state;
    }
  }
  return worst;
}

}  // namespace

PpoMetrics ppo_update(PolicyNet& policy, nn::AdamState& adam, const RolloutBuffer& buffer,
                      const PpoConfig& cfg, Rng& rng) {
  PpoMetrics summary;
  if (buffer.episodes.empty()) return summary;
  summary.replay_mismatch = replay_mismatch(policy, buffer);
  const Advantages adv = compute_gae(buffer, cfg.gamma, cfg.lambda, true);

  std::vector<std::size_t> order(buffer.episodes.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = static_cast<std::size_t>(std::max(1, cfg.minibatch_episodes));
  int batches = 0;
  PpoMetrics acc;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                         order.begin() + static_cast<long>(std::min(order.size(), start + mb)));
      policy.params().zero_grad();
      PpoMetrics m;
      ppo_loss_and_grad(policy, buffer, adv, idx, cfg, &m);
      if (!policy.params().grads_finite()) throw NonFiniteGradient("non-finite PPO gradient");
      if (cfg.max_grad_norm > 0.0) nn::clip_grad_norm(policy.params(), cfg.max_grad_norm);
      nn::adam_update(policy.params(), cfg.lr, adam);
      policy.clamp_log_std();
      acc.policy_loss += m.policy_loss;
      acc.value_loss += m.value_loss;
      acc.entropy += m.entropy;
      acc.clip_fraction += m.clip_fraction;
      acc.approx_kl += m.approx_kl;
      ++batches;
    }
  }
  if (batches > 0) {
    summary.policy_loss = acc.policy_loss / batches;
    summary.value_loss = acc.value_loss / batches;
    summary.entropy = acc.entropy / batches;
    summary.clip_fraction = acc.clip_fraction / batches;
    summary.approx_kl = acc.approx_kl / batches;
  }
  return summary;
}

}  // namespace massdist::explorer
