#include "massdist/errors.hpp"
#include "massdist/explorer.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace massdist;
using namespace massdist::explorer;

namespace {

EpisodeRecord synthetic_episode(Rng& rng, int length, bool terminal) {
  EpisodeRecord e;
  for (int t = 0; t < length; ++t) {
    e.rewards.push_back(testing::uniform(rng, -1, 1));
    e.values.push_back(testing::uniform(rng, -1, 1));
    e.dones.push_back(terminal && t == length - 1);
  }
  e.bootstrap_value = terminal ? 0.0 : testing::uniform(rng, -1, 1);
  return e;
}

// Advantage straight from its definition: A_t = sum_l (gamma lambda)^l delta_{t+l}.
std::vector<double> gae_by_definition(const EpisodeRecord& e, double gamma, double lambda) {
  const std::size_t T = e.size();
  std::vector<double> delta(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double next = t + 1 < T ? e.values[t + 1] : (e.dones[t] ? 0.0 : e.bootstrap_value);
    delta[t] = e.rewards[t] + gamma * next - e.values[t];
  }
  std::vector<double> adv(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t l = 0; t + l < T; ++l) adv[t] += std::pow(gamma * lambda, static_cast<double>(l)) * delta[t + l];
  }
  return adv;
}

// Roll a policy through `episodes` episodes of `length` steps on random observations.
RolloutBuffer policy_buffer(const PolicyNet& policy, Rng& rng, int episodes, int length) {
  RolloutBuffer buffer;
  for (int i = 0; i < episodes; ++i) {
    EpisodeRecord e;
    nn::LstmState state = nn::LstmState::zeros(policy.shape().lstm);
    for (int t = 0; t < length; ++t) {
      const Vec obs = testing::random_vec(rng, policy.obs_dim());
      e.state_snapshots.push_back(state);
      const ActionSample s = sample_action(policy, obs, state, rng);
      e.observations.push_back(obs);
      e.pre_squash.push_back(s.pre_squash);
      e.log_probs.push_back(s.log_prob);
      e.values.push_back(s.value);
      e.rewards.push_back(testing::uniform(rng, -1, 1));
      e.dones.push_back(t == length - 1);
      state = s.next_state;
    }
    buffer.episodes.push_back(std::move(e));
  }
  return buffer;
}

}  // namespace

TEST_CASE("reward contracts and bounds") {
  const Vec a = Eigen::Vector2d(1, 0), b = Eigen::Vector2d(0, 1), h = Eigen::Vector2d(0.5, 0.5);
  CHECK(reward(a, a) == 1.0);
  CHECK(reward(a, b) == -1.0);
  CHECK(reward(a, h) == 0.0);
  Rng rng(80);
  for (int i = 0; i < 1000; ++i) {
    const Vec p = nn::softmax(testing::random_vec(rng, 3, 4.0)), q = nn::softmax(testing::random_vec(rng, 3, 4.0));
    const double beta = testing::uniform(rng, 0.1, 2.0);
    const double r = reward(p, q, beta);
    REQUIRE(r <= 1.0);
    REQUIRE(r >= 1.0 - 2.0 * beta - 1e-12);
  }
}

TEST_CASE("GAE: one-step case, telescoping sum, definition") {
  Rng rng(81);
  RolloutBuffer buffer;
  buffer.episodes.push_back(synthetic_episode(rng, 7, true));
  const Advantages g0 = compute_gae(buffer, 0.0, 0.7, false);
  for (std::size_t t = 0; t < 7; ++t) {
    CHECK(g0.advantages[0][t] == doctest::Approx(buffer.episodes[0].rewards[t] - buffer.episodes[0].values[t]));
  }

  RolloutBuffer ones;
  EpisodeRecord e;
  for (int t = 0; t < 6; ++t) {
    e.rewards.push_back(1.0);
    e.values.push_back(0.0);
    e.dones.push_back(t == 5);
  }
  ones.episodes.push_back(e);
  CHECK(compute_gae(ones, 1.0, 1.0, false).advantages[0][0] == doctest::Approx(6.0).epsilon(1e-15));

  RolloutBuffer mixed;
  for (int i = 0; i < 8; ++i) mixed.episodes.push_back(synthetic_episode(rng, 2 + i, i % 2 == 0));
  const Advantages g = compute_gae(mixed, 0.99, 0.95, false);
  double worst = 0.0;
  for (std::size_t i = 0; i < mixed.episodes.size(); ++i) {
    const auto expected = gae_by_definition(mixed.episodes[i], 0.99, 0.95);
    for (std::size_t t = 0; t < expected.size(); ++t) {
      worst = std::max(worst, std::abs(g.advantages[i][t] - expected[t]));
      CHECK(g.returns[i][t] == doctest::Approx(g.advantages[i][t] + mixed.episodes[i].values[t]));
    }
  }
  CHECK(worst < 1e-10);

  const Advantages n = compute_gae(mixed, 0.99, 0.95, true);
  double sum = 0.0, sq = 0.0, count = 0.0;
  for (const auto& ep : n.advantages) {
    for (double a : ep) {
      sum += a;
      sq += a * a;
      count += 1.0;
    }
  }
  CHECK(std::abs(sum / count) < 1e-12);
  CHECK(std::sqrt(sq / count) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("squashed density integrates to one over the action square") {
  const Vec mean = Eigen::Vector2d(0.3, -0.5), log_std = Eigen::Vector2d(-0.5, -0.2);
  const int N = 600;
  const double h = 2.0 / N;
  double total = 0.0;
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      const Vec u = Eigen::Vector2d(std::atanh(-1.0 + (i + 0.5) * h), std::atanh(-1.0 + (j + 0.5) * h));
      total += std::exp(squashed_log_prob(u, mean, log_std)) * h * h;
    }
  }
  CHECK(std::abs(total - 1.0) < 0.01);
}

TEST_CASE("sampling: deterministic mode, same seed same sample, bounded actions") {
  PolicyNet policy(6, {8, 8, -0.5}, 3);
  Rng rng(82);
  const Vec obs = testing::random_vec(rng, 6);
  const nn::LstmState s = nn::LstmState::zeros(8);
  const ActionSample det = sample_action(policy, obs, s, rng, true);
  const Vec mean = policy.step(obs, s).mean.col(0);
  CHECK(det.action.a1 == std::tanh(mean(0)));
  CHECK(det.action.a2 == std::tanh(mean(1)));

  Rng r1(5), r2(5);
  const ActionSample a = sample_action(policy, obs, s, r1), b = sample_action(policy, obs, s, r2);
  CHECK(a.action.a1 == b.action.a1);
  CHECK(a.action.a2 == b.action.a2);
  CHECK(a.log_prob == b.log_prob);

  for (int i = 0; i < 1000; ++i) {
    const ActionSample x = sample_action(policy, testing::random_vec(rng, 6, 10.0), s, rng);
    REQUIRE(std::abs(x.action.a1) <= 1.0);
    REQUIRE(std::abs(x.action.a2) <= 1.0);
  }
  CHECK_THROWS_AS(sample_action(policy, Vec::Zero(5), s, rng), ShapeMismatch);
}

TEST_CASE("log-std is clamped to its range") {
  PolicyNet policy(4, {8, 8, -0.5}, 4);
  auto& block = policy.params()[policy.log_std_block()].value;
  block(0, 0) = -20.0;
  block(1, 0) = 7.0;
  policy.clamp_log_std();
  CHECK(policy.log_std()(0) == kMinLogStd);
  CHECK(policy.log_std()(1) == kMaxLogStd);
}

TEST_CASE("unchanged policy: ratio one, clipping inactive, replay exact") {
  PolicyNet policy(5, {6, 7, -0.5}, 5);
  Rng rng(83);
  const RolloutBuffer buffer = policy_buffer(policy, rng, 6, 4);
  const Advantages adv = compute_gae(buffer, 0.99, 0.95);
  std::vector<std::size_t> all(buffer.episodes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  PpoConfig tight;
  PpoConfig loose;
  loose.clip = 1e9;
  PpoMetrics m;
  policy.params().zero_grad();
  ppo_loss_and_grad(policy, buffer, adv, all, tight, &m);
  const nn::NetworkParams clipped = policy.params();
  policy.params().zero_grad();
  ppo_loss_and_grad(policy, buffer, adv, all, loose);
  for (std::size_t b = 0; b < clipped.size(); ++b) {
    const int i = static_cast<int>(b);
    CHECK((clipped[i].grad - policy.params()[i].grad).cwiseAbs().maxCoeff() < 1e-15);
  }
  CHECK(m.clip_fraction == 0.0);
  CHECK(std::abs(m.approx_kl) < 1e-12);

  nn::AdamState adam;
  const PpoMetrics upd = ppo_update(policy, adam, buffer, tight, rng);
  CHECK(upd.replay_mismatch < 1e-10);
}

TEST_CASE("actor-critic loss gradient matches finite differences") {
  PolicyNet policy(4, {5, 6, -0.5}, 6);
  Rng rng(84);
  auto& actor = policy.params()[policy.params().index_of("pi.actor.W")].value;
  actor = testing::random_vec(rng, static_cast<int>(actor.size()), 0.3).reshaped(actor.rows(), actor.cols());
  const RolloutBuffer buffer = policy_buffer(policy, rng, 3, 3);
  const Advantages adv = compute_gae(buffer, 0.99, 0.95);
  const std::vector<std::size_t> all{0, 1, 2};
  auto f = [&](nn::NetworkParams& p) {
    p.zero_grad();
    return ppo_loss_and_grad(policy, buffer, adv, all, PpoConfig{});
  };
  CHECK(nn::gradient_check(policy.params(), f).max_relative_error < 1e-4);
}

TEST_CASE("PPO solves a one-step bandit") {
  const Vec target = Eigen::Vector2d(0.4, -0.3);
  PolicyNet policy(2, {16, 16, -0.5}, 7);
  PpoConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 4;
  cfg.minibatch_episodes = 32;
  cfg.entropy_coef = 0.0;
  nn::AdamState adam;
  Rng rng(85);
  const Vec obs = Vec::Ones(2);
  const nn::LstmState zero = nn::LstmState::zeros(16);
  long steps = 0;
  while (steps < 20000) {
    RolloutBuffer buffer;
    for (int i = 0; i < 128; ++i) {
      const ActionSample s = sample_action(policy, obs, zero, rng);
      EpisodeRecord e;
      e.observations.push_back(obs);
      e.pre_squash.push_back(s.pre_squash);
      e.log_probs.push_back(s.log_prob);
      e.values.push_back(s.value);
      e.rewards.push_back(-(s.action.vec() - target).lpNorm<1>());
      e.dones.push_back(true);
      e.state_snapshots.push_back(zero);
      buffer.episodes.push_back(std::move(e));
    }
    steps += 128;
    ppo_update(policy, adam, buffer, cfg, rng);
  }
  const Vec mean = policy.step(obs, zero).mean.col(0);
  const Vec action = mean.array().tanh();
  CHECK((action - target).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("policy actor records what PPO replays on a real chain") {
  PolicyNet policy(estimator::observation_features(2), {8, 8, -0.5}, 8);
  estimator::Predictor predictor(2, {6, 6, 6}, 9);
  Rng rng(86);
  RolloutBuffer buffer;
  for (int i = 0; i < 3; ++i) {
    const ChainModel model = testing::random_chain(rng, 2);
    PolicyActor actor(policy, false);
    const EpisodeTrajectory traj = rollout_episode(
        model, [&](std::span<const Eigen::VectorXd> h, Rng& r) { return actor(h, r); }, 4, 0.01, rng);
    EpisodeRecord rec = actor.take_record();
    score_episode(rec, traj, predictor);
    CHECK(rec.size() == 4);
    CHECK(rec.dones.back());
    CHECK(rec.prediction_error >= 0.0);
    for (double r : rec.rewards) CHECK(r <= 1.0);
    buffer.episodes.push_back(std::move(rec));
  }
  nn::AdamState adam;
  CHECK(ppo_update(policy, adam, buffer, PpoConfig{}, rng).replay_mismatch < 1e-10);
}
