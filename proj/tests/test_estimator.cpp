#include "massdist/errors.hpp"
#include "massdist/estimator.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace massdist;
using namespace massdist::estimator;

namespace {

std::vector<EpisodeTrajectory> make_episodes(int count, int links, std::uint64_t seed, int pushes = 3) {
  Rng rng(seed);
  std::vector<EpisodeTrajectory> out;
  while (static_cast<int>(out.size()) < count) {
    const ChainModel model = testing::random_chain(rng, links);
    out.push_back(rollout_episode(model, uniform_action_source(), pushes, 0.01, rng));
  }
  return out;
}

PredictorShape small_shape() { return {8, 12, 8}; }

}  // namespace

TEST_CASE("observation encoding is translation-relative and wrap-free") {
  const Eigen::VectorXd start = Eigen::Vector4d(1.0, -2.0, 0.3, 0.1);
  const Eigen::VectorXd q = Eigen::Vector4d(1.1, -2.0, 0.3 + 2 * std::numbers::pi, 0.1);
  const Vec enc = encode_observation(q, start);
  CHECK(enc.size() == observation_features(2));
  CHECK(enc(0) == doctest::Approx(0.1 * kTranslationScale));
  CHECK(enc(1) == doctest::Approx(0.0));
  const Vec same = encode_observation(Eigen::Vector4d(1.1, -2.0, 0.3, 0.1), start);
  CHECK((enc - same).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero head gives the uniform distribution at every step") {
  const auto eps = make_episodes(2, 3, 70);
  Predictor net(3, small_shape(), 1);
  net.zero_head();
  for (const auto& ep : eps) {
    for (const Vec& p : net.predict_sequence(ep)) {
      for (int i = 0; i < 3; ++i) CHECK(p(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("outputs are simplex vectors and independent of batch order") {
  const auto eps = make_episodes(4, 2, 71);
  Predictor net(2, small_shape(), 2);
  std::vector<const EpisodeTrajectory*> fwd, rev;
  for (const auto& e : eps) fwd.push_back(&e);
  rev.assign(fwd.rbegin(), fwd.rend());
  const auto a = net.forward(batch_inputs(fwd));
  const auto b = net.forward(batch_inputs(rev));
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (int c = 0; c < 4; ++c) {
      CHECK(std::abs(a[t].col(c).sum() - 1.0) < 1e-9);
      CHECK(a[t].col(c).minCoeff() >= 0.0);
      CHECK((a[t].col(c) - b[t].col(3 - c)).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
  // Batched forward agrees with the per-episode path.
  const auto single = net.predict_sequence(eps[1]);
  for (std::size_t t = 0; t < single.size(); ++t) CHECK((single[t] - a[t].col(1)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("distance loss contracts") {
  const Vec m_true = Eigen::Vector2d(1.0, 0.0);
  CHECK(loss({m_true, m_true}, m_true) == 0.0);
  CHECK(loss({Eigen::Vector2d(0.5, 0.5)}, m_true) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  const std::vector<Vec> preds = {Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.9, 0.1), Eigen::Vector2d(0.2, 0.8)};
  const std::vector<Vec> shuffled = {preds[2], preds[0], preds[1]};
  CHECK(loss(preds, m_true) == doctest::Approx(loss(shuffled, m_true)).epsilon(1e-15));
}

TEST_CASE("training loss equals an independent recomputation from predictions") {
  const auto eps = make_episodes(5, 2, 72);
  Predictor net(2, small_shape(), 3);
  std::vector<const EpisodeTrajectory*> batch;
  for (const auto& e : eps) batch.push_back(&e);
  net.params().zero_grad();
  const double l = loss_and_grad(net, batch);
  double expected = 0.0;
  for (const auto& e : eps) {
    const auto preds = net.predict_sequence(e);
    double per = 0.0;
    for (const Vec& p : preds) per += (p - e.m_true).norm();
    expected += per / static_cast<double>(preds.size());
  }
  expected /= static_cast<double>(eps.size());
  CHECK(std::abs(l - expected) < 1e-12);
}

TEST_CASE("predictor gradients match finite differences") {
  const auto eps = make_episodes(2, 2, 73, 2);
  Predictor net(2, {4, 5, 4}, 4);
  std::vector<const EpisodeTrajectory*> batch{&eps[0], &eps[1]};
  auto f = [&](nn::NetworkParams& p) {
    p.zero_grad();
    return loss_and_grad(net, batch);
  };
  CHECK(nn::gradient_check(net.params(), f).max_relative_error < 1e-4);
}

TEST_CASE("final-step and per-step L1 of a uniform predictor") {
  const auto eps = make_episodes(10, 2, 74);
  Predictor net(2, small_shape(), 5);
  net.zero_head();
  double expected = 0.0;
  for (const auto& e : eps) expected += (e.m_true - Vec::Constant(2, 0.5)).lpNorm<1>();
  expected /= 10.0;
  CHECK(final_step_l1(net, eps) == doctest::Approx(expected).epsilon(1e-12));
  for (double v : per_step_l1(net, eps)) CHECK(v == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule halves every period") {
  TrainSchedule s;
  s.lr0 = 0.1;
  s.halving_period = 100;
  CHECK(learning_rate(s, 0) == 0.1);
  CHECK(learning_rate(s, 99) == 0.1);
  CHECK(learning_rate(s, 100) == 0.05);
  CHECK(learning_rate(s, 250) == 0.025);
}

TEST_CASE("memorizing a single episode cuts the loss by more than half") {
  const auto eps = make_episodes(1, 2, 75);
  Predictor net(2, small_shape(), 6);
  const double before = loss(net.predict_sequence(eps[0]), eps[0].m_true);
  TrainOptions opts;
  opts.schedule.total_steps = 1000;
  opts.schedule.batch_size = 1;
  opts.schedule.lr0 = 0.1;
  opts.schedule.halving_period = 100000;
  opts.schedule.eval_every = 100;
  train_predictor(net, eps, {}, opts);
  const double after = loss(net.predict_sequence(eps[0]), eps[0].m_true);
  CHECK(after <= 0.5 * before);
}

TEST_CASE("training is deterministic and resumes exactly") {
  const auto train = make_episodes(20, 2, 76);
  const auto val = make_episodes(5, 2, 77);
  TrainOptions opts;
  opts.schedule.total_steps = 400;
  opts.schedule.batch_size = 4;
  opts.schedule.halving_period = 150;
  opts.schedule.eval_every = 100;
  opts.seed = 9;

  Predictor a(2, small_shape(), 7), b(2, small_shape(), 7);
  const TrainResult ra = train_predictor(a, train, val, opts);
  const TrainResult rb = train_predictor(b, train, val, opts);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].val_l1 == rb.history[i].val_l1);
  }

  Predictor c(2, small_shape(), 7);
  std::optional<TrainProgress> saved;
  TrainOptions interrupted = opts;
  interrupted.stop_after = 200;
  interrupted.on_eval = [&](const TrainProgress& p) { saved = p; };
  CHECK_FALSE(train_predictor(c, train, val, interrupted).completed);
  REQUIRE(saved.has_value());
  CHECK(saved->step == 200);

  Predictor d(2, small_shape(), 12345);  // different init; resume must overwrite it
  const TrainResult rd = train_predictor(d, train, val, opts, saved);
  CHECK(rd.completed);
  CHECK(std::abs(rd.best_val - ra.best_val) <= 1e-9);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[static_cast<int>(i)].value == d.params()[static_cast<int>(i)].value);
  }
}

TEST_CASE("empty training set is rejected") {
  Predictor net(2, small_shape(), 8);
  CHECK_THROWS_AS(train_predictor(net, {}, {}, TrainOptions{}), std::invalid_argument);
}
