#include "massdist/errors.hpp"
#include "massdist/interaction.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace massdist;
using testing::max_abs;
using testing::random_chain;

TEST_CASE("action mapping: mirrored a1 picks the same point from opposite sides") {
  const ChainModel model = ChainModel::make({0.12, 0.14}, {0.3, 0.6}, 0.7);
  const Eigen::VectorXd q = Eigen::Vector4d(0.0, 0.0, 0.4, 0.8);
  for (double k : {0.2, 0.5, 1.0}) {
    const PushCommand p1 = resolve_action(model, q, {-k, 0.75});
    const PushCommand p2 = resolve_action(model, q, {+k, 0.75});
    CHECK(p1.link_index == 1);
    CHECK(p2.link_index == 1);
    CHECK(p1.local_offset == p2.local_offset);
    CHECK(p1.side == -p2.side);
    CHECK(p1.speed == p2.speed);
    CHECK(max_abs(p1.direction + p2.direction) < 1e-15);

    const PushCommand p3 = resolve_action(model, q, {+k, -0.75});
    CHECK(p3.link_index == 0);
  }
}

TEST_CASE("action mapping: a1 = 0 is the slowest push on the + side") {
  const ChainModel model = ChainModel::make({0.12, 0.14}, {0.3, 0.6}, 0.7);
  const PushCommand c = resolve_action(model, Eigen::Vector4d::Zero(), {0.0, 0.1});
  CHECK(c.speed == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(c.side == 1);
}

TEST_CASE("action mapping is total and reaches both faces of every link") {
  Rng rng(30);
  const ChainModel model = random_chain(rng, 3);
  const Eigen::VectorXd q = testing::random_q(rng, 3);
  std::set<std::pair<int, int>> faces;
  for (int i = -100; i <= 100; ++i) {
    for (int j = -100; j <= 100; ++j) {
      const PushCommand c = resolve_action(model, q, {i / 100.0, j / 100.0});
      REQUIRE(c.link_index >= 0);
      REQUIRE(c.link_index < 3);
      REQUIRE(std::abs(c.local_offset) <= 0.45 * model.lengths()[c.link_index] + 1e-15);
      REQUIRE(c.speed >= 0.1 - 1e-15);
      REQUIRE(c.speed <= 1.0 + 1e-15);
      REQUIRE(std::abs(c.direction.norm() - 1.0) < 1e-12);
      faces.insert({c.link_index, c.side});
    }
  }
  CHECK(faces.size() == 6);
  // Out-of-range actions are clamped, not rejected.
  CHECK(resolve_action(model, q, {5.0, -7.0}).link_index == 0);
}

TEST_CASE("zero-speed push leaves the chain where it was") {
  Rng rng(31);
  const ChainModel model = random_chain(rng, 2);
  const ChainState s = ChainState::at_rest(testing::random_q(rng, 2, 1.5));
  PushCommand cmd = resolve_action(model, s.q, {0.3, 0.2});
  cmd.speed = 0.0;
  const PushOutcome out = execute_push(model, s, cmd);
  CHECK(max_abs(out.state.q - s.q) < 1e-9);
}

TEST_CASE("push through the COM of a single link translates without turning") {
  const ChainModel body = ChainModel::make({0.12}, {0.5}, 0.6);
  // Long axis along world y, so the face normal points along world x.
  const ChainState s = ChainState::at_rest(Eigen::Vector3d(0, 0, std::numbers::pi / 2));
  PushCommand cmd;
  cmd.link_index = 0;
  cmd.local_offset = 0.0;
  cmd.side = 1;
  cmd.speed = 0.5;
  cmd.direction = Eigen::Vector2d::UnitX();
  const PushOutcome out = execute_push(body, s, cmd);
  CHECK(std::abs(out.state.q(2) - s.q(2)) < 1e-6);
  CHECK(out.state.q(0) > 0.01);
  CHECK(std::abs(out.state.q(1)) < 1e-6);
}

TEST_CASE("pushes are invariant to scaling every mass") {
  Rng rng(32);
  for (int trial = 0; trial < 5; ++trial) {
    const ChainModel model = random_chain(rng, 2 + trial % 2);
    const ChainModel heavy = model.with_scaled_masses(10.0);
    const ChainState s = random_initial_state(model, rng);
    const PushCommand cmd = resolve_action(model, s.q, {testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1)});
    const PushOutcome a = execute_push(model, s, cmd);
    const PushOutcome b = execute_push(heavy, s, cmd);
    CHECK(max_abs(a.state.q - b.state.q) < 1e-6);
  }
}

TEST_CASE("pusher only pushes") {
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const ChainModel model = random_chain(rng, 2 + trial % 2);
    const ChainState s = random_initial_state(model, rng);
    const PushCommand cmd = resolve_action(model, s.q, {testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1)});
    const PushOutcome out = execute_push(model, s, cmd);
    CHECK(out.contact_substeps > 0);
    for (double impulse : out.contact_impulses) REQUIRE(impulse >= 0.0);
    CHECK(out.state.qdot.norm() == 0.0);
  }
}

TEST_CASE("random initial state: root at origin, joints within 80 percent of limits") {
  Rng rng(34);
  const ChainModel model = random_chain(rng, 3);
  for (int i = 0; i < 200; ++i) {
    const ChainState s = random_initial_state(model, rng);
    REQUIRE(s.q(0) == 0.0);
    REQUIRE(s.q(1) == 0.0);
    REQUIRE(std::abs(s.q(2)) <= std::numbers::pi);
    REQUIRE(std::abs(s.q(3)) <= 0.8 * 2.6);
    REQUIRE(std::abs(s.q(4)) <= 0.8 * 2.6);
    REQUIRE(s.qdot.norm() == 0.0);
  }
}

TEST_CASE("rollout: lengths, ground truth, action bounds") {
  Rng rng(35);
  const ChainModel model = random_chain(rng, 2);
  const EpisodeTrajectory ep = rollout_episode(model, uniform_action_source(), 5, 0.01, rng);
  CHECK(ep.q_seq.size() == 6);
  CHECK(ep.a_seq.size() == 5);
  CHECK(ep.settle_steps.size() == 5);
  CHECK(ep.m_true == model.normalized_masses());
  for (const PushAction& a : ep.a_seq) {
    CHECK(std::abs(a.a1) <= 1.0);
    CHECK(std::abs(a.a2) <= 1.0);
  }
  for (int s : ep.settle_steps) CHECK(s < 20000);
}

TEST_CASE("rollout without noise and with a fixed action is deterministic") {
  const ChainModel model = ChainModel::make({0.12, 0.11}, {0.4, 0.9}, 0.6);
  auto run = [&] {
    Rng rng(36);
    return rollout_episode(model, fixed_action_source({0.4, -0.3}), 3, 0.0, rng);
  };
  const EpisodeTrajectory a = run(), b = run();
  REQUIRE(a.q_seq.size() == b.q_seq.size());
  for (std::size_t t = 0; t < a.q_seq.size(); ++t) CHECK(a.q_seq[t] == b.q_seq[t]);
  for (const PushAction& act : a.a_seq) {
    CHECK(act.a1 == 0.4);
    CHECK(act.a2 == -0.3);
  }
}

TEST_CASE("rollout with zero pushes holds only the initial observation") {
  Rng rng(37);
  const ChainModel model = random_chain(rng, 2);
  const EpisodeTrajectory ep = rollout_episode(model, uniform_action_source(), 0, 0.01, rng);
  CHECK(ep.q_seq.size() == 1);
  CHECK(ep.a_seq.empty());
}

TEST_CASE("settle timeout inside a rollout surfaces as EpisodeFailure") {
  Rng rng(38);
  const ChainModel model = random_chain(rng, 2);
  PushParams params;
  params.settle.max_steps = 5;
  CHECK_THROWS_AS(rollout_episode(model, uniform_action_source(), 2, 0.0, rng, params), EpisodeFailure);
}
