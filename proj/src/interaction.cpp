#include "massdist/interaction.hpp"

#include "massdist/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace massdist {

namespace {
constexpr double kContactSlack = 1e-6;  // m
}

PushAction PushAction::clamped() const {
  return {std::clamp(a1, -1.0, 1.0), std::clamp(a2, -1.0, 1.0)};
}

PushCommand resolve_action(const ChainModel& model, const Eigen::VectorXd& q,
                           const PushAction& action, const PushParams& params) {
  const PushAction a = action.clamped();
  const int n = model.links();

  // a2 in [-1, 1] is split into n equal sub-intervals, one per link.
  const double scaled = 0.5 * (a.a2 + 1.0) * n;
  const int link = std::min(n - 1, static_cast<int>(std::floor(scaled)));
  const double frac = scaled - link;

  PushCommand cmd;
  cmd.link_index = link;
  cmd.local_offset = (2.0 * frac - 1.0) * params.offset_fraction * 0.5 * model.lengths()[link];
  cmd.side = a.a1 >= 0.0 ? 1 : -1;
  cmd.speed = params.min_speed + std::abs(a.a1) * (params.max_speed - params.min_speed);

  const double phi = kin::link_yaws(model, q)(link);
  const Eigen::Vector2d normal(-std::sin(phi), std::cos(phi));
  cmd.direction = -cmd.side * normal;
  return cmd;
}

LocalPoint contact_point(const ChainModel& model, const PushCommand& cmd) {
  return {cmd.local_offset, 0.5 * cmd.side * model.widths()[cmd.link_index]};
}

PushOutcome execute_push(const ChainModel& model, const ChainState& state,
                         const PushCommand& command, const PushParams& params) {
  const LocalPoint local = contact_point(model, command);
  const Eigen::Vector2d n = command.direction;
  const double dt = params.settle.step.dt;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.dofs());

  PushOutcome out;
  ChainState current = state;
  // The pusher has closed in on the resting chain; its tip starts on the face.
  Eigen::Vector2d pusher = kin::point_position(model, current.q, command.link_index, local);

  const int substeps = params.control_steps * params.substeps;
  for (int i = 0; i < substeps; ++i) {
    const Eigen::Vector2d material = kin::point_position(model, current.q, command.link_index, local);
    const bool in_contact = n.dot(material - pusher) <= kContactSlack;
    if (in_contact) {
      const PointVelocityBound bound{command.link_index, local, n, command.speed};
      StepResult r = step_with_bounds(model, current, zero, std::span(&bound, 1), params.settle.step);
      out.contact_impulses.push_back(r.bound_impulses.front());
      ++out.contact_substeps;
      current = std::move(r.state);
    } else {
      current = step(model, current, zero, params.settle.step);
    }
    pusher += command.speed * dt * n;
    if (!current.finite()) throw SettleTimeout("push produced a non-finite state");
  }

  SettleResult settled = settle(model, current, params.settle);
  out.state = std::move(settled.state);
  out.settle_steps = settled.steps;
  return out;
}

ChainState random_initial_state(const ChainModel& model, Rng& rng, double joint_fraction) {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(model.dofs());
  q(2) = uniform(rng, -std::numbers::pi, std::numbers::pi);
  for (int i = 1; i < model.links(); ++i) {
    const JointLimit lim = model.joint_limits()[i - 1];
    const double mid = 0.5 * (lim.lo + lim.hi);
    const double half = 0.5 * (lim.hi - lim.lo) * joint_fraction;
    q(2 + i) = uniform(rng, mid - half, mid + half);
  }
  return ChainState::at_rest(std::move(q));
}

ActionSource uniform_action_source() {
  return [](std::span<const Eigen::VectorXd>, Rng& rng) {
    const double a1 = uniform(rng, -1.0, 1.0);
    const double a2 = uniform(rng, -1.0, 1.0);
    return PushAction{a1, a2};
  };
}

ActionSource fixed_action_source(PushAction action) {
  return [action](std::span<const Eigen::VectorXd>, Rng&) { return action; };
}

EpisodeTrajectory rollout_episode(const ChainModel& model, const ActionSource& policy, int pushes,
                                  double noise_std, Rng& rng, const PushParams& params) {
  if (pushes < 0) throw std::invalid_argument("push count must be non-negative");
  EpisodeTrajectory traj;
  traj.m_true = model.normalized_masses();
  traj.mu = model.mu();
  traj.lengths = model.lengths();

  auto observe = [&](const ChainState& s) {
    Eigen::VectorXd obs = s.q;
    for (int i = 0; i < obs.size(); ++i) obs(i) += gaussian(rng, noise_std);
    return obs;
  };

  ChainState state = random_initial_state(model, rng);
  traj.q_seq.push_back(observe(state));
  try {
    for (int t = 0; t < pushes; ++t) {
      const PushAction chosen = policy(std::span<const Eigen::VectorXd>(traj.q_seq), rng);
      PushAction executed{chosen.a1 + gaussian(rng, noise_std), chosen.a2 + gaussian(rng, noise_std)};
      executed = executed.clamped();
      const PushCommand cmd = resolve_action(model, state.q, executed, params);
      PushOutcome outcome = execute_push(model, state, cmd, params);
      state = std::move(outcome.state);
      traj.a_seq.push_back(executed);
      traj.settle_steps.push_back(outcome.settle_steps);
      traj.q_seq.push_back(observe(state));
    }
  } catch (const SettleTimeout& e) {
    throw EpisodeFailure(e.what());
  } catch (const SingularMassMatrix& e) {
    throw EpisodeFailure(e.what());
  }
  return traj;
}

}  // namespace massdist
