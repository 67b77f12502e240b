#pragma once

#include "massdist/chain_sim.hpp"
#include "massdist/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace massdist {

struct PushAction {
  double a1 = 0.0;  // side (sign) and speed (magnitude)
  double a2 = 0.0;  // link and point along it

  PushAction clamped() const;
  Eigen::Vector2d vec() const { return {a1, a2}; }
};

struct PushCommand {
  int link_index = 0;
  double local_offset = 0.0;  // from link COM along the long axis, m
  int side = 1;               // +1 strikes the +normal face, -1 the other
  double speed = 0.0;         // m/s
  Eigen::Vector2d direction = Eigen::Vector2d::UnitX();  // inward face normal, world frame
};

struct PushParams {
  double min_speed = 0.1;
  double max_speed = 1.0;
  double offset_fraction = 0.9;  // of the half-length
  int control_steps = 10;
  int substeps = 10;
  SettleOptions settle;
};

struct EpisodeTrajectory {
  std::vector<Eigen::VectorXd> q_seq;  // E+1 observations (noisy)
  std::vector<PushAction> a_seq;       // E executed actions (noisy, clamped)
  Eigen::VectorXd m_true;
  std::uint64_t seed = 0;
  double mu = 0.0;
  std::vector<double> lengths;
  std::vector<int> settle_steps;  // diagnostic, one per push

  int pushes() const { return static_cast<int>(a_seq.size()); }
  int links() const { return static_cast<int>(m_true.size()); }
};

/// Map a (clamped) policy action to a physical push. Total on [-1, 1]^2.
PushCommand resolve_action(const ChainModel& model, const Eigen::VectorXd& q,
                           const PushAction& action, const PushParams& params = {});

/// Contact point of a command in link-local coordinates (on the struck face).
LocalPoint contact_point(const ChainModel& model, const PushCommand& cmd);

struct PushOutcome {
  ChainState state;
  int settle_steps = 0;
  // Impulse delivered by the pusher on every sub-step it was in contact.
  std::vector<double> contact_impulses;
  int contact_substeps = 0;
};

/// Drive the contact point at command.speed along command.direction for the
/// push window with a one-sided kinematic pusher, then settle.
PushOutcome execute_push(const ChainModel& model, const ChainState& state,
                         const PushCommand& command, const PushParams& params = {});

/// Random initial configuration: root at the origin, yaw uniform in
/// [-pi, pi], joints uniform within `joint_fraction` of their limits.
ChainState random_initial_state(const ChainModel& model, Rng& rng, double joint_fraction = 0.8);

// Receives the observation history (q_0 .. q_t, noisy) and returns the next action.
using ActionSource = std::function<PushAction(std::span<const Eigen::VectorXd>, Rng&)>;

ActionSource uniform_action_source();
ActionSource fixed_action_source(PushAction action);

/// Push-settle-observe loop. Throws EpisodeFailure when the chain fails to
/// settle or the dynamics degenerate.
EpisodeTrajectory rollout_episode(const ChainModel& model, const ActionSource& policy, int pushes,
                                  double noise_std, Rng& rng, const PushParams& params = {});

}  // namespace massdist
