#include "massdist/verify.hpp"

#include "massdist/estimator.hpp"
#include "massdist/explorer.hpp"
#include "massdist/identifiability.hpp"
#include "massdist/interaction.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

namespace massdist::verify {

namespace {

using nn::Mat;
using nn::Vec;

CheckResult timed(const std::string& suite, const std::string& name,
                  const std::function<std::pair<bool, std::string>()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  r.suite = suite;
  r.name = name;
  try {
    auto [ok, detail] = body();
    r.passed = ok;
    r.detail = std::move(detail);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("threw: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

ChainModel random_chain(Rng& rng, int links) {
  std::vector<double> lengths(links), masses(links);
  for (auto& l : lengths) l = uniform(rng, 0.1, 0.15);
  for (auto& m : masses) m = uniform(rng, 0.1, 1.0);
  return ChainModel::make(lengths, masses, uniform(rng, 0.5, 1.0));
}

Eigen::VectorXd random_q(Rng& rng, int links) {
  Eigen::VectorXd q(links + 2);
  q(0) = uniform(rng, -0.5, 0.5);
  q(1) = uniform(rng, -0.5, 0.5);
  q(2) = uniform(rng, -std::numbers::pi, std::numbers::pi);
  for (int i = 3; i < q.size(); ++i) q(i) = uniform(rng, -2.0, 2.0);
  return q;
}

Eigen::VectorXd random_vec(Rng& rng, int n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = uniform(rng, -scale, scale);
  return v;
}

Mat random_mat(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -1.0, 1.0);
  return m;
}

std::pair<bool, std::string> grad_verdict(const nn::GradCheckReport& rep) {
  return {rep.max_relative_error < kGradientTol,
          "max rel err " + fmt(rep.max_relative_error) + " (" + rep.worst_block + ", " +
              std::to_string(rep.checked) + " params)"};
}

// Synthetic episode with plausible features; no simulation needed for gradients.
EpisodeTrajectory synthetic_episode(Rng& rng, int links, int pushes) {
  EpisodeTrajectory ep;
  for (int t = 0; t <= pushes; ++t) ep.q_seq.push_back(random_q(rng, links) * 0.5);
  for (int t = 0; t < pushes; ++t) ep.a_seq.push_back({uniform(rng, -1, 1), uniform(rng, -1, 1)});
  Eigen::VectorXd m = random_vec(rng, links).cwiseAbs().array() + 0.1;
  ep.m_true = m / m.sum();
  ep.lengths.assign(links, 0.1);
  return ep;
}

}  // namespace

double stopping_distance(double v0, double mu, const FrictionParams& friction) {
  const ChainModel body = ChainModel::make({0.1}, {1.0}, mu);
  ChainState s = ChainState::at_rest(Eigen::VectorXd::Zero(3));
  s.qdot(0) = v0;
  StepOptions opts;
  opts.friction = friction;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  for (int i = 0; i < 20000 && s.qdot.norm() > 1e-12; ++i) s = step(body, s, zero, opts);
  return s.q(0);
}

std::vector<CheckResult> physics_suite(const VerifyOptions& opts) {
  const std::string suite = "physics";
  std::vector<CheckResult> out;

  out.push_back(timed(suite, "stopping distance", [&] {
    const double v0 = 0.5, mu = 0.5;
    const double expected = v0 * v0 / (2.0 * mu * ChainModel::kGravity);
    const double d = stopping_distance(v0, mu, opts.friction);
    const double rel = std::abs(d - expected) / expected;
    return std::pair{rel < kStoppingDistanceTol,
                     "slid " + fmt(d) + " m, expected " + fmt(expected) + " (rel err " + fmt(rel) + ")"};
  }));

  out.push_back(timed(suite, "energy monotone without input", [&] {
    Rng rng(derive_seed(opts.seed, {1}));
    StepOptions so;
    so.friction = opts.friction;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const ChainModel model = random_chain(rng, 2 + trial % 2);
      ChainState s{random_q(rng, model.links()), random_vec(rng, model.dofs(), 0.5)};
      s = resolve_joint_limits(model, s).state;
      const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.dofs());
      double prev = kinetic_energy(model, s);
      for (int i = 0; i < 300; ++i) {
        s = step(model, s, zero, so);
        const double e = kinetic_energy(model, s);
        worst = std::max(worst, e - prev);
        prev = e;
      }
    }
    return std::pair{worst <= 1e-12, "largest per-step energy gain " + fmt(worst) + " J"};
  }));

  out.push_back(timed(suite, "passivity", [&] {
    Rng rng(derive_seed(opts.seed, {2}));
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const ChainModel model = random_chain(rng, 2 + i % 2);
      const Eigen::VectorXd q = random_q(rng, model.links());
      const Eigen::VectorXd qd = random_vec(rng, model.dofs());
      const auto dM = mass_matrix_derivatives(model, q);
      Eigen::MatrixXd Mdot = Eigen::MatrixXd::Zero(model.dofs(), model.dofs());
      for (int k = 0; k < model.dofs(); ++k) Mdot += dM[k] * qd(k);
      const Eigen::MatrixXd C = coriolis_matrix(model, q, qd);
      worst = std::max(worst, std::abs(qd.dot((Mdot - 2.0 * C) * qd)));
    }
    return std::pair{worst < kPassivityTol, "max |qd'(Mdot - 2C)qd| " + fmt(worst)};
  }));

  out.push_back(timed(suite, "mass-scaling invariance", [&] {
    double worst = 0.0;
    PushParams params;
    params.settle.step.friction = opts.friction;
    for (int ep = 0; ep < 100; ++ep) {
      Rng model_rng(derive_seed(opts.seed, {3, static_cast<std::uint64_t>(ep)}));
      const ChainModel model = random_chain(model_rng, 2);
      const ChainModel heavy = model.with_scaled_masses(10.0);
      Rng r1(derive_seed(opts.seed, {4, static_cast<std::uint64_t>(ep)}));
      Rng r2 = r1;
      const auto a = rollout_episode(model, uniform_action_source(), 3, 0.0, r1, params);
      const auto b = rollout_episode(heavy, uniform_action_source(), 3, 0.0, r2, params);
      worst = std::max(worst, (a.q_seq.back() - b.q_seq.back()).cwiseAbs().maxCoeff());
    }
    return std::pair{worst < kMassScalingTol, "max equilibrium difference " + fmt(worst)};
  }));

  out.push_back(timed(suite, "settle idempotent", [&] {
    Rng rng(derive_seed(opts.seed, {5}));
    const ChainModel model = random_chain(rng, 2);
    SettleOptions so;
    so.step.friction = opts.friction;
    ChainState s{random_q(rng, 2), random_vec(rng, 4, 0.3)};
    s = resolve_joint_limits(model, s).state;
    const SettleResult first = settle(model, s, so);
    const SettleResult second = settle(model, first.state, so);
    const double moved = (second.state.q - first.state.q).cwiseAbs().maxCoeff();
    return std::pair{moved < 1e-12, "resettling moved " + fmt(moved)};
  }));
  return out;
}

std::vector<CheckResult> gradients_suite(const VerifyOptions& opts) {
  const std::string suite = "gradients";
  std::vector<CheckResult> out;
  Rng rng(derive_seed(opts.seed, {10}));

  for (bool relu : {false, true}) {
    out.push_back(timed(suite, relu ? "dense relu" : "dense linear", [&] {
      nn::NetworkParams p;
      const nn::Dense layer = nn::Dense::create(p, "d", 5, 4, relu);
      layer.init(p, rng);
      const Mat x = random_mat(rng, 5, 3), w = random_mat(rng, 4, 3);
      return grad_verdict(nn::gradient_check(p, [&](nn::NetworkParams& q) {
        q.zero_grad();
        nn::DenseCache c;
        const Mat y = layer.forward(q, x, &c);
        layer.backward(q, c, w);
        return y.cwiseProduct(w).sum();
      }));
    }));
  }

  out.push_back(timed(suite, "lstm through time", [&] {
    nn::NetworkParams p;
    const nn::Lstm lstm = nn::Lstm::create(p, "l", 3, 5);
    lstm.init(p, rng);
    std::vector<Mat> xs, ws;
    for (int t = 0; t < 4; ++t) {
      xs.push_back(random_mat(rng, 3, 2));
      ws.push_back(random_mat(rng, 5, 2));
    }
    return grad_verdict(nn::gradient_check(p, [&](nn::NetworkParams& q) {
      q.zero_grad();
      std::vector<nn::LstmStepCache> caches(xs.size());
      nn::LstmState s = nn::LstmState::zeros(5, 2);
      double l = 0.0;
      for (std::size_t t = 0; t < xs.size(); ++t) {
        s = lstm.step(q, xs[t], s, &caches[t]);
        l += s.hidden.cwiseProduct(ws[t]).sum();
      }
      lstm.backward(q, caches, ws);
      return l;
    }));
  }));

  out.push_back(timed(suite, "softmax head", [&] {
    nn::NetworkParams p;
    const nn::Dense layer = nn::Dense::create(p, "s", 4, 3, false);
    layer.init(p, rng);
    const Mat x = random_mat(rng, 4, 2), w = random_mat(rng, 3, 2);
    return grad_verdict(nn::gradient_check(p, [&](nn::NetworkParams& q) {
      q.zero_grad();
      nn::DenseCache c;
      const Mat probs = nn::softmax(layer.forward(q, x, &c));
      layer.backward(q, c, nn::softmax_backward(probs, w));
      return probs.cwiseProduct(w).sum();
    }));
  }));

  out.push_back(timed(suite, "predictor stack", [&] {
    estimator::Predictor net(2, {}, derive_seed(opts.seed, {11}));
    std::vector<EpisodeTrajectory> eps;
    for (int i = 0; i < 2; ++i) eps.push_back(synthetic_episode(rng, 2, 3));
    std::vector<const EpisodeTrajectory*> batch;
    for (const auto& e : eps) batch.push_back(&e);
    return grad_verdict(nn::gradient_check(net.params(), [&](nn::NetworkParams& q) {
      q.zero_grad();
      return estimator::loss_and_grad(net, batch);
    }));
  }));

  out.push_back(timed(suite, "policy stack", [&] {
    const int obs_dim = estimator::observation_features(2);
    explorer::PolicyNet policy(obs_dim, {}, derive_seed(opts.seed, {12}));
    // Actor weights start near zero; give them scale so every path is exercised.
    for (auto& b : policy.params().blocks()) {
      if (b.name.rfind("pi.actor", 0) == 0) b.value = random_mat(rng, static_cast<int>(b.value.rows()),
                                                                 static_cast<int>(b.value.cols())) * 0.1;
    }
    explorer::RolloutBuffer buffer;
    for (int e = 0; e < 2; ++e) {
      explorer::EpisodeRecord rec;
      nn::LstmState s = nn::LstmState::zeros(policy.shape().lstm);
      for (int t = 0; t < 3; ++t) {
        const Vec obs = random_vec(rng, obs_dim);
        rec.state_snapshots.push_back(s);
        const auto a = explorer::sample_action(policy, obs, s, rng);
        rec.observations.push_back(obs);
        rec.pre_squash.push_back(a.pre_squash);
        rec.log_probs.push_back(a.log_prob);
        rec.values.push_back(a.value);
        rec.rewards.push_back(uniform(rng, -1, 1));
        s = a.next_state;
      }
      rec.dones.assign(3, false);
      rec.dones.back() = true;
      buffer.episodes.push_back(rec);
    }
    const explorer::Advantages adv = explorer::compute_gae(buffer, 0.99, 0.95);
    const std::vector<std::size_t> idx{0, 1};
    const explorer::PpoConfig cfg;
    return grad_verdict(nn::gradient_check(policy.params(), [&](nn::NetworkParams& q) {
      q.zero_grad();
      return explorer::ppo_loss_and_grad(policy, buffer, adv, idx, cfg);
    }));
  }));
  return out;
}

std::vector<CheckResult> identifiability_suite(const VerifyOptions& opts) {
  const std::string suite = "identifiability";
  std::vector<CheckResult> out;

  out.push_back(timed(suite, "mass matrix reconstruction", [&] {
    Rng rng(derive_seed(opts.seed, {20}));
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const ChainModel model = random_chain(rng, 2 + i % 3);
      const Eigen::VectorXd q = random_q(rng, model.links());
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(model.dofs(), model.dofs());
      for (int k = 0; k < model.links(); ++k) sum += model.masses()[k] * link_identifiability_matrix(model, q, k);
      worst = std::max(worst, (sum - mass_matrix(model, q)).cwiseAbs().maxCoeff());
    }
    return std::pair{worst <= kReconstructionTol, "max |sum m_k A_k - M| " + fmt(worst)};
  }));

  out.push_back(timed(suite, "two-link nullity", [&] {
    Rng rng(derive_seed(opts.seed, {21}));
    int min_nullity = 99;
    for (int i = 0; i < 200; ++i) {
      const ChainModel model = random_chain(rng, 2);
      const auto res = ident::analyze(model, random_q(rng, 2));
      for (const auto& l : res.links) min_nullity = std::min(min_nullity, static_cast<int>(l.null_basis.cols()));
    }
    return std::pair{min_nullity >= 1, "smallest nullity " + std::to_string(min_nullity)};
  }));

  out.push_back(timed(suite, "null-space response independent of m_k", [&] {
    Rng rng(derive_seed(opts.seed, {22}));
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      const ChainModel model = random_chain(rng, 2);
      const Eigen::VectorXd q = random_q(rng, 2);
      const auto res = ident::analyze(model, q);
      for (int k = 0; k < model.links(); ++k) {
        std::vector<double> masses = model.masses();
        masses[k] *= uniform(rng, 1.5, 5.0);
        const ChainModel other = model.with_masses(masses);
        const Eigen::MatrixXd& basis = res.links[k].null_basis;
        for (Eigen::Index c = 0; c < basis.cols(); ++c) {
          const Eigen::VectorXd v = basis.col(c);
          const Eigen::VectorXd Q = mass_matrix(model, q) * v;
          const Eigen::VectorXd a = ident::acceleration_from_rest(model, q, Q);
          const Eigen::VectorXd b = ident::acceleration_from_rest(other, q, Q);
          worst = std::max(worst, std::abs(v.dot(a - b)));
          worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
        }
      }
    }
    return std::pair{worst < kNullResponseTol, "max response difference " + fmt(worst)};
  }));
  return out;
}

std::vector<CheckResult> run_suite(const std::string& name, const VerifyOptions& opts) {
  if (name == "physics") return physics_suite(opts);
  if (name == "gradients") return gradients_suite(opts);
  if (name == "identifiability") return identifiability_suite(opts);
  if (name == "all") {
    auto all = physics_suite(opts);
    for (auto& r : gradients_suite(opts)) all.push_back(std::move(r));
    for (auto& r : identifiability_suite(opts)) all.push_back(std::move(r));
    return all;
  }
  throw std::invalid_argument("unknown suite: " + name);
}

}  // namespace massdist::verify
