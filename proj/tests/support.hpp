#pragma once

#include "massdist/chain_sim.hpp"
#include "massdist/rng.hpp"

#include <Eigen/Dense>

#include <numbers>
#include <vector>

namespace testing {

using massdist::ChainModel;
using massdist::Rng;
using massdist::uniform;

inline ChainModel random_chain(Rng& rng, int links, double mass_lo = 0.1, double mass_hi = 1.0) {
  std::vector<double> lengths(links), masses(links);
  for (auto& l : lengths) l = uniform(rng, 0.1, 0.15);
  for (auto& m : masses) m = uniform(rng, mass_lo, mass_hi);
  return ChainModel::make(lengths, masses, uniform(rng, 0.5, 1.0));
}

inline Eigen::VectorXd random_q(Rng& rng, int links, double joint = 2.0) {
  Eigen::VectorXd q(links + 2);
  q(0) = uniform(rng, -0.5, 0.5);
  q(1) = uniform(rng, -0.5, 0.5);
  q(2) = uniform(rng, -std::numbers::pi, std::numbers::pi);
  for (int i = 3; i < q.size(); ++i) q(i) = uniform(rng, -joint, joint);
  return q;
}

inline Eigen::VectorXd random_vec(Rng& rng, int n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = uniform(rng, -scale, scale);
  return v;
}

inline double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace testing
