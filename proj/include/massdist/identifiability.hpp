#pragma once

#include "massdist/chain_sim.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace massdist::ident {

inline constexpr double kRankTolerance = 1e-9;

/// Orthonormal basis (as columns) of {v : |A v| <= tol * |A|}, via SVD.
/// Zero columns when A has full rank.
Eigen::MatrixXd nullspace(const Eigen::MatrixXd& A, double tol = kRankTolerance);

/// Number of singular values above tol * sigma_max.
int numerical_rank(const Eigen::MatrixXd& A, double tol = kRankTolerance);

/// score_k = |A_k qddot| / (sigma_max(A_k) |qddot|), in [0, 1].
/// Throws ZeroAcceleration when qddot is zero.
std::vector<double> excitation_score(const ChainModel& model, const Eigen::VectorXd& q,
                                     const Eigen::VectorXd& qddot);

struct LinkIdentifiability {
  Eigen::MatrixXd A;
  int rank = 0;
  Eigen::MatrixXd null_basis;
  std::optional<double> score;
};

struct IdentifiabilityResult {
  std::vector<LinkIdentifiability> links;
};

IdentifiabilityResult analyze(const ChainModel& model, const Eigen::VectorXd& q,
                              const std::optional<Eigen::VectorXd>& qddot = std::nullopt);

/// Instantaneous acceleration from rest produced by the generalized force
/// M(q) * direction; used to probe which accelerations carry mass information.
Eigen::VectorXd acceleration_from_rest(const ChainModel& model, const Eigen::VectorXd& q,
                                       const Eigen::VectorXd& generalized_force);

/// Generalized acceleration produced at the instant a unit-speed push along
/// `direction` is imposed at a link point, for a chain at rest. Mass-scale
/// free: the impulse direction in qdot space is M^-1 J^T n.
Eigen::VectorXd push_response(const ChainModel& model, const Eigen::VectorXd& q, int link,
                              LocalPoint point, const Eigen::Vector2d& direction);

}  // namespace massdist::ident
