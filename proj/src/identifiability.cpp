#include "massdist/identifiability.hpp"

#include "massdist/errors.hpp"

namespace massdist::ident {

Eigen::MatrixXd nullspace(const Eigen::MatrixXd& A, double tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = tol * (sv.size() > 0 ? sv(0) : 0.0);
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff) ++rank;
  }
  const int cols = static_cast<int>(A.cols());
  return svd.matrixV().rightCols(cols - rank);
}

int numerical_rank(const Eigen::MatrixXd& A, double tol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() == 0) return 0;
  const double cutoff = tol * sv(0);
  return static_cast<int>((sv.array() > cutoff).count());
}

std::vector<double> excitation_score(const ChainModel& model, const Eigen::VectorXd& q,
                                     const Eigen::VectorXd& qddot) {
  const double norm = qddot.norm();
  if (!(norm > 0.0)) throw ZeroAcceleration("excitation score needs a nonzero acceleration");
  std::vector<double> scores;
  scores.reserve(model.links());
  for (int k = 0; k < model.links(); ++k) {
    const Eigen::MatrixXd A = link_identifiability_matrix(model, q, k);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const double sigma_max = svd.singularValues()(0);
    scores.push_back((A * qddot).norm() / (sigma_max * norm));
  }
  return scores;
}

IdentifiabilityResult analyze(const ChainModel& model, const Eigen::VectorXd& q,
                              const std::optional<Eigen::VectorXd>& qddot) {
  IdentifiabilityResult out;
  std::vector<double> scores;
  if (qddot) scores = excitation_score(model, q, *qddot);
  for (int k = 0; k < model.links(); ++k) {
    LinkIdentifiability li;
    li.A = link_identifiability_matrix(model, q, k);
    li.rank = numerical_rank(li.A);
    li.null_basis = nullspace(li.A);
    if (qddot) li.score = scores[k];
    out.links.push_back(std::move(li));
  }
  return out;
}

Eigen::VectorXd acceleration_from_rest(const ChainModel& model, const Eigen::VectorXd& q,
                                       const Eigen::VectorXd& generalized_force) {
  // qdot = 0 so the Coriolis term vanishes and friction is zero.
  return mass_matrix(model, q).ldlt().solve(generalized_force);
}

Eigen::VectorXd push_response(const ChainModel& model, const Eigen::VectorXd& q, int link,
                              LocalPoint point, const Eigen::Vector2d& direction) {
  const Eigen::MatrixXd Jp = kin::point_jacobian(model, q, link, point).topRows<2>();
  const Eigen::VectorXd row = Jp.transpose() * direction;
  const Eigen::VectorXd response = mass_matrix(model, q).ldlt().solve(row);
  // Normalize so the pushed point moves at unit speed along the direction.
  return response / row.dot(response);
}

}  // namespace massdist::ident
