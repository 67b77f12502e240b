#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace massdist::detail {

// One-sided constraint row . qdot >= target.
struct ImpulseRow {
  Eigen::VectorXd row;
  double target = 0.0;
};

// Projected Gauss-Seidel over accumulated impulses (lambda >= 0), resolved
// through M. Updates qdot in place and returns the accumulated impulses.
inline std::vector<double> solve_impulses(const Eigen::MatrixXd& M, Eigen::VectorXd& qdot,
                                          const std::vector<ImpulseRow>& rows,
                                          int max_sweeps = 50, double tol = 1e-13) {
  std::vector<double> lambda(rows.size(), 0.0);
  if (rows.empty()) return lambda;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  std::vector<Eigen::VectorXd> minv_rows;
  std::vector<double> eff;
  minv_rows.reserve(rows.size());
  for (const auto& r : rows) {
    minv_rows.push_back(ldlt.solve(r.row));
    eff.push_back(r.row.dot(minv_rows.back()));
  }
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double worst = 0.0;
    for (std::size_t c = 0; c < rows.size(); ++c) {
      if (!(eff[c] > 0.0)) continue;
      const double delta = (rows[c].target - rows[c].row.dot(qdot)) / eff[c];
      const double next = std::max(0.0, lambda[c] + delta);
      const double applied = next - lambda[c];
      if (applied != 0.0) qdot += applied * minv_rows[c];
      lambda[c] = next;
      worst = std::max(worst, std::abs(applied));
    }
    if (rows.size() == 1 || worst < tol) break;
  }
  return lambda;
}

}  // namespace massdist::detail
