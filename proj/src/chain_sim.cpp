#include "massdist/chain_sim.hpp"

#include "massdist/errors.hpp"
#include "impulse_solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace massdist {

namespace {

Eigen::Matrix3d box_unit_inertia(double length, double width, double height) {
  Eigen::Matrix3d inertia = Eigen::Matrix3d::Zero();
  inertia(0, 0) = (width * width + height * height) / 12.0;
  inertia(1, 1) = (length * length + height * height) / 12.0;
  inertia(2, 2) = (length * length + width * width) / 12.0;
  return inertia;
}

// dphi_j/dq_c; coordinates 0 and 1 are translations.
inline double yaw_sensitivity(int link, int coord) {
  if (coord < 2) return 0.0;
  if (coord == 2) return 1.0;
  const int joint = coord - 2;  // 1-based joint index
  return joint <= link ? 1.0 : 0.0;
}

// A material point expressed as (x, y) + sum_j a_j u_j + b_j v_j with
// u_j = (cos phi_j, sin phi_j), v_j = (-sin phi_j, cos phi_j).
struct PointCoefs {
  std::vector<double> along;
  std::vector<double> across;
};

PointCoefs point_coefs(const ChainModel& model, int link, LocalPoint p) {
  PointCoefs c;
  c.along.assign(link + 1, 0.0);
  c.across.assign(link + 1, 0.0);
  const auto& len = model.lengths();
  if (link == 0) {
    c.along[0] = p.along;
  } else {
    c.along[0] = 0.5 * len[0];
    for (int j = 1; j < link; ++j) c.along[j] = len[j];
    c.along[link] = 0.5 * len[link] + p.along;
  }
  c.across[link] = p.across;
  return c;
}

void check_link(const ChainModel& model, int link) {
  if (link < 0 || link >= model.links()) {
    throw std::out_of_range("link index out of range");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ChainModel

ChainModel ChainModel::make(std::vector<double> lengths, std::vector<double> masses, double mu,
                            JointLimit limit) {
  ChainModel m;
  m.lengths_ = std::move(lengths);
  m.masses_ = std::move(masses);
  m.mu_ = mu;
  m.widths_.assign(m.lengths_.size(), kDefaultWidth);
  for (std::size_t k = 0; k < m.lengths_.size(); ++k) {
    m.unit_inertias_.push_back(box_unit_inertia(m.lengths_[k], kDefaultWidth, kDefaultWidth));
  }
  if (!m.lengths_.empty()) m.joint_limits_.assign(m.lengths_.size() - 1, limit);
  m.validate();
  return m;
}

void ChainModel::validate() const {
  if (lengths_.empty()) throw std::invalid_argument("chain needs at least one link");
  if (masses_.size() != lengths_.size()) {
    throw std::invalid_argument("mass and length counts differ");
  }
  for (double l : lengths_) {
    if (!(l > 0.0) || !std::isfinite(l)) throw std::invalid_argument("link length must be > 0");
  }
  for (double m : masses_) {
    if (!(m > 0.0) || !std::isfinite(m)) throw std::invalid_argument("link mass must be > 0");
  }
  if (!(mu_ > 0.0) || !std::isfinite(mu_)) throw std::invalid_argument("mu must be > 0");
  for (const auto& lim : joint_limits_) {
    if (!(lim.lo < lim.hi)) throw std::invalid_argument("joint limit must satisfy lo < hi");
  }
}

double ChainModel::total_mass() const {
  return std::accumulate(masses_.begin(), masses_.end(), 0.0);
}

Eigen::VectorXd ChainModel::normalized_masses() const {
  Eigen::VectorXd m = Eigen::Map<const Eigen::VectorXd>(masses_.data(), links());
  return m / m.sum();
}

ChainModel ChainModel::with_scaled_masses(double factor) const {
  ChainModel m = *this;
  for (double& v : m.masses_) v *= factor;
  m.validate();
  return m;
}

ChainModel ChainModel::with_masses(std::vector<double> masses) const {
  ChainModel m = *this;
  m.masses_ = std::move(masses);
  m.validate();
  return m;
}

ChainState ChainState::at_rest(Eigen::VectorXd q) {
  ChainState s;
  s.qdot = Eigen::VectorXd::Zero(q.size());
  s.q = std::move(q);
  return s;
}

bool ChainState::finite() const { return q.allFinite() && qdot.allFinite(); }

// ---------------------------------------------------------------------------
// Kinematics

namespace kin {

Eigen::VectorXd link_yaws(const ChainModel& model, const Eigen::VectorXd& q) {
  Eigen::VectorXd phi(model.links());
  double acc = q(2);
  phi(0) = acc;
  for (int k = 1; k < model.links(); ++k) {
    acc += q(2 + k);
    phi(k) = acc;
  }
  return phi;
}

Eigen::Vector2d point_position(const ChainModel& model, const Eigen::VectorXd& q, int link,
                               LocalPoint p) {
  check_link(model, link);
  const Eigen::VectorXd phi = link_yaws(model, q);
  const PointCoefs c = point_coefs(model, link, p);
  Eigen::Vector2d pos(q(0), q(1));
  for (int j = 0; j <= link; ++j) {
    const double cs = std::cos(phi(j));
    const double sn = std::sin(phi(j));
    pos += c.along[j] * Eigen::Vector2d(cs, sn) + c.across[j] * Eigen::Vector2d(-sn, cs);
  }
  return pos;
}

Eigen::Vector2d point_velocity(const ChainModel& model, const ChainState& s, int link,
                               LocalPoint p) {
  return point_jacobian(model, s.q, link, p).topRows<2>() * s.qdot;
}

Eigen::MatrixXd point_jacobian(const ChainModel& model, const Eigen::VectorXd& q, int link,
                               LocalPoint p) {
  check_link(model, link);
  const int N = model.dofs();
  const Eigen::VectorXd phi = link_yaws(model, q);
  const PointCoefs c = point_coefs(model, link, p);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, N);
  J(0, 0) = 1.0;
  J(1, 1) = 1.0;
  for (int j = 0; j <= link; ++j) {
    const double cs = std::cos(phi(j));
    const double sn = std::sin(phi(j));
    // d/dphi_j (a u_j + b v_j) = a v_j - b u_j
    const Eigen::Vector2d d = c.along[j] * Eigen::Vector2d(-sn, cs) - c.across[j] * Eigen::Vector2d(cs, sn);
    for (int col = 2; col < N; ++col) {
      const double s = yaw_sensitivity(j, col);
      if (s != 0.0) J.block<2, 1>(0, col) += s * d;
    }
  }
  return J;
}

Eigen::MatrixXd angular_jacobian(const ChainModel& model, int link) {
  check_link(model, link);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, model.dofs());
  for (int col = 2; col < model.dofs(); ++col) J(2, col) = yaw_sensitivity(link, col);
  return J;
}

std::vector<Eigen::MatrixXd> point_jacobian_derivatives(const ChainModel& model,
                                                        const Eigen::VectorXd& q, int link,
                                                        LocalPoint p) {
  check_link(model, link);
  const int N = model.dofs();
  const Eigen::VectorXd phi = link_yaws(model, q);
  const PointCoefs c = point_coefs(model, link, p);
  std::vector<Eigen::MatrixXd> dJ(N, Eigen::MatrixXd::Zero(3, N));
  for (int j = 0; j <= link; ++j) {
    const double cs = std::cos(phi(j));
    const double sn = std::sin(phi(j));
    // d^2/dphi_j^2 (a u_j + b v_j) = -a u_j - b v_j
    const Eigen::Vector2d dd = -c.along[j] * Eigen::Vector2d(cs, sn) - c.across[j] * Eigen::Vector2d(-sn, cs);
    for (int l = 2; l < N; ++l) {
      const double sl = yaw_sensitivity(j, l);
      if (sl == 0.0) continue;
      for (int col = 2; col < N; ++col) {
        const double sc = yaw_sensitivity(j, col);
        if (sc != 0.0) dJ[l].block<2, 1>(0, col) += sc * sl * dd;
      }
    }
  }
  return dJ;
}

std::pair<Eigen::Vector2d, Eigen::Vector2d> link_segment(const ChainModel& model,
                                                         const Eigen::VectorXd& q, int link) {
  const double half = 0.5 * model.lengths()[link];
  return {point_position(model, q, link, {-half, 0.0}), point_position(model, q, link, {half, 0.0})};
}

}  // namespace kin

// ---------------------------------------------------------------------------
// Dynamics

Eigen::MatrixXd link_identifiability_matrix(const ChainModel& model, const Eigen::VectorXd& q,
                                            int link) {
  const Eigen::MatrixXd Jv = kin::point_jacobian(model, q, link);
  const Eigen::MatrixXd Jw = kin::angular_jacobian(model, link);
  return Jv.transpose() * Jv + Jw.transpose() * model.unit_inertias()[link] * Jw;
}

Eigen::MatrixXd mass_matrix(const ChainModel& model, const Eigen::VectorXd& q) {
  const int N = model.dofs();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(N, N);
  for (int k = 0; k < model.links(); ++k) {
    M += model.masses()[k] * link_identifiability_matrix(model, q, k);
  }
  return M;
}

std::vector<Eigen::MatrixXd> mass_matrix_derivatives(const ChainModel& model,
                                                     const Eigen::VectorXd& q) {
  const int N = model.dofs();
  std::vector<Eigen::MatrixXd> dM(N, Eigen::MatrixXd::Zero(N, N));
  for (int k = 0; k < model.links(); ++k) {
    const Eigen::MatrixXd Jv = kin::point_jacobian(model, q, k);
    const auto dJ = kin::point_jacobian_derivatives(model, q, k);
    const double m = model.masses()[k];
    for (int l = 0; l < N; ++l) {
      const Eigen::MatrixXd cross = dJ[l].transpose() * Jv;
      dM[l] += m * (cross + cross.transpose());
    }
  }
  return dM;
}

Eigen::MatrixXd coriolis_matrix(const ChainModel& model, const Eigen::VectorXd& q,
                                const Eigen::VectorXd& qdot) {
  const int N = model.dofs();
  const auto dM = mass_matrix_derivatives(model, q);
  // C_ij = sum_k Gamma_ijk qdot_k,
  // Gamma_ijk = 1/2 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i)
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) {
      double acc = 0.0;
      for (int k = 0; k < N; ++k) {
        acc += 0.5 * (dM[k](i, j) + dM[j](i, k) - dM[i](j, k)) * qdot(k);
      }
      C(i, j) = acc;
    }
  }
  return C;
}

Eigen::VectorXd coriolis_vector(const ChainModel& model, const Eigen::VectorXd& q,
                                const Eigen::VectorXd& qdot) {
  const int N = model.dofs();
  const auto dM = mass_matrix_derivatives(model, q);
  // C qdot = Mdot qdot - 1/2 grad_q (qdot^T M qdot)
  Eigen::MatrixXd Mdot = Eigen::MatrixXd::Zero(N, N);
  Eigen::VectorXd grad(N);
  for (int l = 0; l < N; ++l) {
    Mdot += dM[l] * qdot(l);
    grad(l) = qdot.dot(dM[l] * qdot);
  }
  return Mdot * qdot - 0.5 * grad;
}

double kinetic_energy(const ChainModel& model, const ChainState& s) {
  return 0.5 * s.qdot.dot(mass_matrix(model, s.q) * s.qdot);
}

namespace {

template <typename Visit>
void for_each_friction_sample(const ChainModel& model, const Eigen::VectorXd& q,
                              const FrictionParams& fp, Visit&& visit) {
  const int kf = fp.samples_per_link;
  for (int k = 0; k < model.links(); ++k) {
    const double len = model.lengths()[k];
    const double normal_force = fp.sign * model.mu() * model.masses()[k] * model.gravity() / kf;
    for (int i = 0; i < kf; ++i) {
      const double along = -0.5 * len + len * (i + 0.5) / kf;
      const Eigen::Matrix<double, 2, Eigen::Dynamic> Jp =
          kin::point_jacobian(model, q, k, {along, 0.0}).topRows<2>();
      visit(Jp, normal_force);
    }
  }
}

}  // namespace

Eigen::VectorXd friction_generalized_force(const ChainModel& model, const Eigen::VectorXd& q,
                                           const Eigen::VectorXd& qdot,
                                           const FrictionParams& fp) {
  Eigen::VectorXd Q = Eigen::VectorXd::Zero(model.dofs());
  for_each_friction_sample(model, q, fp, [&](const auto& Jp, double normal_force) {
    const Eigen::Vector2d v = Jp * qdot;
    const double speed = v.norm();
    const Eigen::Vector2d F = -normal_force * v / std::max(speed, fp.stick_velocity);
    Q += Jp.transpose() * F;
  });
  return Q;
}

Eigen::MatrixXd friction_damping_matrix(const ChainModel& model, const Eigen::VectorXd& q,
                                        const Eigen::VectorXd& qdot,
                                        const FrictionParams& fp) {
  const int N = model.dofs();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(N, N);
  for_each_friction_sample(model, q, fp, [&](const auto& Jp, double normal_force) {
    const double speed = (Jp * qdot).norm();
    D += (normal_force / std::max(speed, fp.stick_velocity)) * Jp.transpose() * Jp;
  });
  return D;
}

namespace {

void check_conditioning(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(M, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    std::ostringstream msg;
    msg << "mass matrix singular (eigenvalues in [" << lo << ", " << hi << "])";
    throw SingularMassMatrix(msg.str());
  }
}

// Closest points between segments p1-q1 and p2-q2; returns parameters in [0, 1].
std::pair<double, double> closest_segment_params(const Eigen::Vector2d& p1, const Eigen::Vector2d& q1,
                                                 const Eigen::Vector2d& p2, const Eigen::Vector2d& q2) {
  const Eigen::Vector2d d1 = q1 - p1;
  const Eigen::Vector2d d2 = q2 - p2;
  const Eigen::Vector2d r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  const double c = d1.dot(r);
  const double b = d1.dot(d2);
  const double denom = a * e - b * b;
  double s = denom > 1e-14 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
  double t = (b * s + f) / e;
  if (t < 0.0) {
    t = 0.0;
    s = std::clamp(-c / a, 0.0, 1.0);
  } else if (t > 1.0) {
    t = 1.0;
    s = std::clamp((b - c) / a, 0.0, 1.0);
  }
  return {s, t};
}

}  // namespace

ResolveResult resolve_joint_limits(const ChainModel& model, const ChainState& state) {
  ResolveResult out{state, false};
  const int N = model.dofs();
  std::vector<detail::ImpulseRow> rows;

  for (int i = 1; i < model.links(); ++i) {
    const int coord = 2 + i;
    const JointLimit lim = model.joint_limits()[i - 1];
    double& theta = out.state.q(coord);
    if (theta <= lim.lo) {
      theta = lim.lo;
      detail::ImpulseRow r{Eigen::VectorXd::Zero(N), 0.0};
      r.row(coord) = 1.0;
      rows.push_back(std::move(r));
    } else if (theta >= lim.hi) {
      theta = lim.hi;
      detail::ImpulseRow r{Eigen::VectorXd::Zero(N), 0.0};
      r.row(coord) = -1.0;
      rows.push_back(std::move(r));
    }
  }

  for (int k = 0; k < model.links(); ++k) {
    for (int l = k + 2; l < model.links(); ++l) {
      const auto [pk, qk] = kin::link_segment(model, out.state.q, k);
      const auto [pl, ql] = kin::link_segment(model, out.state.q, l);
      const auto [sk, sl] = closest_segment_params(pk, qk, pl, ql);
      const Eigen::Vector2d ck = pk + sk * (qk - pk);
      const Eigen::Vector2d cl = pl + sl * (ql - pl);
      const double reach = 0.5 * (model.widths()[k] + model.widths()[l]);
      Eigen::Vector2d n = cl - ck;
      const double dist = n.norm();
      if (dist >= reach) continue;
      if (dist > 1e-12) {
        n /= dist;
      } else {
        const double phi = kin::link_yaws(model, out.state.q)(k);
        n = Eigen::Vector2d(-std::sin(phi), std::cos(phi));
      }
      const double lk = model.lengths()[k];
      const double ll = model.lengths()[l];
      const Eigen::MatrixXd Jk = kin::point_jacobian(model, out.state.q, k, {sk * lk - 0.5 * lk, 0.0});
      const Eigen::MatrixXd Jl = kin::point_jacobian(model, out.state.q, l, {sl * ll - 0.5 * ll, 0.0});
      detail::ImpulseRow r;
      r.row = (n.transpose() * (Jl.topRows<2>() - Jk.topRows<2>())).transpose();
      r.target = 0.0;
      rows.push_back(std::move(r));
    }
  }

  if (rows.empty()) return out;
  const Eigen::MatrixXd M = mass_matrix(model, out.state.q);
  const auto lambdas = detail::solve_impulses(M, out.state.qdot, rows);
  for (double lam : lambdas) {
    if (lam > 0.0) out.impulsive = true;
  }
  return out;
}

StepResult step_with_bounds(const ChainModel& model, const ChainState& state,
                            const Eigen::VectorXd& external_force,
                            std::span<const PointVelocityBound> bounds,
                            const StepOptions& opts) {
  const double dt = opts.dt;
  const Eigen::VectorXd& q = state.q;
  const Eigen::VectorXd& qdot = state.qdot;

  const Eigen::MatrixXd M = mass_matrix(model, q);
  check_conditioning(M);
  const Eigen::VectorXd C = coriolis_vector(model, q, qdot);
  const Eigen::MatrixXd D = friction_damping_matrix(model, q, qdot, opts.friction);

  // Friction enters linearly-implicitly: (M + dt D) qdot+ = M qdot + dt (Q - C).
  const Eigen::MatrixXd lhs = M + dt * D;
  const Eigen::VectorXd rhs = M * qdot + dt * (external_force - C);
  Eigen::VectorXd qdot_new = lhs.ldlt().solve(rhs);

  StepResult out;
  if (!bounds.empty()) {
    std::vector<detail::ImpulseRow> rows;
    rows.reserve(bounds.size());
    for (const auto& b : bounds) {
      const Eigen::MatrixXd Jp = kin::point_jacobian(model, q, b.link, b.point);
      rows.push_back({(b.direction.transpose() * Jp.topRows<2>()).transpose(), b.speed});
    }
    out.bound_impulses = detail::solve_impulses(M, qdot_new, rows);
  }

  ChainState next{q + dt * qdot_new, qdot_new};
  ResolveResult resolved = resolve_joint_limits(model, next);
  out.state = std::move(resolved.state);
  out.impulsive = resolved.impulsive;
  return out;
}

ChainState step(const ChainModel& model, const ChainState& state,
                const Eigen::VectorXd& external_force, const StepOptions& opts) {
  return step_with_bounds(model, state, external_force, {}, opts).state;
}

SettleResult settle(const ChainModel& model, const ChainState& state, const SettleOptions& opts) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.dofs());
  SettleResult out{state, 0};
  int quiet = 0;
  while (out.steps < opts.max_steps) {
    out.state = step(model, out.state, zero, opts.step);
    ++out.steps;
    if (!out.state.finite()) throw SettleTimeout("state diverged while settling");
    if (out.state.qdot.lpNorm<Eigen::Infinity>() < opts.rest_speed) {
      if (++quiet >= opts.rest_steps) {
        out.state.qdot.setZero();
        return out;
      }
    } else {
      quiet = 0;
    }
  }
  throw SettleTimeout("chain did not come to rest within " + std::to_string(opts.max_steps) +
                      " steps");
}

}  // namespace massdist
