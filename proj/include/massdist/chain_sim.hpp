#pragma once

// Planar n-link chain sliding flat on a frictional surface.
//
// Generalized coordinates are q = (x, y, alpha, theta_1 .. theta_{n-1}):
// (x, y) is the center of mass of link 0, alpha its yaw, and theta_i the
// relative angle of joint i, which connects the distal end of link i-1 to
// the proximal end of link i. Link k has absolute yaw
// phi_k = alpha + sum_{i<=k} theta_i.

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

namespace massdist {

struct JointLimit {
  double lo;
  double hi;
};

class ChainModel {
 public:
  static constexpr double kDefaultWidth = 0.04;
  static constexpr double kGravity = 9.81;

  /// Rectangular links of the given lengths (width/height 0.04 m). Throws
  /// std::invalid_argument when masses, lengths or mu are non-positive or the
  /// vectors disagree in size. Joint limits default to [-2.6, 2.6].
  static ChainModel make(std::vector<double> lengths, std::vector<double> masses, double mu,
                         JointLimit limit = {-2.6, 2.6});

  int links() const { return static_cast<int>(lengths_.size()); }
  int dofs() const { return links() + 2; }

  const std::vector<double>& lengths() const { return lengths_; }
  const std::vector<double>& widths() const { return widths_; }
  const std::vector<double>& masses() const { return masses_; }
  const std::vector<Eigen::Matrix3d>& unit_inertias() const { return unit_inertias_; }
  const std::vector<JointLimit>& joint_limits() const { return joint_limits_; }
  double mu() const { return mu_; }
  double gravity() const { return gravity_; }

  double total_mass() const;
  Eigen::VectorXd normalized_masses() const;

  /// Same geometry and friction, masses multiplied by `factor`.
  ChainModel with_scaled_masses(double factor) const;
  ChainModel with_masses(std::vector<double> masses) const;

 private:
  ChainModel() = default;
  void validate() const;

  std::vector<double> lengths_;
  std::vector<double> widths_;
  std::vector<double> masses_;
  std::vector<Eigen::Matrix3d> unit_inertias_;
  std::vector<JointLimit> joint_limits_;
  double mu_ = 0.0;
  double gravity_ = kGravity;
};

struct ChainState {
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;

  static ChainState at_rest(Eigen::VectorXd q);
  bool finite() const;
};

// Link-local point: `along` is the offset from the link COM along its long
// axis, `across` the offset along the in-plane normal.
struct LocalPoint {
  double along = 0.0;
  double across = 0.0;
};

namespace kin {

Eigen::VectorXd link_yaws(const ChainModel& model, const Eigen::VectorXd& q);
Eigen::Vector2d point_position(const ChainModel& model, const Eigen::VectorXd& q, int link,
                               LocalPoint p = {});
Eigen::Vector2d point_velocity(const ChainModel& model, const ChainState& s, int link,
                               LocalPoint p = {});

/// 3xN linear Jacobian of a material point; the out-of-plane row is zero.
Eigen::MatrixXd point_jacobian(const ChainModel& model, const Eigen::VectorXd& q, int link,
                               LocalPoint p = {});
/// 3xN angular Jacobian of a link; only the z row is populated.
Eigen::MatrixXd angular_jacobian(const ChainModel& model, int link);
/// d(point_jacobian)/dq_l for every l, returned as N matrices of 3xN.
std::vector<Eigen::MatrixXd> point_jacobian_derivatives(const ChainModel& model,
                                                        const Eigen::VectorXd& q, int link,
                                                        LocalPoint p = {});

/// Endpoints (proximal, distal) of a link's long axis in world frame.
std::pair<Eigen::Vector2d, Eigen::Vector2d> link_segment(const ChainModel& model,
                                                         const Eigen::VectorXd& q, int link);

}  // namespace kin

/// Per-link contribution A_k = Jv^T Jv + Jw^T I_k Jw to the mass matrix.
Eigen::MatrixXd link_identifiability_matrix(const ChainModel& model, const Eigen::VectorXd& q,
                                            int link);

Eigen::MatrixXd mass_matrix(const ChainModel& model, const Eigen::VectorXd& q);

/// dM/dq_l for each generalized coordinate l.
std::vector<Eigen::MatrixXd> mass_matrix_derivatives(const ChainModel& model,
                                                     const Eigen::VectorXd& q);

/// Coriolis/centrifugal matrix from Christoffel symbols; C(q, qdot) qdot is
/// the velocity-product force.
Eigen::MatrixXd coriolis_matrix(const ChainModel& model, const Eigen::VectorXd& q,
                                const Eigen::VectorXd& qdot);
Eigen::VectorXd coriolis_vector(const ChainModel& model, const Eigen::VectorXd& q,
                                const Eigen::VectorXd& qdot);

double kinetic_energy(const ChainModel& model, const ChainState& s);

struct FrictionParams {
  int samples_per_link = 5;
  double stick_velocity = 1e-3;
  // Multiplies every friction force. Always 1 in simulation; the verify
  // suite's mutation probe sets -1 to show the physics checks catch it.
  double sign = 1.0;
};

/// Regularized Coulomb friction of the surface, mapped to generalized
/// forces. Each link's weight is split over sample points along its axis.
Eigen::VectorXd friction_generalized_force(const ChainModel& model, const Eigen::VectorXd& q,
                                           const Eigen::VectorXd& qdot,
                                           const FrictionParams& fp = {});

/// Damping matrix D with friction force -D qdot, coefficients lagged at the
/// given velocity. D qdot equals -friction_generalized_force at that velocity.
Eigen::MatrixXd friction_damping_matrix(const ChainModel& model, const Eigen::VectorXd& q,
                                        const Eigen::VectorXd& qdot,
                                        const FrictionParams& fp = {});

// One-sided velocity constraint: the material point's velocity along
// `direction` must be at least `speed`. Only positive impulses are applied.
struct PointVelocityBound {
  int link = 0;
  LocalPoint point;
  Eigen::Vector2d direction = Eigen::Vector2d::UnitX();
  double speed = 0.0;
};

struct StepOptions {
  double dt = 1e-3;
  FrictionParams friction;
};

struct StepResult {
  ChainState state;
  // Impulse applied per velocity bound (>= 0).
  std::vector<double> bound_impulses;
  // True when joint-limit or self-collision impulses fired.
  bool impulsive = false;
};

/// Semi-implicit Euler step of M qddot + C = Q_ext + Q_friction followed by
/// joint limit and self-collision resolution. Throws SingularMassMatrix.
ChainState step(const ChainModel& model, const ChainState& state,
                const Eigen::VectorXd& external_force, const StepOptions& opts = {});

StepResult step_with_bounds(const ChainModel& model, const ChainState& state,
                            const Eigen::VectorXd& external_force,
                            std::span<const PointVelocityBound> bounds,
                            const StepOptions& opts = {});

struct ResolveResult {
  ChainState state;
  bool impulsive = false;
};

/// Clamp joints into their limits with inelastic stops, and separate
/// overlapping non-adjacent links (capsules of radius width/2).
ResolveResult resolve_joint_limits(const ChainModel& model, const ChainState& state);

struct SettleOptions {
  StepOptions step;
  double rest_speed = 1e-3;
  int rest_steps = 50;
  int max_steps = 20000;
};

struct SettleResult {
  ChainState state;
  int steps = 0;
};

/// Integrate without external force until the chain is at rest. Throws
/// SettleTimeout when the cap is reached.
SettleResult settle(const ChainModel& model, const ChainState& state,
                    const SettleOptions& opts = {});

}  // namespace massdist
