#pragma once

// Operational space control of a manipulator end-effector.

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace massdist::osc {

using Vector6d = Eigen::Matrix<double, 6, 1>;

struct EePose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

struct ArmModel {
  int dof = 0;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> mass_matrix_fn;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gravity_fn;
  // 6 x dof spatial Jacobian, rows (vx, vy, vz, wx, wy, wz).
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian_fn;
  std::function<EePose(const Eigen::VectorXd&)> forward_kinematics_fn;
  // Controlled rows of the spatial Jacobian. Empty means all six; a planar
  // arm controls only its in-plane rows.
  std::vector<int> task_rows;

  Eigen::MatrixXd task_jacobian(const Eigen::VectorXd& q) const;
  int task_dim() const { return task_rows.empty() ? 6 : static_cast<int>(task_rows.size()); }
};

struct EndEffectorTarget {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vector6d velocity = Vector6d::Zero();
};

struct Gains {
  double kp = 3000.0;
  double kd = 152.0;
};

/// Rotation vector (axis * angle) of R_des * R^T. At angle pi the axis sign
/// is chosen so that its first nonzero component is positive.
Eigen::Vector3d orientation_diff(const Eigen::Matrix3d& R_des, const Eigen::Matrix3d& R);

/// Exponential map of a rotation vector.
Eigen::Matrix3d rotation_from_vector(const Eigen::Vector3d& w);

/// PD rule on the pose error and velocity error.
Vector6d desired_accel(const EePose& x, const Vector6d& xdot, const EndEffectorTarget& target,
                       const Gains& gains = {});

inline constexpr double kMaxTaskConditioning = 1e8;

/// (J M^-1 J^T)^-1 over the task rows. Throws KinematicSingularity.
Eigen::MatrixXd task_space_mass(const ArmModel& arm, const Eigen::VectorXd& q);

/// tau = J^T M_x xddot + g(q); Coriolis is ignored. `xddot_des` is the full
/// 6-vector, only task rows are used.
Eigen::VectorXd osc_torque(const ArmModel& arm, const Eigen::VectorXd& q, const Vector6d& xddot_des);

// Planar serial arm of uniform rods moving in the x-y plane with gravity
// along -y; joints rotate about z. Used to verify the controller.
struct PlanarArm {
  std::vector<double> lengths;
  std::vector<double> masses;
  double gravity = 9.81;

  ArmModel model() const;
  Eigen::MatrixXd mass_matrix(const Eigen::VectorXd& q) const;
  Eigen::VectorXd gravity_torque(const Eigen::VectorXd& q) const;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& q) const;
  EePose forward_kinematics(const Eigen::VectorXd& q) const;
  Eigen::VectorXd coriolis(const Eigen::VectorXd& q, const Eigen::VectorXd& qdot) const;

  /// Semi-implicit Euler step of M qddot + C + g = tau.
  void step(Eigen::VectorXd& q, Eigen::VectorXd& qdot, const Eigen::VectorXd& tau, double dt) const;
};

PlanarArm default_test_arm();

}  // namespace massdist::osc
