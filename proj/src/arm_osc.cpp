#include "massdist/arm_osc.hpp"

#include "massdist/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace massdist::osc {

namespace {

Eigen::Vector3d vee(const Eigen::Matrix3d& S) {
  return {S(2, 1) - S(1, 2), S(0, 2) - S(2, 0), S(1, 0) - S(0, 1)};
}

}  // namespace

Eigen::MatrixXd ArmModel::task_jacobian(const Eigen::VectorXd& q) const {
  const Eigen::MatrixXd J = jacobian_fn(q);
  if (task_rows.empty()) return J;
  Eigen::MatrixXd Jt(task_rows.size(), J.cols());
  for (std::size_t r = 0; r < task_rows.size(); ++r) Jt.row(r) = J.row(task_rows[r]);
  return Jt;
}

Eigen::Vector3d orientation_diff(const Eigen::Matrix3d& R_des, const Eigen::Matrix3d& R) {
  const Eigen::Matrix3d D = R_des * R.transpose();
  const double cos_angle = std::clamp(0.5 * (D.trace() - 1.0), -1.0, 1.0);
  const double angle = std::acos(cos_angle);
  const Eigen::Vector3d v = vee(D);  // 2 sin(angle) * axis

  if (angle < 1e-8) return 0.5 * v;
  if (std::numbers::pi - angle > 1e-4) return angle / (2.0 * std::sin(angle)) * v;

  // Near pi: recover the axis from the symmetric part, (1 - cos) a a^T.
  const Eigen::Matrix3d B = 0.5 * (D + D.transpose()) - cos_angle * Eigen::Matrix3d::Identity();
  int col = 0;
  B.diagonal().maxCoeff(&col);
  Eigen::Vector3d axis = B.col(col).normalized();
  if (v.norm() > 1e-12) {
    if (axis.dot(v) < 0.0) axis = -axis;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis(i)) > 1e-12) {
        if (axis(i) < 0.0) axis = -axis;
        break;
      }
    }
  }
  return angle * axis;
}

Eigen::Matrix3d rotation_from_vector(const Eigen::Vector3d& w) {
  const double angle = w.norm();
  if (angle == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
}

Vector6d desired_accel(const EePose& x, const Vector6d& xdot, const EndEffectorTarget& target,
                       const Gains& gains) {
  Vector6d error;
  error.head<3>() = target.position - x.position;
  error.tail<3>() = orientation_diff(target.rotation, x.rotation);
  return gains.kp * error + gains.kd * (target.velocity - xdot);
}

Eigen::MatrixXd task_space_mass(const ArmModel& arm, const Eigen::VectorXd& q) {
  const Eigen::MatrixXd J = arm.task_jacobian(q);
  const Eigen::MatrixXd M = arm.mass_matrix_fn(q);
  const Eigen::MatrixXd inv_lambda = J * M.ldlt().solve(J.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (inv_lambda + inv_lambda.transpose()),
                                                     Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxTaskConditioning) {
    std::ostringstream msg;
    msg << "task-space inertia is singular (condition " << (lo > 0.0 ? hi / lo : INFINITY) << ")";
    throw KinematicSingularity(msg.str());
  }
  Eigen::MatrixXd Mx = inv_lambda.inverse();
  return 0.5 * (Mx + Mx.transpose());
}

Eigen::VectorXd osc_torque(const ArmModel& arm, const Eigen::VectorXd& q, const Vector6d& xddot_des) {
  const Eigen::MatrixXd Mx = task_space_mass(arm, q);
  const Eigen::MatrixXd J = arm.task_jacobian(q);
  Eigen::VectorXd task_accel(arm.task_dim());
  if (arm.task_rows.empty()) {
    task_accel = xddot_des;
  } else {
    for (std::size_t r = 0; r < arm.task_rows.size(); ++r) task_accel(r) = xddot_des(arm.task_rows[r]);
  }
  return J.transpose() * (Mx * task_accel) + arm.gravity_fn(q);
}

// ---------------------------------------------------------------------------
// Planar test arm

namespace {

struct ArmFrames {
  std::vector<Eigen::Vector2d> joints;  // n + 1 points, last is the tip
  std::vector<Eigen::Vector2d> coms;
  std::vector<double> yaws;
};

ArmFrames arm_frames(const PlanarArm& arm, const Eigen::VectorXd& q) {
  ArmFrames f;
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  double yaw = 0.0;
  f.joints.push_back(p);
  for (std::size_t i = 0; i < arm.lengths.size(); ++i) {
    yaw += q(i);
    const Eigen::Vector2d u(std::cos(yaw), std::sin(yaw));
    f.coms.push_back(p + 0.5 * arm.lengths[i] * u);
    p += arm.lengths[i] * u;
    f.joints.push_back(p);
    f.yaws.push_back(yaw);
  }
  return f;
}

// Linear 2 x n Jacobian of point r attached to link `link`.
Eigen::MatrixXd planar_point_jacobian(const ArmFrames& f, const Eigen::Vector2d& r, int link, int n) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2, n);
  for (int j = 0; j <= link; ++j) {
    const Eigen::Vector2d d = r - f.joints[j];
    J(0, j) = -d.y();
    J(1, j) = d.x();
  }
  return J;
}

}  // namespace

Eigen::MatrixXd PlanarArm::mass_matrix(const Eigen::VectorXd& q) const {
  const int n = static_cast<int>(lengths.size());
  const ArmFrames f = arm_frames(*this, q);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd Jv = planar_point_jacobian(f, f.coms[i], i, n);
    Eigen::RowVectorXd Jw = Eigen::RowVectorXd::Zero(n);
    Jw.head(i + 1).setOnes();
    const double rod_inertia = masses[i] * lengths[i] * lengths[i] / 12.0;
    M += masses[i] * Jv.transpose() * Jv + rod_inertia * Jw.transpose() * Jw;
  }
  return M;
}

Eigen::VectorXd PlanarArm::gravity_torque(const Eigen::VectorXd& q) const {
  const int n = static_cast<int>(lengths.size());
  const ArmFrames f = arm_frames(*this, q);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd Jv = planar_point_jacobian(f, f.coms[i], i, n);
    g += masses[i] * gravity * Jv.row(1).transpose();
  }
  return g;
}

Eigen::MatrixXd PlanarArm::jacobian(const Eigen::VectorXd& q) const {
  const int n = static_cast<int>(lengths.size());
  const ArmFrames f = arm_frames(*this, q);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(6, n);
  J.topRows<2>() = planar_point_jacobian(f, f.joints.back(), n - 1, n);
  J.row(5).setOnes();
  return J;
}

EePose PlanarArm::forward_kinematics(const Eigen::VectorXd& q) const {
  const ArmFrames f = arm_frames(*this, q);
  EePose pose;
  pose.position = Eigen::Vector3d(f.joints.back().x(), f.joints.back().y(), 0.0);
  pose.rotation = Eigen::AngleAxisd(f.yaws.back(), Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return pose;
}

Eigen::VectorXd PlanarArm::coriolis(const Eigen::VectorXd& q, const Eigen::VectorXd& qdot) const {
  // C qdot = Mdot qdot - 1/2 grad(qdot^T M qdot), with dM/dq by central differences.
  const int n = static_cast<int>(q.size());
  constexpr double h = 1e-6;
  Eigen::MatrixXd Mdot = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd grad(n);
  for (int l = 0; l < n; ++l) {
    Eigen::VectorXd qp = q, qm = q;
    qp(l) += h;
    qm(l) -= h;
    const Eigen::MatrixXd dM = (mass_matrix(qp) - mass_matrix(qm)) / (2.0 * h);
    Mdot += dM * qdot(l);
    grad(l) = qdot.dot(dM * qdot);
  }
  return Mdot * qdot - 0.5 * grad;
}

void PlanarArm::step(Eigen::VectorXd& q, Eigen::VectorXd& qdot, const Eigen::VectorXd& tau,
                     double dt) const {
  const Eigen::VectorXd rhs = tau - coriolis(q, qdot) - gravity_torque(q);
  const Eigen::VectorXd qddot = mass_matrix(q).ldlt().solve(rhs);
  qdot += dt * qddot;
  q += dt * qdot;
}

ArmModel PlanarArm::model() const {
  ArmModel m;
  m.dof = static_cast<int>(lengths.size());
  m.mass_matrix_fn = [arm = *this](const Eigen::VectorXd& q) { return arm.mass_matrix(q); };
  m.gravity_fn = [arm = *this](const Eigen::VectorXd& q) { return arm.gravity_torque(q); };
  m.jacobian_fn = [arm = *this](const Eigen::VectorXd& q) { return arm.jacobian(q); };
  m.forward_kinematics_fn = [arm = *this](const Eigen::VectorXd& q) { return arm.forward_kinematics(q); };
  m.task_rows = {0, 1, 5};
  return m;
}

PlanarArm default_test_arm() { return PlanarArm{{0.4, 0.35, 0.15}, {4.0, 3.0, 1.0}, 9.81}; }

}  // namespace massdist::osc
