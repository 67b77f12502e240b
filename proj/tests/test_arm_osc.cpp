#include "massdist/arm_osc.hpp"
#include "massdist/errors.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace massdist;
using namespace massdist::osc;
using testing::max_abs;

namespace {

Eigen::Matrix3d random_rotation(Rng& rng) {
  return rotation_from_vector(testing::random_vec(rng, 3, 2.0));
}

Vector6d ee_velocity(const PlanarArm& arm, const Eigen::VectorXd& q, const Eigen::VectorXd& qd) {
  return arm.jacobian(q) * qd;
}

}  // namespace

TEST_CASE("orientation difference: identity, small angle, round trip") {
  Rng rng(50);
  const Eigen::Matrix3d R = random_rotation(rng);
  CHECK(orientation_diff(R, R).norm() < 1e-15);

  const Eigen::Matrix3d Rz = Eigen::AngleAxisd(0.1, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  CHECK((orientation_diff(Rz * R, R) - Eigen::Vector3d(0, 0, 0.1)).norm() < 1e-12);

  for (int i = 0; i < 100; ++i) {
    const Eigen::Matrix3d A = random_rotation(rng), B = random_rotation(rng);
    const Eigen::Vector3d w = orientation_diff(A, B);
    CHECK(max_abs(rotation_from_vector(w) * B - A) < 1e-10);
  }
}

TEST_CASE("orientation difference at half a turn picks the positive axis") {
  const Eigen::Matrix3d flip = Eigen::AngleAxisd(std::numbers::pi, Eigen::Vector3d(0, -1, 0)).toRotationMatrix();
  const Eigen::Vector3d w = orientation_diff(flip, Eigen::Matrix3d::Identity());
  CHECK((w - Eigen::Vector3d(0, std::numbers::pi, 0)).norm() < 1e-7);
}

TEST_CASE("desired acceleration: setpoint, pure position error, linearity") {
  EePose x;
  x.position = Eigen::Vector3d(0.3, 0.2, 0.0);
  EndEffectorTarget target;
  target.position = x.position;
  CHECK(desired_accel(x, Vector6d::Zero(), target).norm() == 0.0);

  target.position.x() += 0.01;
  Vector6d expected = Vector6d::Zero();
  expected(0) = 30.0;
  CHECK((desired_accel(x, Vector6d::Zero(), target) - expected).norm() < 1e-12);

  EndEffectorTarget doubled = target;
  doubled.position.x() += 0.01;
  CHECK((desired_accel(x, Vector6d::Zero(), doubled) - 2.0 * expected).norm() < 1e-11);
}

TEST_CASE("task-space mass: identity arm, symmetry, singular pose") {
  ArmModel ident_arm;
  ident_arm.dof = 6;
  ident_arm.mass_matrix_fn = [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Identity(6, 6); };
  ident_arm.gravity_fn = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(6); };
  ident_arm.jacobian_fn = [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Identity(6, 6); };
  CHECK(max_abs(task_space_mass(ident_arm, Eigen::VectorXd::Zero(6)) - Eigen::MatrixXd::Identity(6, 6)) < 1e-15);

  const PlanarArm arm = default_test_arm();
  const ArmModel model = arm.model();
  Rng rng(51);
  for (int i = 0; i < 50; ++i) {
    Eigen::Vector3d q(testing::uniform(rng, -1, 1), testing::uniform(rng, 0.4, 2.0), testing::uniform(rng, 0.4, 2.0));
    const Eigen::MatrixXd Mx = task_space_mass(model, q);
    CHECK(max_abs(Mx - Mx.transpose()) < 1e-10);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Mx).eigenvalues().minCoeff() > 0.0);
  }
  CHECK_THROWS_AS(task_space_mass(model, Eigen::Vector3d::Zero()), KinematicSingularity);
  CHECK_THROWS_AS(task_space_mass(model, Eigen::Vector3d(0.3, 1e-9, 0.0)), KinematicSingularity);
}

TEST_CASE("test arm mass matrix is SPD and its Coriolis term vanishes at rest") {
  const PlanarArm arm = default_test_arm();
  Rng rng(52);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd q = testing::random_vec(rng, 3, 3.0);
    const Eigen::MatrixXd M = arm.mass_matrix(q);
    CHECK(max_abs(M - M.transpose()) < 1e-12);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M).eigenvalues().minCoeff() > 0.0);
    CHECK(arm.coriolis(q, Eigen::Vector3d::Zero()).norm() == 0.0);
  }
}

TEST_CASE("zero commanded acceleration is pure gravity compensation and holds the arm") {
  const PlanarArm arm = default_test_arm();
  const ArmModel model = arm.model();
  Eigen::VectorXd q = Eigen::Vector3d(0.3, 0.9, -0.6), qd = Eigen::Vector3d::Zero();
  CHECK(max_abs(osc_torque(model, q, Vector6d::Zero()) - arm.gravity_torque(q)) == 0.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    arm.step(q, qd, osc_torque(model, q, Vector6d::Zero()), 1e-3);
    worst = std::max(worst, qd.lpNorm<Eigen::Infinity>());
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("commanded end-effector acceleration is realized from rest") {
  const PlanarArm arm = default_test_arm();
  const ArmModel model = arm.model();
  Rng rng(53);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd q = Eigen::Vector3d(testing::uniform(rng, -1, 1), testing::uniform(rng, 0.5, 1.8),
                                        testing::uniform(rng, 0.5, 1.8));
    Eigen::VectorXd qd = Eigen::Vector3d::Zero();
    Vector6d xdd = Vector6d::Zero();
    xdd(0) = testing::uniform(rng, -2, 2);
    xdd(1) = testing::uniform(rng, -2, 2);
    xdd(5) = testing::uniform(rng, -2, 2);
    const double dt = 1e-5;
    arm.step(q, qd, osc_torque(model, q, xdd), dt);
    const Vector6d measured = ee_velocity(arm, q, qd) / dt;
    for (int r : {0, 1, 5}) CHECK(std::abs(measured(r) - xdd(r)) <= 0.02 * xdd.norm());
  }
}

TEST_CASE("torque is linear in the commanded acceleration") {
  const PlanarArm arm = default_test_arm();
  const ArmModel model = arm.model();
  const Eigen::VectorXd q = Eigen::Vector3d(0.2, 1.0, 0.7);
  Vector6d a = Vector6d::Zero(), b = Vector6d::Zero();
  a << 1.0, -0.5, 0, 0, 0, 0.3;
  b << -0.2, 0.8, 0, 0, 0, 1.1;
  const Eigen::VectorXd g = arm.gravity_torque(q);
  const Eigen::VectorXd lhs = osc_torque(model, q, 2.0 * a + 3.0 * b) - g;
  const Eigen::VectorXd rhs = 2.0 * (osc_torque(model, q, a) - g) + 3.0 * (osc_torque(model, q, b) - g);
  CHECK(max_abs(lhs - rhs) < 1e-10);
}

TEST_CASE("closed loop regulates a 5 cm offset to within 1 mm in 2 s") {
  const PlanarArm arm = default_test_arm();
  const ArmModel model = arm.model();
  Eigen::VectorXd q = Eigen::Vector3d(0.3, 1.0, 0.8), qd = Eigen::Vector3d::Zero();
  const EePose start = arm.forward_kinematics(q);
  EndEffectorTarget target;
  target.position = start.position + Eigen::Vector3d(0.03, -0.04, 0.0);
  target.rotation = start.rotation;
  const double dt = 1e-3;
  for (int i = 0; i < 2000; ++i) {
    const Vector6d xddot = desired_accel(arm.forward_kinematics(q), ee_velocity(arm, q, qd), target);
    arm.step(q, qd, osc_torque(model, q, xddot), dt);
  }
  const EePose end = arm.forward_kinematics(q);
  CHECK((end.position - target.position).norm() < 1e-3);
  CHECK(orientation_diff(target.rotation, end.rotation).norm() < 1e-3);
}
