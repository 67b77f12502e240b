#include "massdist/chain_sim.hpp"
#include "massdist/errors.hpp"
#include "massdist/identifiability.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace massdist;
using testing::max_abs;
using testing::random_chain;
using testing::random_q;
using testing::random_vec;

namespace {

// Two-link mass matrix written out from the kinetic energy by hand, with no
// Jacobians: link 0 COM at (x, y), link 1 COM at (x, y) + a u0 + b u1.
Eigen::Matrix4d two_link_mass_closed_form(const ChainModel& m, const Eigen::VectorXd& q) {
  const double m0 = m.masses()[0], m1 = m.masses()[1];
  const double a = 0.5 * m.lengths()[0], b = 0.5 * m.lengths()[1];
  const double w = ChainModel::kDefaultWidth;
  const double I0 = m0 * (m.lengths()[0] * m.lengths()[0] + w * w) / 12.0;
  const double I1 = m1 * (m.lengths()[1] * m.lengths()[1] + w * w) / 12.0;
  const double p0 = q(2), p1 = q(2) + q(3), th = q(3);
  Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
  M(0, 0) = M(1, 1) = m0 + m1;
  M(0, 2) = -m1 * (a * std::sin(p0) + b * std::sin(p1));
  M(0, 3) = -m1 * b * std::sin(p1);
  M(1, 2) = m1 * (a * std::cos(p0) + b * std::cos(p1));
  M(1, 3) = m1 * b * std::cos(p1);
  M(2, 2) = I0 + I1 + m1 * (a * a + b * b + 2 * a * b * std::cos(th));
  M(2, 3) = I1 + m1 * (b * b + a * b * std::cos(th));
  M(3, 3) = I1 + m1 * b * b;
  return M.selfadjointView<Eigen::Upper>();
}

ChainState integrate(const ChainModel& model, ChainState s, int steps) {
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.dofs());
  for (int i = 0; i < steps; ++i) s = step(model, s, zero);
  return s;
}

}  // namespace

TEST_CASE("single body mass matrix is diag(m, m, Izz m)") {
  const ChainModel body = ChainModel::make({0.12}, {0.7}, 0.5);
  Rng rng(3);
  const Eigen::MatrixXd M = mass_matrix(body, random_q(rng, 1));
  const double izz = (0.12 * 0.12 + 0.04 * 0.04) / 12.0;
  Eigen::Matrix3d expected = Eigen::Vector3d(0.7, 0.7, 0.7 * izz).asDiagonal();
  CHECK(max_abs(M - expected) < 1e-15);
}

TEST_CASE("two-link mass matrix matches closed form, symmetric, PSD") {
  Rng rng(11);
  double worst = 0.0, asym = 0.0, min_eig = 1.0;
  for (int i = 0; i < 1000; ++i) {
    const ChainModel model = random_chain(rng, 2);
    const Eigen::VectorXd q = random_q(rng, 2, 2.6);
    const Eigen::MatrixXd M = mass_matrix(model, q);
    worst = std::max(worst, max_abs(M - two_link_mass_closed_form(model, q)));
    asym = std::max(asym, max_abs(M - M.transpose()));
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M).eigenvalues().minCoeff());
  }
  CHECK(worst < 1e-9);
  CHECK(asym < 1e-12);
  CHECK(min_eig >= -1e-10);
}

TEST_CASE("mass matrix and Coriolis scale linearly with mass") {
  Rng rng(12);
  const ChainModel model = random_chain(rng, 3);
  const ChainModel heavy = model.with_scaled_masses(7.0);
  const Eigen::VectorXd q = random_q(rng, 3), qd = random_vec(rng, 5);
  CHECK(max_abs(mass_matrix(heavy, q) - 7.0 * mass_matrix(model, q)) < 1e-12);
  CHECK(max_abs(coriolis_vector(heavy, q, qd) - 7.0 * coriolis_vector(model, q, qd)) < 1e-12);
}

TEST_CASE("Coriolis vanishes at rest and agrees with its matrix form") {
  Rng rng(13);
  const ChainModel model = random_chain(rng, 3);
  const Eigen::VectorXd q = random_q(rng, 3), qd = random_vec(rng, 5);
  CHECK(coriolis_vector(model, q, Eigen::VectorXd::Zero(5)).norm() == 0.0);
  CHECK(max_abs(coriolis_matrix(model, q, qd) * qd - coriolis_vector(model, q, qd)) < 1e-12);
}

TEST_CASE("passivity with Mdot from central differences along the flow") {
  Rng rng(14);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const ChainModel model = random_chain(rng, 2 + i % 2);
    const Eigen::VectorXd q = random_q(rng, model.links()), qd = random_vec(rng, model.dofs());
    const double h = 1e-6;
    const Eigen::MatrixXd Mdot = (mass_matrix(model, q + h * qd) - mass_matrix(model, q - h * qd)) / (2 * h);
    worst = std::max(worst, std::abs(qd.dot((Mdot - 2.0 * coriolis_matrix(model, q, qd)) * qd)));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("friction: zero at rest, mu m g when translating, opposing spin") {
  const ChainModel body = ChainModel::make({0.1}, {0.8}, 0.6);
  const Eigen::VectorXd q = Eigen::Vector3d(0.1, -0.2, 0.4);
  CHECK(friction_generalized_force(body, q, Eigen::VectorXd::Zero(3)).norm() == 0.0);

  const Eigen::VectorXd Q = friction_generalized_force(body, q, Eigen::Vector3d(0.3, 0.4, 0.0));
  CHECK(Q.head<2>().norm() == doctest::Approx(0.6 * 0.8 * 9.81).epsilon(1e-12));
  CHECK(Q.head<2>().dot(Eigen::Vector2d(0.3, 0.4)) < 0.0);
  CHECK(std::abs(Q(2)) < 1e-12);

  // Spinning in place: sum the sample-point moments directly.
  const double w = 2.0;
  const Eigen::VectorXd spin = friction_generalized_force(body, q, Eigen::Vector3d(0, 0, w));
  double torque = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double s = -0.05 + 0.1 * (i + 0.5) / 5;
    const double speed = std::abs(w * s);
    torque -= 0.6 * 0.8 * 9.81 / 5 * std::abs(s) * (speed > 1e-3 ? 1.0 : speed / 1e-3);
  }
  CHECK(spin(2) < 0.0);
  CHECK(spin(2) == doctest::Approx(torque).epsilon(1e-12));
  CHECK(spin.head<2>().norm() < 1e-12);
}

TEST_CASE("step: zero force at rest leaves the state unchanged") {
  Rng rng(15);
  const ChainModel model = random_chain(rng, 2);
  const ChainState s = ChainState::at_rest(random_q(rng, 2));
  const ChainState t = step(model, s, Eigen::VectorXd::Zero(4));
  CHECK(max_abs(t.q - s.q) == 0.0);
  CHECK(t.qdot.norm() == 0.0);
}

TEST_CASE("single link stopping distance within 1 percent") {
  const ChainModel body = ChainModel::make({0.1}, {1.0}, 0.5);
  ChainState s = ChainState::at_rest(Eigen::VectorXd::Zero(3));
  s.qdot(0) = 0.5;
  s = integrate(body, s, 2000);
  const double expected = 0.25 / (2 * 0.5 * 9.81);
  CHECK(std::abs(s.q(0) - expected) / expected < 0.01);
  CHECK(std::abs(s.q(1)) < 1e-12);
}

TEST_CASE("trajectories are invariant to uniform mass scaling") {
  Rng rng(16);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const ChainModel model = random_chain(rng, 2 + trial % 2);
    const ChainModel heavy = model.with_scaled_masses(10.0);
    ChainState a{random_q(rng, model.links(), 1.5), random_vec(rng, model.dofs(), 0.5)};
    ChainState b = a;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.dofs());
    for (int i = 0; i < 1000; ++i) {
      a = step(model, a, zero);
      b = step(heavy, b, zero);
      worst = std::max(worst, max_abs(a.q - b.q));
    }
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("kinetic energy never increases without input") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const ChainModel model = random_chain(rng, 2 + trial % 2);
    ChainState s{random_q(rng, model.links()), random_vec(rng, model.dofs(), 0.8)};
    s = resolve_joint_limits(model, s).state;
    double prev = kinetic_energy(model, s);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(model.dofs());
    for (int i = 0; i < 500; ++i) {
      s = step(model, s, zero);
      const double e = kinetic_energy(model, s);
      REQUIRE(e <= prev + 1e-14);
      prev = e;
    }
  }
}

TEST_CASE("joint limits: clamp, inelastic stop, no energy gain") {
  Rng rng(18);
  const ChainModel model = random_chain(rng, 2);
  SUBCASE("inside limits untouched") {
    const ChainState s{Eigen::Vector4d(0, 0, 0.3, 1.0), Eigen::Vector4d(0.1, 0, 0.2, 0.5)};
    const ResolveResult r = resolve_joint_limits(model, s);
    CHECK_FALSE(r.impulsive);
    CHECK(max_abs(r.state.q - s.q) == 0.0);
    CHECK(max_abs(r.state.qdot - s.qdot) == 0.0);
  }
  SUBCASE("outward velocity at the limit is removed") {
    const ChainState s{Eigen::Vector4d(0, 0, 0.3, 2.7), Eigen::Vector4d(0.1, -0.2, 0.4, 3.0)};
    const ResolveResult r = resolve_joint_limits(model, s);
    CHECK(r.impulsive);
    CHECK(r.state.q(3) == doctest::Approx(2.6));
    CHECK(std::abs(r.state.qdot(3)) < 1e-12);
    CHECK(kinetic_energy(model, r.state) <= kinetic_energy(model, s) + 1e-14);
  }
  SUBCASE("every joint stays inside after random steps") {
    for (int trial = 0; trial < 20; ++trial) {
      const ChainModel m3 = random_chain(rng, 3);
      ChainState s{random_q(rng, 3, 2.5), random_vec(rng, 5, 3.0)};
      s = resolve_joint_limits(m3, s).state;
      for (int i = 0; i < 200; ++i) {
        s = step(m3, s, Eigen::VectorXd::Zero(5));
        REQUIRE(s.finite());
        REQUIRE(std::abs(s.q(3)) <= 2.6 + 1e-12);
        REQUIRE(std::abs(s.q(4)) <= 2.6 + 1e-12);
      }
    }
  }
}

TEST_CASE("three-link capsules do not interpenetrate after resolution") {
  const ChainModel model = ChainModel::make({0.12, 0.1, 0.12}, {0.5, 0.5, 0.5}, 0.7);
  // Clear of contact at 1.5 rad; folding both joints would cross links 0 and 2.
  ChainState s{Eigen::Vector<double, 5>(0, 0, 0, 1.5, 1.5), Eigen::Vector<double, 5>(0, 0, 0, 8.0, 8.0)};
  // Sampled segment distance is an upper bound on the true one.
  auto gap = [&] {
    const auto [a0, a1] = kin::link_segment(model, s.q, 0);
    const auto [b0, b1] = kin::link_segment(model, s.q, 2);
    double dist = 1e9;
    for (int i = 0; i <= 50; ++i) {
      for (int j = 0; j <= 50; ++j) {
        const Eigen::Vector2d p = a0 + (a1 - a0) * i / 50.0, r = b0 + (b1 - b0) * j / 50.0;
        dist = std::min(dist, (p - r).norm());
      }
    }
    return dist;
  };
  double closest = 1e9;
  for (int i = 0; i < 300; ++i) {
    s = step(model, s, Eigen::VectorXd::Zero(5));
    closest = std::min(closest, gap());
  }
  CHECK(closest >= 0.04 - 2e-3);
  CHECK(closest < 0.045);  // the links did come into contact
}

TEST_CASE("settle: at rest returns quickly, idempotent, energy non-increasing") {
  Rng rng(20);
  const ChainModel model = random_chain(rng, 2);
  const ChainState rest = ChainState::at_rest(random_q(rng, 2));
  const SettleResult r = settle(model, rest);
  CHECK(r.steps <= 50);
  CHECK(max_abs(r.state.q - rest.q) == 0.0);

  ChainState moving{random_q(rng, 2), random_vec(rng, 4, 0.5)};
  moving = resolve_joint_limits(model, moving).state;
  const SettleResult first = settle(model, moving);
  CHECK(first.state.qdot.norm() == 0.0);
  const SettleResult again = settle(model, first.state);
  CHECK(max_abs(again.state.q - first.state.q) < 1e-6);
}

TEST_CASE("settle timeout and invalid models throw") {
  const ChainModel body = ChainModel::make({0.1}, {1.0}, 0.5);
  ChainState s = ChainState::at_rest(Eigen::VectorXd::Zero(3));
  s.qdot(0) = 0.5;
  SettleOptions tight;
  tight.max_steps = 10;
  CHECK_THROWS_AS(settle(body, s, tight), SettleTimeout);
  CHECK_THROWS_AS(ChainModel::make({0.1, 0.1}, {1.0, -1.0}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(ChainModel::make({0.1}, {1.0}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(ChainModel::make({0.1}, {1.0, 2.0}, 0.5), std::invalid_argument);
}

TEST_CASE("normalized masses lie on the simplex") {
  Rng rng(21);
  const ChainModel model = random_chain(rng, 3);
  const Eigen::VectorXd m = model.normalized_masses();
  CHECK(m.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.minCoeff() > 0.0);
}
