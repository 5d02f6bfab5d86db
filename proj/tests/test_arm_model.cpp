#include <doctest.h>

#include "test_util.hpp"

#include <cmath>
#include <numbers>

#include "ycontrol/arm_model.hpp"
#include "ycontrol/errors.hpp"
#include "ycontrol/philox.hpp"
#include "ycontrol/sde_sim.hpp"

using namespace ycontrol;
using std::numbers::pi;

namespace {

ArmParams table_arm() { return ArmParams{}; }

}  // namespace

TEST_CASE("mass matrix examples") {
  const ArmParams p = table_arm();
  const Matrix2d n = mass_matrix(p, Vector2d(0.3, pi / 2));
  CHECK(std::abs(n(0, 0) - 0.207458) < 1e-6);
  CHECK(std::abs(n(0, 1) - 0.023264) < 1e-6);
  CHECK(std::abs(n(1, 0) - 0.023264) < 1e-6);
  CHECK(std::abs(n(1, 1) - 0.023264) < 1e-6);

  const double d = mass_matrix(p, Vector2d(0, 0))(0, 0) - mass_matrix(p, Vector2d(0, pi))(0, 0);
  CHECK(d == rel(4.0 * p.k()));

  CounterRng rng(5, 1);
  for (int i = 0; i < 50; ++i) {
    const Matrix2d m = mass_matrix(p, Vector2d(6 * rng.uniform() - 3, 6 * rng.uniform() - 3));
    CHECK((m - m.transpose()).norm() == 0.0);
    CHECK(m.determinant() > 0.0);
  }
}

TEST_CASE("coriolis matrix examples") {
  ArmParams p = table_arm();
  CHECK(p.k() == rel(0.043550).epsilon(1e-4));
  CHECK(coriolis_matrix(p, Vector2d(0.4, 1.0), Vector2d::Zero()).norm() == 0.0);
  CHECK(coriolis_matrix(p, Vector2d(0.4, 0.0), Vector2d(3, -2)).norm() == 0.0);

  Matrix2d expected;
  expected << 2, 3, 1, 0;
  expected *= p.k();
  p.coriolis = CoriolisConvention::kPrinted;
  CHECK((coriolis_matrix(p, Vector2d(0, pi / 2), Vector2d(1, 2)) - expected).norm() < 1e-15);
  // The default convention negates the first row of the printed pattern.
  p.coriolis = CoriolisConvention::kEnergyConsistent;
  Matrix2d flipped;
  flipped << -2, -3, 1, 0;
  flipped *= p.k();
  CHECK((coriolis_matrix(p, Vector2d(0, pi / 2), Vector2d(1, 2)) - flipped).norm() < 1e-15);
}

TEST_CASE("accel examples") {
  ArmParams p = table_arm();
  ArmState rest;
  rest.theta = Vector2d(-pi / 2, pi / 2);
  CHECK(accel(p, rest, Vector2d::Zero()).norm() == 0.0);

  const Vector2d a = accel(p, rest, Vector2d(1, 0));
  // Independent solve with a pivoted QR of N.
  const Vector2d ref = mass_matrix(p, rest.theta).colPivHouseholderQr().solve(Vector2d(1, 0));
  CHECK((a - ref).norm() < 1e-12);
  CHECK(a(0) == rel(5.4295).epsilon(1e-4));
  CHECK(a(1) == rel(-5.4295).epsilon(1e-4));

  p.gamma0 = 2.0;
  CHECK((accel(p, rest, Vector2d(1, 0)) - 2.0 * a).norm() < 1e-12);
}

TEST_CASE("kinematics examples") {
  const ArmParams p = table_arm();
  const Vector2d hand = forward_kinematics(p, Vector2d(-pi / 2, pi / 2));
  CHECK(hand(0) == rel(0.254));
  CHECK(hand(1) == rel(-0.305));
  const Vector2d th = inverse_kinematics(p, hand);
  CHECK(th(0) == rel(-pi / 2));
  CHECK(th(1) == rel(pi / 2));

  const Vector2d ext = forward_kinematics(p, Vector2d(0, 0));
  CHECK(ext(0) == rel(0.559));
  CHECK(std::abs(ext(1)) < 1e-15);
  const Vector2d th0 = inverse_kinematics(p, Vector2d(p.l1 + p.l2, 0));
  CHECK(std::abs(th0(0)) < 1e-7);
  CHECK(std::abs(th0(1)) < 1e-7);

  CHECK_THROWS_AS(inverse_kinematics(p, Vector2d(0.02, 0.0)), UsageError);
  CHECK_THROWS_AS(inverse_kinematics(p, Vector2d(0.6, 0.0)), UsageError);
}

TEST_CASE("property: kinematic round trip on 1000 states") {
  const ArmParams p = table_arm();
  CounterRng rng(11, 2);
  for (int i = 0; i < 1000; ++i) {
    // Keep clear of the straight and folded elbow where arccos loses digits.
    const Vector2d th(2 * pi * rng.uniform() - pi, 0.05 + (pi - 0.1) * rng.uniform());
    const Vector2d hand = forward_kinematics(p, th);
    CHECK(hand.norm() <= p.l1 + p.l2 + 1e-15);
    const Vector2d back = inverse_kinematics(p, hand);
    CHECK(std::abs(std::remainder(back(0) - th(0), 2 * pi)) < 1e-9);
    CHECK(std::abs(back(1) - th(1)) < 1e-9);
    CHECK((forward_kinematics(p, back) - hand).norm() < 1e-9);
  }
}

TEST_CASE("property: constraint residual and power balance") {
  const ArmParams p = table_arm();
  CounterRng rng(12, 3);
  for (int i = 0; i < 200; ++i) {
    ArmState s;
    s.theta = Vector2d(4 * rng.uniform() - 2, 0.1 + 2.9 * rng.uniform());
    s.theta_dot = Vector2d(10 * rng.uniform() - 5, 10 * rng.uniform() - 5);
    const Vector2d q(2 * rng.uniform() - 1, 2 * rng.uniform() - 1);
    const Vector2d a = accel(p, s, q);
    const Matrix2d n = mass_matrix(p, s.theta);
    const Vector2d res = n * a + coriolis_matrix(p, s.theta, s.theta_dot) * s.theta_dot - p.gamma0 * q;
    CHECK(res.norm() < 1e-10);

    // d/dt of the kinetic energy by a centred difference along the flow.
    const double h = 1e-6;
    auto advance = [&](double sign) {
      ArmState t = s;
      t.theta += sign * h * s.theta_dot;
      t.theta_dot += sign * h * a;
      return kinetic_energy(p, t);
    };
    const double dke = (advance(1) - advance(-1)) / (2 * h);
    const double power = p.gamma0 * q.dot(s.theta_dot);
    CHECK(dke == rel(power).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("property: kinetic energy conserved in free motion") {
  const ArmParams p = table_arm();
  auto model = as_system_model(p, ArmObjective::kAngles);
  Horizon h{0.1, 0.0, 1e-5, 1e-3};
  // Zero hold time is not a valid horizon, so split the 100 ms window.
  h.reach_time = 0.05;
  h.hold_time = 0.05;
  const RealizedControl zero = realize_bins(MatrixXd::Zero(2, h.total_bins()), h);
  for (const auto& w : {Vector2d(1.0, -2.0), Vector2d(4.0, 3.0)}) {
    VectorXd x0(4);
    x0 << -pi / 2, pi / 2, w(0), w(1);
    const MatrixXd traj = simulate_noiseless(*model, h, zero, x0);
    const double e0 = kinetic_energy(p, ArmState::from_stacked(traj.col(0)));
    const double e1 = kinetic_energy(p, ArmState::from_stacked(traj.col(traj.cols() - 1)));
    CHECK(std::abs(e1 - e0) / e0 < 1e-3);
  }
  // The printed sign pattern does not conserve energy.
  ArmParams printed = p;
  printed.coriolis = CoriolisConvention::kPrinted;
  auto pm = as_system_model(printed, ArmObjective::kAngles);
  VectorXd x0(4);
  x0 << -pi / 2, pi / 2, 4.0, 3.0;
  const MatrixXd traj = simulate_noiseless(*pm, h, zero, x0);
  const double e0 = kinetic_energy(p, ArmState::from_stacked(traj.col(0)));
  const double e1 = kinetic_energy(p, ArmState::from_stacked(traj.col(traj.cols() - 1)));
  CHECK(std::abs(e1 - e0) / e0 > 1e-3);
}

TEST_CASE("system model structure and analytic Jacobians") {
  const ArmParams p = table_arm();
  auto hand = as_system_model(p, ArmObjective::kHand);
  auto angles = as_system_model(p, ArmObjective::kAngles);
  CHECK(hand->state_dim() == 4);
  CHECK(hand->control_dim() == 2);
  CHECK(hand->objective_dim() == 2);

  VectorXd rest(4);
  rest << -pi / 2, pi / 2, 0, 0;
  const MatrixXd b = hand->gain(rest, 0.0);
  CHECK(b.topRows(2).norm() == 0.0);
  const Matrix2d ninv = mass_matrix(p, Vector2d(-pi / 2, pi / 2)).inverse();
  CHECK((b.bottomRows(2) - p.gamma0 * ninv).norm() < 1e-12);
  CHECK((angles->objective(rest, 0.0) - rest.head(2)).norm() == 0.0);
  CHECK((hand->objective(rest, 0.0) - Eigen::Vector2d(0.254, -0.305)).norm() < 1e-12);

  CounterRng rng(13, 4);
  for (int i = 0; i < 50; ++i) {
    VectorXd x(4);
    x << 4 * rng.uniform() - 2, 0.2 + 2.8 * rng.uniform(), 6 * rng.uniform() - 3, 6 * rng.uniform() - 3;
    VectorXd lambda(2);
    lambda << 4 * rng.uniform() - 2, 4 * rng.uniform() - 2;

    MatrixXd analytic;
    hand->controlled_drift_jacobian(x, 0.0, lambda, analytic);
    MatrixXd fd(4, 4);
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-6 * (1 + std::abs(x(j)));
      VectorXd xp = x, xm = x, fp, fm;
      xp(j) += h;
      xm(j) -= h;
      hand->controlled_drift(xp, 0.0, lambda, fp);
      hand->controlled_drift(xm, 0.0, lambda, fm);
      fd.col(j) = (fp - fm) / (2 * h);
    }
    CHECK((analytic - fd).norm() < 1e-6 * (1 + fd.norm()));

    MatrixXd dphi;
    hand->objective_jacobian(x, 0.0, dphi);
    MatrixXd fdo(2, 4);
    for (int j = 0; j < 4; ++j) {
      const double h = 1e-6 * (1 + std::abs(x(j)));
      VectorXd xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      fdo.col(j) = (hand->objective(xp, 0.0) - hand->objective(xm, 0.0)) / (2 * h);
    }
    CHECK((dphi - fdo).norm() < 1e-8);
  }
}

TEST_CASE("working length units") {
  const ArmParams si = table_arm();
  const ArmParams cm = si.with_length_unit(100.0);
  ArmState s;
  s.theta = Vector2d(-0.7, 1.2);
  s.theta_dot = Vector2d(0.5, -1.0);
  // Same joint motion when torques are scaled by factor^2.
  const Vector2d q(0.3, -0.2);
  CHECK((accel(si, s, q) - accel(cm, s, 1e4 * q)).norm() < 1e-9);
  CHECK((forward_kinematics(cm, s.theta) - 100.0 * forward_kinematics(si, s.theta)).norm() < 1e-12);
}
