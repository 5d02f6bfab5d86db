#include "ycontrol/arm_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ycontrol/errors.hpp"

namespace ycontrol {
namespace {

double coriolis_sign(const ArmParams& p) {
  return p.coriolis == CoriolisConvention::kPrinted ? 1.0 : -1.0;
}

// C(theta, w) w.
Vector2d coriolis_force(const ArmParams& p, double theta2, const Vector2d& w) {
  const double ks = p.k() * std::sin(theta2);
  const double s = coriolis_sign(p);
  return {ks * s * (2.0 * w[0] * w[1] + w[1] * w[1]), ks * w[0] * w[0]};
}

}  // namespace

void ArmParams::validate() const {
  if (!(m1 > 0 && m2 > 0 && l1 > 0 && l2 > 0 && I1 > 0 && I2 > 0 && r1 > 0 &&
        r2 > 0))
    throw UsageError("arm masses, lengths and inertias must be positive");
  if (!(gamma0 > 0)) throw UsageError("arm gamma0 must be positive");
  if (!(kappa0 >= 0)) throw UsageError("arm kappa0 must be >= 0");
}

ArmParams ArmParams::with_length_unit(double factor) const {
  ArmParams out = *this;
  out.l1 *= factor;
  out.l2 *= factor;
  out.r1 *= factor;
  out.r2 *= factor;
  out.I1 *= factor * factor;
  out.I2 *= factor * factor;
  return out;
}

Eigen::Vector4d ArmState::stacked() const {
  return {theta[0], theta[1], theta_dot[0], theta_dot[1]};
}

ArmState ArmState::from_stacked(const VectorXd& x) {
  return {Vector2d(x[0], x[1]), Vector2d(x[2], x[3])};
}

Matrix2d mass_matrix(const ArmParams& p, const Vector2d& theta) {
  const double kc = p.k() * std::cos(theta[1]);
  const double distal = p.I2 + p.m2 * p.r2 * p.r2;
  Matrix2d n;
  n(0, 0) = p.I1 + p.m1 * p.r1 * p.r1 + p.m2 * p.l1 * p.l1 + distal + 2.0 * kc;
  n(0, 1) = distal + kc;
  n(1, 0) = n(0, 1);
  n(1, 1) = distal;
  return n;
}

Matrix2d coriolis_matrix(const ArmParams& p, const Vector2d& theta,
                         const Vector2d& w) {
  const double ks = p.k() * std::sin(theta[1]);
  const double s = coriolis_sign(p);
  Matrix2d c;
  c << s * w[1], s * (w[0] + w[1]), w[0], 0.0;
  return ks * c;
}

Vector2d accel(const ArmParams& p, const ArmState& state, const Vector2d& torque) {
  const Matrix2d n = mass_matrix(p, state.theta);
  const double det = n.determinant();
  if (std::abs(det) < 1e-12)
    throw NumericError("arm mass matrix is singular");
  const Vector2d rhs =
      p.gamma0 * torque - coriolis_force(p, state.theta[1], state.theta_dot);
  return n.inverse() * rhs;
}

double kinetic_energy(const ArmParams& p, const ArmState& state) {
  return 0.5 * state.theta_dot.dot(mass_matrix(p, state.theta) * state.theta_dot);
}

Vector2d forward_kinematics(const ArmParams& p, const Vector2d& theta) {
  const double elbow = theta[0] + theta[1];
  return {p.l1 * std::cos(theta[0]) + p.l2 * std::cos(elbow),
          p.l1 * std::sin(theta[0]) + p.l2 * std::sin(elbow)};
}

Vector2d inverse_kinematics(const ArmParams& p, const Vector2d& hand) {
  const double r2 = hand.squaredNorm();
  const double r = std::sqrt(r2);
  const double slack = 1e-12 * (p.l1 + p.l2);
  if (r > p.l1 + p.l2 + slack || r < std::abs(p.l1 - p.l2) - slack)
    throw UsageError("hand position outside the reachable annulus");
  const double cos2 = std::clamp(
      (r2 - p.l1 * p.l1 - p.l2 * p.l2) / (2.0 * p.l1 * p.l2), -1.0, 1.0);
  const double theta2 = std::acos(cos2);
  const double theta1 = std::atan2(hand[1], hand[0]) -
                        std::atan2(p.l2 * std::sin(theta2), p.l1 + p.l2 * cos2);
  return {std::remainder(theta1, 2.0 * std::numbers::pi), theta2};
}

namespace {

class ArmSystem final : public SystemModel {
 public:
  ArmSystem(const ArmParams& params, ArmObjective objective, double max_speed)
      : SystemModel(4, 2, 2, make_box(max_speed)),
        params_(params),
        objective_mode_(objective) {
    params_.validate();
  }

  void drift(const VectorXd& x, double, VectorXd& out) const override {
    out.resize(4);
    const Vector2d w(x[2], x[3]);
    const Matrix2d n = mass_matrix(params_, Vector2d(x[0], x[1]));
    const Vector2d acc = n.inverse() * (-coriolis_force(params_, x[1], w));
    out << w, acc;
  }

  void gain(const VectorXd& x, double, MatrixXd& out) const override {
    out.setZero(4, 2);
    out.bottomRows<2>() =
        params_.gamma0 * mass_matrix(params_, Vector2d(x[0], x[1])).inverse();
  }

  void objective(const VectorXd& x, double, VectorXd& out) const override {
    const Vector2d theta(x[0], x[1]);
    out = objective_mode_ == ArmObjective::kAngles
              ? VectorXd(theta)
              : VectorXd(forward_kinematics(params_, theta));
  }

  void controlled_drift(const VectorXd& x, double, const VectorXd& lambda,
                        VectorXd& out) const override {
    out.resize(4);
    const Vector2d w(x[2], x[3]);
    const Matrix2d n = mass_matrix(params_, Vector2d(x[0], x[1]));
    const Vector2d rhs = params_.gamma0 * Vector2d(lambda[0], lambda[1]) -
                         coriolis_force(params_, x[1], w);
    out << w, n.inverse() * rhs;
  }

  void controlled_drift_jacobian(const VectorXd& x, double,
                                 const VectorXd& lambda,
                                 MatrixXd& out) const override {
    const double th2 = x[1];
    const Vector2d w(x[2], x[3]);
    const Matrix2d n_inv = mass_matrix(params_, Vector2d(x[0], th2)).inverse();
    const Vector2d force = coriolis_force(params_, th2, w);
    const Vector2d acc =
        n_inv * (params_.gamma0 * Vector2d(lambda[0], lambda[1]) - force);

    const double k = params_.k();
    const double s = coriolis_sign(params_);
    Matrix2d dn;  // dN/dth2
    dn << -2.0 * k * std::sin(th2), -k * std::sin(th2), -k * std::sin(th2), 0.0;
    const Vector2d dforce_dth2 =
        k * std::cos(th2) *
        Vector2d(s * (2.0 * w[0] * w[1] + w[1] * w[1]), w[0] * w[0]);
    Matrix2d dforce_dw;
    dforce_dw << s * 2.0 * w[1], s * 2.0 * (w[0] + w[1]), 2.0 * w[0], 0.0;
    dforce_dw *= k * std::sin(th2);

    out.setZero(4, 4);
    out(0, 2) = 1.0;
    out(1, 3) = 1.0;
    out.block<2, 1>(2, 1) = n_inv * (-dn * acc - dforce_dth2);
    out.block<2, 2>(2, 2) = -n_inv * dforce_dw;
  }

  void objective_jacobian(const VectorXd& x, double,
                          MatrixXd& out) const override {
    out.setZero(2, 4);
    if (objective_mode_ == ArmObjective::kAngles) {
      out(0, 0) = 1.0;
      out(1, 1) = 1.0;
      return;
    }
    const double elbow = x[0] + x[1];
    const double s1 = std::sin(x[0]), c1 = std::cos(x[0]);
    const double s12 = std::sin(elbow), c12 = std::cos(elbow);
    out(0, 0) = -params_.l1 * s1 - params_.l2 * s12;
    out(0, 1) = -params_.l2 * s12;
    out(1, 0) = params_.l1 * c1 + params_.l2 * c12;
    out(1, 1) = params_.l2 * c12;
  }

  using SystemModel::drift;
  using SystemModel::gain;
  using SystemModel::objective;

 private:
  static StateBox make_box(double max_speed) {
    const double pi = std::numbers::pi;
    VectorXd lo(4), hi(4);
    lo << -4.0 * pi, -pi, -max_speed, -max_speed;
    hi << 4.0 * pi, pi, max_speed, max_speed;
    return {lo, hi};
  }

  ArmParams params_;
  ArmObjective objective_mode_;
};

}  // namespace

std::shared_ptr<const SystemModel> as_system_model(const ArmParams& params,
                                                   ArmObjective objective,
                                                   double max_speed) {
  return std::make_shared<ArmSystem>(params, objective, max_speed);
}

}  // namespace ycontrol
