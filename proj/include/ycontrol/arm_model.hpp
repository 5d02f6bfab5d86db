#pragma once

#include <Eigen/Dense>

#include <memory>

#include "ycontrol/core_model.hpp"

namespace ycontrol {

using Eigen::Matrix2d;
using Eigen::Vector2d;

// Sign convention of the velocity-coupling matrix C.
//   kEnergyConsistent: C = k sin(th2) [[-w2, -(w1 + w2)], [w1, 0]], the matrix
//     obtained from the Lagrangian; N' - 2C is skew and kinetic energy is
//     conserved in free motion.
//   kPrinted: C = k sin(th2) [[w2, w1 + w2], [w1, 0]], the sign pattern found
//     in some references for this arm. Kept for comparison only.
enum class CoriolisConvention { kEnergyConsistent, kPrinted };

struct ArmParams {
  double m1 = 2.28, m2 = 1.31;
  double l1 = 0.305, l2 = 0.254;
  double I1 = 0.022, I2 = 0.0077;
  double r1 = 0.133, r2 = 0.109;
  double gamma0 = 1.0;
  double kappa0 = 1.0;
  CoriolisConvention coriolis = CoriolisConvention::kEnergyConsistent;

  // Throws UsageError unless masses, lengths and inertias are positive.
  void validate() const;
  double k() const { return m2 * l1 * r2; }

  // Same arm expressed with lengths multiplied by `factor` (e.g. 100 for cm):
  // l and r scale by factor, inertias by factor^2. Joint-angle dynamics are
  // unchanged; torques scale by factor^2.
  ArmParams with_length_unit(double factor) const;
};

struct ArmState {
  Vector2d theta = Vector2d::Zero();
  Vector2d theta_dot = Vector2d::Zero();

  Eigen::Vector4d stacked() const;
  static ArmState from_stacked(const VectorXd& x);
};

Matrix2d mass_matrix(const ArmParams& params, const Vector2d& theta);
Matrix2d coriolis_matrix(const ArmParams& params, const Vector2d& theta,
                         const Vector2d& theta_dot);

// N^{-1} (gamma0 Q - C theta_dot). Throws NumericError if |det N| < 1e-12.
Vector2d accel(const ArmParams& params, const ArmState& state,
               const Vector2d& torque);

double kinetic_energy(const ArmParams& params, const ArmState& state);

Vector2d forward_kinematics(const ArmParams& params, const Vector2d& theta);
// Elbow-positive branch. Throws UsageError outside the reachable annulus
// (with 1e-12 slack on the radii).
Vector2d inverse_kinematics(const ArmParams& params, const Vector2d& hand);

enum class ArmObjective { kAngles, kHand };

// State (th1, th2, w1, w2), controls = the two joint torques, objective =
// joint angles or hand position. Analytic Jacobians. The state box keeps
// |th2| <= pi, |th1| <= 4 pi and joint speeds within +-max_speed.
std::shared_ptr<const SystemModel> as_system_model(const ArmParams& params,
                                                   ArmObjective objective,
                                                   double max_speed = 500.0);

}  // namespace ycontrol
