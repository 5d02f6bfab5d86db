#pragma once

#include <iosfwd>
#include <vector>

#include "ycontrol/core_model.hpp"

namespace ycontrol {

struct MomentState {
  VectorXd mean;
  MatrixXd cov;

  static MomentState deterministic(const VectorXd& x0);
};

// Weights of one control bin, one entry per channel. With `dirac` the bin
// instead carries the ordinary control (mu - nu) M_Y, whose noise intensity
// is kappa^2 |(mu - nu) M_Y|^{2 alpha}.
struct BinWeights {
  VectorXd mu;
  VectorXd nu;
  bool dirac = false;

  static BinWeights from_schedule(const MeasureSchedule& schedule, int bin);
  VectorXd mean_control(double m_y) const { return (mu - nu) * m_y; }
};

// mean' = mean + dt A(mean, t, (mu - nu) M_Y). The drift is evaluated at the
// mean (first-order closure).
VectorXd propagate_mean(const SystemModel& model, const NoiseSpec& noise,
                        const MomentState& state, const BinWeights& weights,
                        double t, double dt);

// cov' = cov + dt (J cov + cov J^T)
//            + dt sum_j b_j b_j^T kappa_j^2 (mu_j + nu_j) M_Y^{2 alpha},
// (kappa_j^2 |lambda_j|^{2 alpha} for Dirac bins)
// J the state Jacobian of A at the mean; symmetrized and, when the smallest
// eigenvalue drops below -1e-10, projected back onto the PSD cone.
MatrixXd propagate_cov(const SystemModel& model, const NoiseSpec& noise,
                       const MomentState& state, const BinWeights& weights,
                       double t, double dt);

// Both updates from the same old state, in place.
void propagate_step(const SystemModel& model, const NoiseSpec& noise,
                    MomentState& state, const BinWeights& weights, double t,
                    double dt);

// Objective mean phi(mean) and delta-method variance diag(D cov D^T).
void objective_moments(const SystemModel& model, const MomentState& state,
                       double t, VectorXd& phi_mean, VectorXd& phi_var);

// Advances `steps` integration steps of one control bin starting at t0.
// When `in_hold`, returns the bin's share of the trapezoidal integral of
// sum_i var(phi_i) (half weight at both bin edges); otherwise 0. Throws
// EscapeError if the mean leaves the state box.
double advance_bin(const SystemModel& model, const NoiseSpec& noise,
                   MomentState& state, const BinWeights& weights, double t0,
                   double dt, int steps, bool in_hold);

struct HorizonMoments {
  std::vector<double> times;       // bin boundaries, bins + 1 entries
  std::vector<MomentState> states; // at the bin boundaries
  MatrixXd phi_mean;               // k x (bins + 1)
  MatrixXd phi_var;                // k x (bins + 1)
  // Trapezoidal int_T^{T+R} sum_i var(phi_i) dt on the integration grid.
  double hold_variance = 0.0;
};

// Full sweep at dt_integrate. Throws EscapeError if the mean leaves the
// state box and NumericError on non-finite values.
HorizonMoments propagate_horizon(const SystemModel& model, const NoiseSpec& noise,
                                 const Horizon& horizon,
                                 const MeasureSchedule& schedule,
                                 const VectorXd& x0);

// `t,mean_1..mean_k,var_1..var_k` at bin boundaries.
void write_moments_csv(std::ostream& out, const HorizonMoments& moments);

}  // namespace ycontrol
