#pragma once

#include <span>

#include "ycontrol/core_model.hpp"
#include "ycontrol/quadrature.hpp"

namespace ycontrol {

// Scalar plant dx/dt = p x + q u with objective phi = x and target z0.
struct LinearSystem {
  double p = 0.0;
  double q = 1.0;
  double x0 = 0.0;
  double z0 = 0.0;
  NoiseSpec noise;
  Horizon horizon;

  // Throws UsageError when q == 0 or the noise has != 1 channel.
  void validate() const;
  double kappa() const { return noise.kappa[0]; }
};

// x0 e^{pt} + int_0^t e^{p(t-s)} q lambda(s) ds.
double mean_trajectory(const LinearSystem& sys, const ScalarFn& lambda, double t,
                       std::span<const double> breakpoints = {});

// int_0^t e^{2p(t-s)} kappa^2 q^2 |lambda(s)|^{2 alpha} ds.
double variance_trajectory(const LinearSystem& sys, const ScalarFn& lambda,
                           double t, std::span<const double> breakpoints = {});

// Coefficient c of the reach control c e^{p(t-T)}.
double reach_coefficient(const LinearSystem& sys);
// Constant control -p z0 / q that keeps the mean at z0.
double hold_level(const LinearSystem& sys);

ScalarFn optimal_reach_control(const LinearSystem& sys);
// Reach control on [0, T), hold level on [T, T+R].
ScalarFn reach_then_hold_control(const LinearSystem& sys);

struct HoldMeasure {
  double mu = 0.0;
  double nu = 0.0;
};

// Constant three-point weights for the hold window. Throws InfeasibleError
// when |p z0 / q| > M_Y.
HoldMeasure optimal_hold_measure(const LinearSystem& sys);

// Mean control profile: c e^{p(t-T)} on [0, T), h on [T, T+R].
struct ControlProfile {
  double reach = 0.0;
  double hold = 0.0;
};

// Accumulated variance int_T^{T+R} var x(t) dt when every instant of the
// profile is realized by the lifted measure (weight |u|/M_Y at sign(u) M_Y),
// i.e. E|lambda|^{2 alpha} = M_Y^{2 alpha - 1} |u|.
double hold_variance_bound(const LinearSystem& sys, const ControlProfile& profile);
// Same with the reach and hold controls of the system itself.
double hold_variance_bound(const LinearSystem& sys);

// Coefficients of the reduced functional for this plant. gamma is the
// multiplier on the hold window; the t <= T branch of g is kept as written.
double functional_g(const LinearSystem& sys, double t);
double functional_f(const LinearSystem& sys, const ScalarFn& gamma, double t);
double functional_mu(const LinearSystem& sys, const ScalarFn& gamma, double t);

}  // namespace ycontrol
