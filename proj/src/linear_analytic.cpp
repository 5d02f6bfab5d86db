#include "ycontrol/linear_analytic.hpp"

#include <cmath>

#include "ycontrol/errors.hpp"

namespace ycontrol {
namespace {

// (e^{a L} - 1) / a, continuous at a = 0.
double expm1_ratio(double a, double length) {
  const double x = a * length;
  if (std::abs(x) < 1e-8) return length * (1.0 + 0.5 * x);
  return std::expm1(x) / a;
}

// int_0^L (e^{a s} - 1)/a ds = (expm1_ratio(a, L) - L) / a.
double expm1_ratio_integral(double a, double length) {
  const double x = a * length;
  if (std::abs(x) < 1e-4)
    return length * length * (0.5 + x / 6.0 + x * x / 24.0);
  return (expm1_ratio(a, length) - length) / a;
}

}  // namespace

void LinearSystem::validate() const {
  if (q == 0.0) throw UsageError("linear system needs q != 0");
  if (noise.kappa.size() != 1)
    throw UsageError("linear system needs exactly one noise channel");
  noise.validate();
}

double mean_trajectory(const LinearSystem& sys, const ScalarFn& lambda, double t,
                       std::span<const double> breakpoints) {
  if (t < 0.0) throw UsageError("mean_trajectory: t must be >= 0");
  const double forced = integrate(
      [&](double s) { return std::exp(sys.p * (t - s)) * sys.q * lambda(s); },
      0.0, t, 1e-10, breakpoints);
  return sys.x0 * std::exp(sys.p * t) + forced;
}

double variance_trajectory(const LinearSystem& sys, const ScalarFn& lambda,
                           double t, std::span<const double> breakpoints) {
  if (t < 0.0) throw UsageError("variance_trajectory: t must be >= 0");
  const double k2q2 = sys.kappa() * sys.kappa() * sys.q * sys.q;
  if (k2q2 == 0.0) return 0.0;
  const double two_alpha = 2.0 * sys.noise.alpha;
  return integrate(
      [&](double s) {
        return std::exp(2.0 * sys.p * (t - s)) * k2q2 *
               std::pow(std::abs(lambda(s)), two_alpha);
      },
      0.0, t, 1e-10, breakpoints);
}

double reach_coefficient(const LinearSystem& sys) {
  const double T = sys.horizon.reach_time;
  if (!(T > 0.0)) throw UsageError("reach control needs T > 0");
  return (sys.z0 - sys.x0 * std::exp(sys.p * T)) / (T * sys.q);
}

double hold_level(const LinearSystem& sys) { return -sys.p * sys.z0 / sys.q; }

ScalarFn optimal_reach_control(const LinearSystem& sys) {
  const double c = reach_coefficient(sys);
  const double p = sys.p, T = sys.horizon.reach_time;
  return [c, p, T](double t) { return c * std::exp(p * (t - T)); };
}

ScalarFn reach_then_hold_control(const LinearSystem& sys) {
  const double c = reach_coefficient(sys);
  const double h = hold_level(sys);
  const double p = sys.p, T = sys.horizon.reach_time;
  return [c, h, p, T](double t) { return t < T ? c * std::exp(p * (t - T)) : h; };
}

HoldMeasure optimal_hold_measure(const LinearSystem& sys) {
  const double level = hold_level(sys);
  const double m_y = sys.noise.m_y;
  if (std::abs(level) > m_y)
    throw InfeasibleError("hold needs |p z0 / q| <= M_Y", std::abs(level) - m_y);
  if (level > 0.0) return {level / m_y, 0.0};
  return {0.0, -level / m_y};
}

double hold_variance_bound(const LinearSystem& sys, const ControlProfile& profile) {
  const double p = sys.p;
  const double T = sys.horizon.reach_time;
  const double R = sys.horizon.hold_time;
  const double alpha = sys.noise.alpha;
  const double scale = sys.kappa() * sys.kappa() * sys.q * sys.q *
                       std::pow(sys.noise.m_y, 2.0 * alpha - 1.0);
  const double reach_part = std::abs(profile.reach) * std::exp(p * T) *
                            expm1_ratio(-p, T) * expm1_ratio(2.0 * p, R);
  const double hold_part = std::abs(profile.hold) * expm1_ratio_integral(2.0 * p, R);
  return scale * (reach_part + hold_part);
}

double hold_variance_bound(const LinearSystem& sys) {
  return hold_variance_bound(sys, {reach_coefficient(sys), hold_level(sys)});
}

double functional_g(const LinearSystem& sys, double t) {
  const double T = sys.horizon.reach_time, R = sys.horizon.hold_time;
  const double k2q2 = sys.kappa() * sys.kappa() * sys.q * sys.q;
  const double two_p = 2.0 * sys.p;
  if (t <= T) {
    // e^{2p(T-t)} (e^{2pR} - 1) / (2p)
    return k2q2 * std::exp(two_p * (T - t)) * expm1_ratio(two_p, R);
  }
  return k2q2 * expm1_ratio(two_p, T + R - t);
}

double functional_f(const LinearSystem& sys, const ScalarFn& gamma, double t) {
  const double T = sys.horizon.reach_time, R = sys.horizon.hold_time;
  const double from = t <= T ? T : t;
  return -integrate(
      [&](double s) { return sys.q * gamma(s) * std::exp(sys.p * (s - t)); },
      from, T + R);
}

double functional_mu(const LinearSystem& sys, const ScalarFn& gamma, double t) {
  return gamma(t) * (sys.x0 * std::exp(sys.p * t) - sys.z0);
}

}  // namespace ycontrol
