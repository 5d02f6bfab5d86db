#include "ycontrol/hamiltonian.hpp"

#include <algorithm>
#include <cmath>

#include "ycontrol/errors.hpp"

namespace ycontrol {
namespace {

double sign_of(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

double raw_integrand(const IntegrandCoeffs& c, double xi) {
  return c.g * std::pow(std::abs(xi), 2.0 * c.alpha) - c.f * xi;
}

}  // namespace

void IntegrandCoeffs::validate() const {
  if (!(m_y > 0.0)) throw UsageError("integrand: m_y must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw UsageError("integrand: alpha must lie in (0, 1]");
  if (!std::isfinite(g) || !std::isfinite(f))
    throw UsageError("integrand: coefficients must be finite");
}

std::string_view to_string(MinimaRegime regime) {
  switch (regime) {
    case MinimaRegime::kInteriorUnique: return "interior-unique";
    case MinimaRegime::kBoundary: return "boundary";
    case MinimaRegime::kDegenerateTie: return "degenerate-tie";
  }
  return "unknown";
}

double integrand(const IntegrandCoeffs& c, double xi) {
  c.validate();
  if (!(std::abs(xi) <= c.m_y))
    throw UsageError("integrand: xi outside [-m_y, m_y]");
  return raw_integrand(c, xi);
}

MinimaReport classify_minima(const IntegrandCoeffs& c, double tie_tol) {
  c.validate();
  if (!(tie_tol > 0.0)) throw UsageError("classify_minima: tie_tol must be > 0");
  const double m = c.m_y;
  MinimaReport report;

  if (c.g == 0.0 && c.f == 0.0) {
    report.argmin_set = {-m, 0.0, m};
    report.min_value = 0.0;
    report.regime = MinimaRegime::kDegenerateTie;
    return report;
  }

  if (c.g > 0.0 && c.alpha > 0.5) {
    // Strictly convex: one minimizer.
    double xi = 0.0;
    if (c.f != 0.0) {
      const double magnitude =
          std::pow(std::abs(c.f) / (2.0 * c.alpha * c.g), 1.0 / (2.0 * c.alpha - 1.0));
      xi = sign_of(c.f) * std::min(m, magnitude);
    }
    report.argmin_set = {xi};
    report.min_value = raw_integrand(c, xi);
    report.regime = std::abs(xi) < m ? MinimaRegime::kInteriorUnique
                                     : MinimaRegime::kBoundary;
    return report;
  }

  // Every other case is concave, linear, or (g < 0, alpha < 0.5) convex on
  // each half-line with its minimum pushed to sign(f) m_y; the global
  // minimum is then always among {-m, 0, m}.
  const double candidates[] = {-m, 0.0, m};
  double values[3];
  for (int i = 0; i < 3; ++i) values[i] = raw_integrand(c, candidates[i]);
  const double best = *std::min_element(values, values + 3);
  const double band = tie_band(best, tie_tol);
  for (int i = 0; i < 3; ++i)
    if (values[i] - best <= band) report.argmin_set.push_back(candidates[i]);
  report.min_value = best;
  if (report.argmin_set.size() > 1) {
    report.regime = MinimaRegime::kDegenerateTie;
  } else {
    report.regime = report.argmin_set.front() == 0.0 ? MinimaRegime::kInteriorUnique
                                                     : MinimaRegime::kBoundary;
  }
  return report;
}

double tie_coefficient(const IntegrandCoeffs& c) {
  c.validate();
  if (!(c.g > 0.0) || !(c.alpha < 0.5))
    throw UsageError("tie_coefficient needs g > 0 and alpha < 0.5");
  return c.g * std::pow(c.m_y, 2.0 * c.alpha - 1.0);
}

}  // namespace ycontrol
