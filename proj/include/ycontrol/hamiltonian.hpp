#pragma once

#include <string_view>
#include <vector>

namespace ycontrol {

// Coefficients of h(xi) = g |xi|^{2 alpha} - f xi on [-m_y, m_y].
struct IntegrandCoeffs {
  double g = 1.0;
  double f = 0.0;
  double alpha = 0.25;
  double m_y = 1.0;

  void validate() const;
};

enum class MinimaRegime { kInteriorUnique, kBoundary, kDegenerateTie };

std::string_view to_string(MinimaRegime regime);

struct MinimaReport {
  std::vector<double> argmin_set;  // ascending
  double min_value = 0.0;
  MinimaRegime regime = MinimaRegime::kInteriorUnique;
};

double integrand(const IntegrandCoeffs& c, double xi);

// Width of the band within which two values of h count as tied.
inline double tie_band(double min_value, double tie_tol) {
  return tie_tol * (min_value < 0 ? -min_value : min_value) + 1e-12;
}

// Global minimizers of h on [-m_y, m_y]. Candidates are 0, +-m_y and, when
// h is convex (g > 0, alpha > 0.5), the clipped stationary point; every
// candidate within the tie band of the minimum is reported. At alpha = 0.5
// with |f| = g the whole segment [0, sign(f) m_y] is flat and its two end
// points are reported. g = f = 0 makes h vanish identically; the report then
// lists {-m_y, 0, m_y}.
MinimaReport classify_minima(const IntegrandCoeffs& c, double tie_tol = 1e-9);

// f at which h(0) = h(m_y): g m_y^{2 alpha - 1}. Needs g > 0, alpha < 0.5.
double tie_coefficient(const IntegrandCoeffs& c);

}  // namespace ycontrol
