#include "ycontrol/quadrature.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ycontrol/errors.hpp"

namespace ycontrol {
namespace {

double integrate_piece(const ScalarFn& f, double a, double b, double rel_tol,
                       double& abs_error, double& l1) {
  double err = 0.0;
  double piece_l1 = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
      f, a, b, 20, rel_tol, &err, &piece_l1);
  abs_error += err;
  l1 += piece_l1;
  return value;
}

}  // namespace

double integrate(const ScalarFn& f, double a, double b, double rel_tol,
                 std::span<const double> breakpoints) {
  if (a == b) return 0.0;
  if (!(std::isfinite(a) && std::isfinite(b)))
    throw UsageError("integrate: limits must be finite");
  const double sign = a < b ? 1.0 : -1.0;
  const double lo = std::min(a, b), hi = std::max(a, b);

  std::vector<double> knots{lo};
  for (double c : breakpoints)
    if (c > lo && c < hi) knots.push_back(c);
  knots.push_back(hi);
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());

  double total = 0.0, abs_error = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i)
    total += integrate_piece(f, knots[i], knots[i + 1], rel_tol, abs_error, l1);
  if (!std::isfinite(total) || abs_error > std::max(rel_tol * l1, 1e-300) * 10.0)
    throw NumericError("quadrature did not converge (error estimate " +
                       std::to_string(abs_error) + ")");
  return sign * total;
}

}  // namespace ycontrol
