#pragma once

#include <functional>
#include <span>

namespace ycontrol {

using ScalarFn = std::function<double(double)>;

// Adaptive Gauss-Kronrod (7/15) on [a, b]. Integration is split at any
// breakpoints falling strictly inside (a, b) so that kinks and jumps of
// piecewise controls do not stall refinement. Throws NumericError when the
// error estimate misses rel_tol (with an absolute floor of 1e-300).
double integrate(const ScalarFn& f, double a, double b, double rel_tol = 1e-10,
                 std::span<const double> breakpoints = {});

}  // namespace ycontrol
