#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>

#include "ycontrol/core_model.hpp"

namespace ycontrol {

// How the noiseless reach solver picks among the many controls that meet
// the constraints.
//   kMinimumEffort: smallest sum of squared bin controls.
//   kEqualContribution: every bin's control weighted by the size of its
//     influence on the residuals, so each bin contributes evenly. For the
//     scalar linear plant this reproduces c e^{p(t - T)}.
enum class ReachRegularization { kMinimumEffort, kEqualContribution };

struct ReachOptions {
  double m_y = 1.0;
  int max_iters = 40;
  int restarts = 3;
  std::uint64_t seed = 1;
  ReachRegularization regularization = ReachRegularization::kMinimumEffort;
  // Residual samples per control bin inside the hold window (plus t = T+R).
  int samples_per_bin = 4;
};

struct ReachResult {
  MatrixXd u_bins;  // m x total bins
  double residual = 0.0;  // max over samples of |phi - z|
  int iterations = 0;
};

// Piecewise-constant control with |u| <= M_Y that brings the noiseless
// plant to phi = z on [T, T+R]. Single shooting on the integration grid,
// Gauss-Newton with forward-difference Jacobians. Throws InfeasibleError
// when no restart gets every residual within the target tolerance.
ReachResult solve_noiseless_reach(const SystemModel& model, const Horizon& horizon,
                                  const TargetSpec& target, const VectorXd& x0,
                                  const ReachOptions& options);

// Weight |u|/M_Y at sign(u) M_Y per bin. Throws InfeasibleError when
// |u| > M_Y (relative slack 1e-12).
MeasureSchedule lift_to_schedule(const MatrixXd& u_bins, const NoiseSpec& noise,
                                 double bin_width);

struct OptProblem {
  std::shared_ptr<const SystemModel> model;
  NoiseSpec noise;
  Horizon horizon;
  TargetSpec target;
  VectorXd x0;
  double penalty_weight = 1.0;
  double max_penalty = 1e14;
  int max_iters = 300;
  int restarts = 8;
  std::uint64_t seed = 1;
  int threads = 1;
  double fd_step = 1e-4;
  // Half-width of the uniform perturbation added to the warm start for
  // restarts after the first, relative to max |w| of the warm start.
  double restart_spread = 0.2;
  ReachRegularization reach_regularization = ReachRegularization::kMinimumEffort;
  // Signed weights to start from; when empty the lifted noiseless reach is
  // used.
  std::optional<MatrixXd> warm_start;
  // Optimize an ordinary control (Dirac measure per bin) instead of the
  // three-point measure; the right family when alpha > 0.5.
  bool dirac = false;
  // Called after every accepted iteration (possibly from worker threads).
  std::function<void(int restart, int iteration, double penalty, double variance,
                     double residual)>
      progress;

  void validate() const;
};

struct OptResult {
  MeasureSchedule schedule;
  double objective = 0.0;            // hold-window variance
  double constraint_residual = 0.0;  // max over hold bins of |E phi - z|
  double penalty_weight = 0.0;
  int iterations = 0;
  int restart = 0;
  bool converged = false;
};

// Hold-window variance and constraint residual of a schedule under the
// moment model, as used by the optimizer.
struct ScheduleScore {
  double hold_variance = 0.0;
  double residual = 0.0;
  double penalty_sum = 0.0;
};
ScheduleScore score_schedule(const OptProblem& problem, const MatrixXd& signed_weights);

OptResult solve(const OptProblem& problem);

// key = value lines.
void write_opt_manifest(std::ostream& out, const OptResult& result,
                        std::uint64_t seed, double seconds);

}  // namespace ycontrol
