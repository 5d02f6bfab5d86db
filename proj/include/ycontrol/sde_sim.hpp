#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ycontrol/core_model.hpp"

namespace ycontrol {

// Control value applied on each integration step: levels(i, n) is channel i
// on [n dt, (n + 1) dt).
class RealizedControl {
 public:
  enum class Mode { kSchedule, kDeterministic };

  RealizedControl() = default;
  RealizedControl(Mode mode, MatrixXd levels, double dt);

  Mode mode() const { return mode_; }
  int channels() const { return static_cast<int>(levels_.rows()); }
  int steps() const { return static_cast<int>(levels_.cols()); }
  double dt() const { return dt_; }
  const MatrixXd& levels() const { return levels_; }
  MatrixXd& mutable_levels() { return levels_; }
  auto at(int step) const { return levels_.col(step); }

  // Average of channel i over steps [first, first + count).
  double window_average(int channel, int first, int count) const;

 private:
  Mode mode_ = Mode::kDeterministic;
  MatrixXd levels_;
  double dt_ = 0.0;
};

// Time-slices every bin as [+M_Y for mu, -M_Y for nu, 0 for the rest].
// Step counts are rounded per channel from the running total of mu (and of
// nu) so each bin is within one step of its weights and the rounding error
// does not accumulate across bins. Throws ConfigurationError when the
// schedule does not cover the horizon or the bin is not a whole number of
// steps.
RealizedControl realize_schedule(const MeasureSchedule& schedule,
                                 const NoiseSpec& noise, const Horizon& horizon);

// Piecewise-constant control, one value per control bin.
RealizedControl realize_bins(const MatrixXd& bin_values, const Horizon& horizon);

// Each channel's function sampled at step midpoints.
RealizedControl realize_functions(
    const std::vector<std::function<double(double)>>& channels,
    const Horizon& horizon);

// One Euler-Maruyama step:
//   x' = x + A(x,t,lambda) dt + B(x,t,lambda) sqrt(dt) draws,
//   B_ij = b_ij kappa_j |lambda_j|^alpha.
// Throws EscapeError when x' leaves the state box.
VectorXd step(const SystemModel& model, const NoiseSpec& noise,
              const VectorXd& x, double t, const VectorXd& lambda, double dt,
              const VectorXd& gaussian_draws);

enum class EscapePolicy { kAbort, kDropAndFlag };

struct EnsembleOptions {
  int paths = 1000;
  std::uint64_t seed = 1;
  int threads = 1;
  EscapePolicy escape = EscapePolicy::kAbort;
  // Keep every path's objective trajectory (memory: paths x points x k).
  bool keep_paths = false;
  // Record statistics every `record_stride` integration steps. The hold
  // window integral always uses the full step grid.
  int record_stride = 1;
};

struct TrajectoryEnsemble {
  int paths_requested = 0;
  int paths_used = 0;
  int escaped = 0;
  std::uint64_t rng_seed = 0;
  double dt = 0.0;
  std::vector<double> times;
  MatrixXd mean;         // k x points
  MatrixXd variance;     // k x points, unbiased
  MatrixXd variance_se;  // standard error of the variance estimate
  double exec_error = 0.0;  // int_T^{T+R} sum_i var(phi_i) dt
  double bias_error = 0.0;  // int_T^{T+R} |E phi - z|^2 dt
  double mean_std = 0.0;    // time average over the hold window of sqrt(sum var)
  // Only with keep_paths: paths[p] is k x points.
  std::vector<MatrixXd> paths;

  double hold_time = 0.0;
  // sqrt(exec_error / R): RMS spread around the ensemble mean.
  double rms_error() const;
  // sqrt((exec_error + bias_error) / R): RMS distance to the target.
  double rms_total_error() const;
  VectorXd mean_se(int point) const;
};

// Supplies the control for one path. Called concurrently with distinct
// path indices; must be deterministic in (path).
using PathControlFn = std::function<void(int path, RealizedControl& out)>;

TrajectoryEnsemble run_ensemble(const SystemModel& model, const NoiseSpec& noise,
                                const Horizon& horizon,
                                const RealizedControl& control,
                                const TargetSpec& target, const VectorXd& x0,
                                const EnsembleOptions& options);

TrajectoryEnsemble run_ensemble(const SystemModel& model, const NoiseSpec& noise,
                                const Horizon& horizon,
                                const PathControlFn& control,
                                const TargetSpec& target, const VectorXd& x0,
                                const EnsembleOptions& options);

// Single noiseless trajectory: states at every step (n x (steps + 1)).
MatrixXd simulate_noiseless(const SystemModel& model, const Horizon& horizon,
                            const RealizedControl& control, const VectorXd& x0);

// `t,mean_1..mean_k,var_1..var_k`
void write_ensemble_csv(std::ostream& out, const TrajectoryEnsemble& ensemble);
// `t,u_1..u_m`
void write_control_csv(std::ostream& out, const RealizedControl& control);
// key = value lines: seed, paths, dt values, escapes, errors.
void write_ensemble_manifest(std::ostream& out, const TrajectoryEnsemble& ensemble,
                             const Horizon& horizon);

}  // namespace ycontrol
