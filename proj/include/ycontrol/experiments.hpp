#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ycontrol/arm_model.hpp"
#include "ycontrol/config.hpp"
#include "ycontrol/linear_analytic.hpp"
#include "ycontrol/optimizer.hpp"
#include "ycontrol/sde_sim.hpp"

namespace ycontrol {

// ---- linear plant -------------------------------------------------------

LinearSystem linear_system(const ExperimentConfig& config);

struct LinearCheckRow {
  int instance = 0;
  double t = 0.0;
  double mean_mc = 0.0, mean_exact = 0.0, mean_se = 0.0;
  double var_mc = 0.0, var_exact = 0.0, var_se = 0.0;

  double mean_z() const { return (mean_mc - mean_exact) / mean_se; }
  double var_z() const { return (var_mc - var_exact) / var_se; }
};

// Random plants drawn from config.check, each driven by its reach-then-hold
// control as a deterministic signal; Monte Carlo mean and variance compared
// with the closed forms at evenly spaced probe times.
std::vector<LinearCheckRow> linear_check(const ExperimentConfig& config);

// ---- arm task -----------------------------------------------------------

// The arm in working length units (config.arm.length_unit); torques and
// M_Y are in the matching units.
struct ArmTask {
  ArmParams params;
  double length_factor = 1.0;  // working units per metre
  std::shared_ptr<const SystemModel> model;  // configured objective
  VectorXd x0;
  VectorXd target;  // objective units
  TargetSpec target_spec;
  Horizon horizon;
  NoiseSpec noise;
};

ArmTask make_arm_task(const ExperimentConfig& config);

struct ControlPlan {
  ReachResult reach;
  MeasureSchedule schedule;  // for direct plans, the Dirac weights u / M_Y
  RealizedControl control;
  bool direct = false;
  std::optional<OptResult> optimized;
};

ScheduleMode resolve_mode(ScheduleMode mode, double alpha);

// Noiseless reach followed by the requested realization. Throws
// InfeasibleError when the reach or the lift fails.
ControlPlan plan_control(const std::shared_ptr<const SystemModel>& model,
                         const NoiseSpec& noise,
                         const Horizon& horizon, const TargetSpec& target,
                         const VectorXd& x0, ScheduleMode mode,
                         const OptimizerBlock& options, std::uint64_t seed,
                         int threads);

EnsembleOptions ensemble_options(const ExperimentConfig& config);

// ---- statistics ---------------------------------------------------------

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;  // from the per-point Monte Carlo errors
  double residual_se = 0.0;  // from the scatter about the line (n > 2)
};

// Weighted least squares of log y on log x with weights from the relative
// errors y_se / y.
SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                    const std::vector<double>& y_se);

// Standard error of rms_error() from the per-time variance errors, taking
// them as fully correlated in time (an upper bound).
double rms_error_se(const TrajectoryEnsemble& ensemble, const Horizon& horizon);

// ---- runner -------------------------------------------------------------

struct RunReport {
  std::vector<std::string> artifacts;
  std::vector<std::pair<std::string, std::string>> results;  // manifest extras
  bool inconclusive = false;
};

// Runs the configured experiment into config.output, creating the
// directory. Library errors propagate to the caller.
RunReport run_experiment(const ExperimentConfig& config, std::ostream& log);

// Name of the figure an experiment reproduces.
std::string figure_name(ExperimentKind kind);

}  // namespace ycontrol
