#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ycontrol/arm_model.hpp"
#include "ycontrol/core_model.hpp"
#include "ycontrol/optimizer.hpp"
#include "ycontrol/sde_sim.hpp"

namespace ycontrol {

enum class ExperimentKind {
  kLinearCheck,
  kIntegrandSweep,
  kArmReach,
  kScalingStudy,
  kAlphaSweep,
  kPulseControl,
};

std::string to_string(ExperimentKind kind);
// Throws ConfigurationError for unknown names.
ExperimentKind parse_experiment(const std::string& name);

enum class Dimension { kNone, kTime, kLength, kAngle, kRate, kMass, kInertia };

// "650 ms" -> 0.65, "2 cm" -> 0.02 (SI). Plain numbers are only accepted
// for Dimension::kNone; anything else must name a unit.
double parse_quantity(const std::string& text, Dimension dim);

enum class SystemKind { kLinear, kArm };
// How the Monte Carlo control is built from the noiseless reach.
//   kLifted: three-point schedule with weight |u|/M_Y.
//   kDirect: the deterministic reach control itself (one point per bin).
//   kOptimized: penalty-method optimum of the moment model.
//   kAuto: lifted for alpha <= 0.5, direct above.
enum class ScheduleMode { kLifted, kDirect, kOptimized, kAuto };

struct LinearBlock {
  double p = -1.0;  // 1/s
  double q = 1.0;
  double x0 = 0.0;
  double z0 = 1.0;
};

struct ArmBlock {
  ArmParams params;          // SI
  double length_unit = 0.01; // metres per working length unit
  ArmObjective objective = ArmObjective::kHand;
  Eigen::Vector2d target_theta{-1.0, 1.5707963267948966};
  double max_speed = 500.0;  // rad/s
};

struct OptimizerBlock {
  ScheduleMode schedule = ScheduleMode::kLifted;
  int max_iters = 300;
  int restarts = 4;
  double penalty_weight = 1.0;
  double max_penalty = 1e14;
  double dt_integrate = 0.0;  // 0: same as the horizon's
  ReachRegularization regularization = ReachRegularization::kMinimumEffort;
};

struct LinearCheckBlock {
  int instances = 20;
  int probes = 20;
  double p_min = -2.0, p_max = 1.0;  // 1/s
  double q_min = 0.5, q_max = 2.0;
  double x0_min = -1.0, x0_max = 1.0;
  double z0_min = -2.0, z0_max = 2.0;
  double z_limit = 3.0;  // pass when |mc - exact| <= z_limit SE
};

struct SweepBlock {
  std::vector<double> m_y;          // scaling-study
  std::vector<double> alpha;        // alpha-sweep, integrand-sweep
  std::vector<int> ensemble_sizes;  // pulse-control
  double g = 1.0;                   // integrand-sweep
  double f = 2.0;
  int points = 2001;
  double slope_tolerance = 0.05;    // scaling-study: SE above this is inconclusive
};

struct PulseBlock {
  int n_exc = 400;
  int n_inh = 400;
  double baseline_rate = 5.0;  // Hz
  double bin_width = 1e-4;     // s
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::kLinearCheck;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string output = "out";
  bool paper_scale = false;

  SystemKind system = SystemKind::kLinear;
  LinearBlock linear;
  ArmBlock arm;
  NoiseSpec noise;      // kappa has one entry per control channel
  double kappa = 1.0;   // scalar from the file, expanded per channel
  Horizon horizon;      // SI seconds
  double tolerance = 1e-4;  // target tolerance, objective units (SI)
  OptimizerBlock optimizer;
  int paths = 2000;
  EscapePolicy escape = EscapePolicy::kAbort;
  int record_stride = 10;
  LinearCheckBlock check;
  SweepBlock sweep;
  PulseBlock pulse;

  // FNV-1a 64 of the config file bytes.
  std::uint64_t hash = 0;
  std::string source_text;
};

// Parses YAML text. Unknown blocks or keys, missing units and values out
// of range throw ConfigurationError. Experiment-specific preconditions are
// checked here so a bad config never creates artifacts.
// `expected`, when given, must match the file's experiment key (which may
// then be omitted).
ExperimentConfig parse_config(const std::string& text,
                              std::optional<ExperimentKind> expected = {});
ExperimentConfig load_config(const std::string& path,
                             std::optional<ExperimentKind> expected = {});

// Final adjustments after CLI overrides (seed, threads, --paper-scale).
void finalize_config(ExperimentConfig& config);

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace ycontrol
