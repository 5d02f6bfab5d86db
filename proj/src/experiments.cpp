#include "ycontrol/experiments.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ycontrol/csv.hpp"
#include "ycontrol/errors.hpp"
#include "ycontrol/hamiltonian.hpp"
#include "ycontrol/moment_prop.hpp"
#include "ycontrol/philox.hpp"
#include "ycontrol/pulse_ensemble.hpp"
#include "ycontrol/svg_plot.hpp"

#ifndef YCONTROL_VERSION
#define YCONTROL_VERSION "unknown"
#endif
#ifndef YCONTROL_YAML_CPP_VERSION
#define YCONTROL_YAML_CPP_VERSION "unknown"
#endif

namespace ycontrol {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Writes one artifact and records its name.
class ArtifactDir {
 public:
  ArtifactDir(fs::path dir, RunReport& report) : dir_(std::move(dir)), report_(report) {
    fs::create_directories(dir_);
  }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw ConfigurationError("cannot write " + (dir_ / name).string());
    body(out);
    if (!out) throw ConfigurationError("write failed for " + (dir_ / name).string());
    report_.artifacts.push_back(name);
  }

  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  RunReport& report_;
};

void add(RunReport& r, const std::string& key, const std::string& value) {
  r.results.emplace_back(key, value);
}
void add(RunReport& r, const std::string& key, double value) {
  r.results.emplace_back(key, format_sig(value, 9));
}

std::string alpha_tag(double alpha) {
  std::string s = format_sig(alpha, 6);
  s.erase(std::remove(s.begin(), s.end(), '.'), s.end());
  return "h_alpha" + s;
}

// Bin-level control values: `t,u_1..u_m` at bin starts.
void write_bin_control_csv(std::ostream& out, const MatrixXd& u_bins, double bin_width) {
  out << "t";
  for (Eigen::Index i = 0; i < u_bins.rows(); ++i) out << ",u_" << i + 1;
  out << '\n';
  for (Eigen::Index b = 0; b < u_bins.cols(); ++b) {
    out << format_sig(b * bin_width, 9);
    for (Eigen::Index i = 0; i < u_bins.rows(); ++i) out << ',' << format_exact(u_bins(i, b));
    out << '\n';
  }
}

std::vector<double> row_vector(const MatrixXd& m, Eigen::Index row) {
  std::vector<double> v(m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) v[c] = m(row, c);
  return v;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return seed * 0x9e3779b97f4a7c15ull + salt;
}

// ---- experiments --------------------------------------------------------

void run_linear_check(const ExperimentConfig& c, ArtifactDir& dir, RunReport& report,
                      std::ostream& log) {
  const auto rows = linear_check(c);
  int failures = 0;
  double worst = 0.0;
  dir.write("linear_check.csv", [&](std::ostream& out) {
    out << "instance,t,mean_mc,mean_exact,mean_se,var_mc,var_exact,var_se,mean_z,var_z,status\n";
    for (const auto& r : rows) {
      const double zm = r.mean_z(), zv = r.var_z();
      const bool ok = std::abs(zm) <= c.check.z_limit && std::abs(zv) <= c.check.z_limit;
      failures += ok ? 0 : 1;
      worst = std::max({worst, std::abs(zm), std::abs(zv)});
      out << r.instance << ',' << format_sig(r.t, 9) << ',' << format_exact(r.mean_mc) << ','
          << format_exact(r.mean_exact) << ',' << format_exact(r.mean_se) << ','
          << format_exact(r.var_mc) << ',' << format_exact(r.var_exact) << ','
          << format_exact(r.var_se) << ',' << format_sig(zm, 6) << ',' << format_sig(zv, 6)
          << ',' << (ok ? "PASS" : "FAIL") << '\n';
    }
  });
  log << "instance  probes  worst|z|  status\n";
  for (int i = 0; i < c.check.instances; ++i) {
    double w = 0.0;
    int fail = 0;
    for (const auto& r : rows) {
      if (r.instance != i) continue;
      const double z = std::max(std::abs(r.mean_z()), std::abs(r.var_z()));
      w = std::max(w, z);
      fail += z > c.check.z_limit ? 1 : 0;
    }
    log << "  " << i << "  " << c.check.probes << "  " << format_sig(w, 3) << "  "
        << (fail == 0 ? "PASS" : "FAIL (" + std::to_string(fail) + " probes)") << '\n';
  }
  add(report, "comparisons", std::to_string(2 * rows.size()));
  add(report, "probe_failures", std::to_string(failures));
  add(report, "worst_z", worst);
}

void run_integrand_sweep(const ExperimentConfig& c, ArtifactDir& dir, RunReport& report,
                         std::ostream& log) {
  const double m = c.noise.m_y;
  const int n = c.sweep.points;
  std::vector<double> xi(n);
  for (int i = 0; i < n; ++i) xi[i] = -m + 2.0 * m * i / (n - 1);
  std::vector<std::vector<double>> h(c.sweep.alpha.size(), std::vector<double>(n));
  for (std::size_t a = 0; a < c.sweep.alpha.size(); ++a) {
    const IntegrandCoeffs coeffs{c.sweep.g, c.sweep.f, c.sweep.alpha[a], m};
    for (int i = 0; i < n; ++i) h[a][i] = integrand(coeffs, xi[i]);
  }
  dir.write("integrand.csv", [&](std::ostream& out) {
    out << "xi";
    for (double a : c.sweep.alpha) out << ',' << alpha_tag(a);
    out << '\n';
    for (int i = 0; i < n; ++i) {
      out << format_sig(xi[i], 12);
      for (const auto& col : h) out << ',' << format_exact(col[i]);
      out << '\n';
    }
  });
  dir.write("minima.csv", [&](std::ostream& out) {
    out << "alpha,regime,argmin,min_value\n";
    for (double a : c.sweep.alpha) {
      const MinimaReport r = classify_minima({c.sweep.g, c.sweep.f, a, m});
      for (double x : r.argmin_set) {
        out << format_sig(a, 6) << ',' << to_string(r.regime) << ',' << format_exact(x) << ','
            << format_exact(r.min_value) << '\n';
      }
      log << "alpha " << format_sig(a, 3) << ": " << to_string(r.regime) << ", argmin {";
      for (std::size_t i = 0; i < r.argmin_set.size(); ++i)
        log << (i ? ", " : "") << format_sig(r.argmin_set[i], 6);
      log << "}, min " << format_sig(r.min_value, 6) << '\n';
      add(report, "regime_alpha_" + format_sig(a, 6), std::string(to_string(r.regime)));
    }
  });
  std::vector<PlotSeries> series;
  for (std::size_t a = 0; a < h.size(); ++a)
    series.push_back({"alpha = " + format_sig(c.sweep.alpha[a], 3), xi, h[a], kPalette[a % 6]});
  dir.write("integrand.svg", [&](std::ostream& out) {
    write_svg(out, {"h(xi) = g|xi|^(2 alpha) - f xi", "xi", "h"}, series);
  });
}

void run_arm_reach(const ExperimentConfig& c, ArtifactDir& dir, RunReport& report,
                   std::ostream& log) {
  const ArmTask task = make_arm_task(c);
  auto t0 = Clock::now();
  const ControlPlan plan = plan_control(task.model, task.noise, task.horizon, task.target_spec,
                                        task.x0, c.optimizer.schedule, c.optimizer, c.seed,
                                        c.threads);
  add(report, "time_plan_s", seconds_since(t0));
  const Horizon& h = task.horizon;
  log << "noiseless reach: residual " << format_sig(plan.reach.residual, 3) << " after "
      << plan.reach.iterations << " iterations, max |u| "
      << format_sig(plan.reach.u_bins.cwiseAbs().maxCoeff(), 6) << '\n';

  // Noiseless replay of the mean control.
  const MatrixXd states = simulate_noiseless(*task.model, h, realize_bins(plan.reach.u_bins, h), task.x0);
  const int reach_step = h.reach_bins() * h.steps_per_bin();
  double error_at_t = 0.0, hold_max = 0.0;
  for (int s = reach_step; s < states.cols(); ++s) {
    const double t = s * h.dt_integrate;
    const double e = (task.model->objective(states.col(s), t) - task.target).norm();
    if (s == reach_step) error_at_t = e;
    hold_max = std::max(hold_max, e);
  }
  dir.write("noiseless.csv", [&](std::ostream& out) {
    out << "t,theta1,theta2,omega1,omega2,hand_x,hand_y\n";
    for (Eigen::Index s = 0; s < states.cols(); s += c.record_stride) {
      const Vector2d hand = forward_kinematics(task.params, states.col(s).head<2>());
      out << format_sig(s * h.dt_integrate, 9);
      for (int i = 0; i < 4; ++i) out << ',' << format_exact(states(i, s));
      out << ',' << format_exact(hand[0]) << ',' << format_exact(hand[1]) << '\n';
    }
  });
  dir.write("schedule.csv", [&](std::ostream& out) { write_schedule_csv(out, plan.schedule); });
  const MatrixXd mean_bins = plan.optimized ? MatrixXd(plan.schedule.signed_weights() * task.noise.m_y)
                                            : plan.reach.u_bins;
  dir.write("control_mean.csv", [&](std::ostream& out) {
    write_bin_control_csv(out, mean_bins, h.dt_control);
  });

  if (!plan.direct) {
    const HorizonMoments moments =
        propagate_horizon(*task.model, task.noise, h, plan.schedule, task.x0);
    dir.write("moments.csv", [&](std::ostream& out) { write_moments_csv(out, moments); });
    add(report, "moment_rms_error", std::sqrt(moments.hold_variance / h.hold_time));
  }

  t0 = Clock::now();
  const TrajectoryEnsemble ens = run_ensemble(*task.model, task.noise, h, plan.control,
                                              task.target_spec, task.x0, ensemble_options(c));
  add(report, "time_ensemble_s", seconds_since(t0));
  dir.write("ensemble.csv", [&](std::ostream& out) { write_ensemble_csv(out, ens); });

  std::vector<double> tb(mean_bins.cols());
  for (std::size_t b = 0; b < tb.size(); ++b) tb[b] = b * h.dt_control;
  dir.write("control_mean.svg", [&](std::ostream& out) {
    write_svg(out, {"mean control", "t (s)", "torque"},
              {{"u1", tb, row_vector(mean_bins, 0), kPalette[0]},
               {"u2", tb, row_vector(mean_bins, 1), kPalette[2]}});
  });
  const bool hand = c.arm.objective == ArmObjective::kHand;
  const std::string n1 = hand ? "hand x" : "theta1", n2 = hand ? "hand y" : "theta2";
  dir.write("objective_mean.svg", [&](std::ostream& out) {
    write_svg(out, {"ensemble mean of the objective", "t (s)", hand ? "position" : "angle (rad)"},
              {{n1, ens.times, row_vector(ens.mean, 0), kPalette[0]},
               {n2, ens.times, row_vector(ens.mean, 1), kPalette[2]}});
  });
  dir.write("objective_variance.svg", [&](std::ostream& out) {
    write_svg(out, {"ensemble variance of the objective", "t (s)", "variance"},
              {{n1, ens.times, row_vector(ens.variance, 0), kPalette[0]},
               {n2, ens.times, row_vector(ens.variance, 1), kPalette[2]}});
  });

  const double se = rms_error_se(ens, h);
  log << "noiseless hand error at T " << format_sig(error_at_t, 4) << ", max over hold "
      << format_sig(hold_max, 4) << '\n'
      << "Monte Carlo (" << ens.paths_used << " paths, " << ens.escaped << " escaped): rms error "
      << format_sig(ens.rms_error(), 4) << " +- " << format_sig(se, 2) << ", mean std "
      << format_sig(ens.mean_std, 4) << ", rms distance to target "
      << format_sig(ens.rms_total_error(), 4) << '\n';
  add(report, "reach_residual", plan.reach.residual);
  add(report, "reach_iterations", std::to_string(plan.reach.iterations));
  add(report, "max_abs_control", plan.reach.u_bins.cwiseAbs().maxCoeff());
  add(report, "noiseless_error_at_T", error_at_t);
  add(report, "noiseless_hold_max_error", hold_max);
  add(report, "rms_error", ens.rms_error());
  add(report, "rms_error_se", se);
  add(report, "mean_std", ens.mean_std);
  add(report, "rms_total_error", ens.rms_total_error());
  add(report, "paths_used", std::to_string(ens.paths_used));
  add(report, "escaped", std::to_string(ens.escaped));
  if (plan.optimized) {
    add(report, "opt_objective", plan.optimized->objective);
    add(report, "opt_residual", plan.optimized->constraint_residual);
  }
}

struct SystemSetup {
  std::shared_ptr<const SystemModel> model;
  VectorXd x0;
  TargetSpec target;
  Horizon horizon;
  NoiseSpec noise;
};

SystemSetup setup_system(const ExperimentConfig& c) {
  SystemSetup s;
  if (c.system == SystemKind::kArm) {
    ArmTask task = make_arm_task(c);
    s = {task.model, task.x0, task.target_spec, task.horizon, task.noise};
  } else {
    const LinearSystem sys = linear_system(c);
    const double bound = 1e3 * (1.0 + std::abs(sys.x0) + std::abs(sys.z0));
    s.model = make_scalar_linear_model(sys.p, sys.q, bound);
    s.x0 = VectorXd::Constant(1, sys.x0);
    s.target = TargetSpec::constant(VectorXd::Constant(1, sys.z0), c.tolerance);
    s.horizon = sys.horizon;
    s.noise = sys.noise;
  }
  return s;
}

void run_scaling_study(const ExperimentConfig& c, ArtifactDir& dir, RunReport& report,
                       std::ostream& log) {
  SystemSetup s = setup_system(c);
  std::vector<double> rms, se, mean_std, total;
  std::vector<int> escaped;
  for (double m : c.sweep.m_y) {
    s.noise.m_y = m;
    const ControlPlan plan = plan_control(s.model, s.noise, s.horizon, s.target, s.x0,
                                          c.optimizer.schedule, c.optimizer, c.seed, c.threads);
    // Same seed at every bound: common random numbers sharpen the slope.
    const TrajectoryEnsemble ens = run_ensemble(*s.model, s.noise, s.horizon, plan.control,
                                                s.target, s.x0, ensemble_options(c));
    rms.push_back(ens.rms_error());
    se.push_back(rms_error_se(ens, s.horizon));
    mean_std.push_back(ens.mean_std);
    total.push_back(ens.rms_total_error());
    escaped.push_back(ens.escaped);
    log << "M_Y " << format_sig(m, 6) << ": rms error " << format_sig(rms.back(), 5) << " +- "
        << format_sig(se.back(), 2) << '\n';
  }
  const SlopeFit fit = fit_loglog(c.sweep.m_y, rms, se);
  const double expected = c.noise.alpha - 0.5;
  dir.write("scaling.csv", [&](std::ostream& out) {
    out << "m_y,rms_error,rms_error_se,mean_std,rms_total_error,escaped\n";
    for (std::size_t i = 0; i < rms.size(); ++i)
      out << format_sig(c.sweep.m_y[i], 12) << ',' << format_exact(rms[i]) << ','
          << format_exact(se[i]) << ',' << format_exact(mean_std[i]) << ','
          << format_exact(total[i]) << ',' << escaped[i] << '\n';
  });
  std::vector<double> ref(c.sweep.m_y.size()), fitted(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref[i] = rms[0] * std::pow(c.sweep.m_y[i] / c.sweep.m_y[0], expected);
    fitted[i] = std::exp(fit.intercept) * std::pow(c.sweep.m_y[i], fit.slope);
  }
  dir.write("scaling.svg", [&](std::ostream& out) {
    PlotSpec spec{"rms error vs control bound", "M_Y", "rms error"};
    spec.log_x = spec.log_y = true;
    write_svg(out, spec,
              {{"Monte Carlo", c.sweep.m_y, rms, kPalette[0], false, true},
               {"fit, slope " + format_sig(fit.slope, 3), c.sweep.m_y, fitted, kPalette[2]},
               {"reference slope " + format_sig(expected, 3), c.sweep.m_y, ref, kPalette[1], true}});
  });
  const bool inconclusive = fit.slope_se > c.sweep.slope_tolerance;
  report.inconclusive = inconclusive;
  log << "fitted slope " << format_sig(fit.slope, 4) << " +- " << format_sig(fit.slope_se, 2)
      << " (expected " << format_sig(expected, 3) << ")\n";
  add(report, "slope", fit.slope);
  add(report, "slope_se", fit.slope_se);
  add(report, "slope_residual_se", fit.residual_se);
  add(report, "expected_slope", expected);
  add(report, "status", inconclusive ? "inconclusive" : "conclusive");
  if (inconclusive) {
    const double factor = std::pow(fit.slope_se / c.sweep.slope_tolerance, 2) * 1.25;
    const long suggested = static_cast<long>(std::ceil(c.paths * factor));
    log << "slope error exceeds the tolerance " << format_sig(c.sweep.slope_tolerance, 3)
        << "; try paths = " << suggested << '\n';
    add(report, "suggested_paths", std::to_string(suggested));
  }
}

void run_alpha_sweep(const ExperimentConfig& c, ArtifactDir& dir, RunReport& report,
                     std::ostream& log) {
  ArmTask task = make_arm_task(c);
  std::vector<double> rms, lo, hi;
  std::vector<std::string> rows;
  for (double alpha : c.sweep.alpha) {
    task.noise.alpha = alpha;
    const ScheduleMode mode = resolve_mode(c.optimizer.schedule, alpha);
    const ControlPlan plan = plan_control(task.model, task.noise, task.horizon, task.target_spec,
                                          task.x0, mode, c.optimizer, c.seed, c.threads);
    const TrajectoryEnsemble ens = run_ensemble(*task.model, task.noise, task.horizon,
                                                plan.control, task.target_spec, task.x0,
                                                ensemble_options(c));
    const double se = rms_error_se(ens, task.horizon);
    rms.push_back(ens.rms_error());
    lo.push_back(std::max(0.0, ens.rms_error() - 1.96 * se));
    hi.push_back(ens.rms_error() + 1.96 * se);
    const char* mode_name = mode == ScheduleMode::kLifted   ? "lifted"
                            : mode == ScheduleMode::kDirect ? "direct"
                                                            : "optimized";
    std::ostringstream row;
    row << format_sig(alpha, 6) << ',' << mode_name << ',' << format_exact(ens.rms_error())
        << ',' << format_exact(lo.back()) << ',' << format_exact(hi.back()) << ','
        << format_exact(ens.mean_std) << ',' << format_exact(ens.rms_total_error()) << ','
        << ens.escaped;
    rows.push_back(row.str());
    log << "alpha " << format_sig(alpha, 3) << " (" << mode_name << "): rms error "
        << format_sig(ens.rms_error(), 4) << " [" << format_sig(lo.back(), 3) << ", "
        << format_sig(hi.back(), 3) << "], mean std " << format_sig(ens.mean_std, 4) << '\n';
    add(report, "rms_error_alpha_" + format_sig(alpha, 6), ens.rms_error());
  }
  dir.write("alpha_sweep.csv", [&](std::ostream& out) {
    out << "alpha,schedule,rms_error,ci_low,ci_high,mean_std,rms_total_error,escaped\n";
    for (const auto& r : rows) out << r << '\n';
  });
  dir.write("alpha_sweep.svg", [&](std::ostream& out) {
    PlotSpec spec{"rms hand error vs dispersion index", "alpha", "rms error"};
    spec.log_y = true;
    write_svg(out, spec,
              {{"rms error", c.sweep.alpha, rms, kPalette[0], false, true},
               {"95% interval", c.sweep.alpha, lo, kPalette[0], true},
               {"", c.sweep.alpha, hi, kPalette[0], true}});
  });
}

void run_pulse_control(const ExperimentConfig& c, ArtifactDir& dir, RunReport& report,
                       std::ostream& log) {
  SystemSetup s = setup_system(c);
  const ControlPlan plan = plan_control(s.model, s.noise, s.horizon, s.target, s.x0,
                                        c.optimizer.schedule, c.optimizer, c.seed, c.threads);
  const EnsembleOptions eo = ensemble_options(c);
  const TrajectoryEnsemble direct =
      run_ensemble(*s.model, s.noise, s.horizon, plan.control, s.target, s.x0, eo);
  log << "direct schedule: rms error " << format_sig(direct.rms_error(), 4) << '\n';
  add(report, "direct_rms_error", direct.rms_error());

  // Pulse noise replaces the signal-dependent term.
  NoiseSpec quiet = s.noise;
  quiet.kappa.setZero();
  std::vector<double> ns, rms, se;
  std::vector<std::string> rows;
  for (int n : c.sweep.ensemble_sizes) {
    EnsembleSpec spec;
    spec.n_exc = spec.n_inh = n;
    spec.baseline_rate = c.pulse.baseline_rate;
    spec.bin_width = c.pulse.bin_width;
    spec.seed = mix_seed(c.seed, static_cast<std::uint64_t>(n));
    const PopulationRates rates = rates_from_schedule(plan.schedule, s.noise, spec);
    const TrajectoryEnsemble ens = run_ensemble(
        *s.model, quiet, s.horizon, pulse_control_source(rates, spec, s.noise.m_y, s.horizon),
        s.target, s.x0, eo);
    ns.push_back(n);
    rms.push_back(ens.rms_error());
    se.push_back(rms_error_se(ens, s.horizon));
    std::ostringstream row;
    row << n << ',' << format_exact(ens.rms_error()) << ',' << format_exact(se.back()) << ','
        << format_exact(ens.mean_std) << ',' << format_exact(ens.rms_total_error()) << ','
        << format_exact(ens.rms_error() / direct.rms_error()) << ',' << ens.escaped;
    rows.push_back(row.str());
    log << "n = " << n << ": rms error " << format_sig(ens.rms_error(), 4) << " ("
        << format_sig(ens.rms_error() / direct.rms_error(), 3) << "x direct)\n";
    add(report, "rms_error_n_" + std::to_string(n), ens.rms_error());
  }
  dir.write("pulse.csv", [&](std::ostream& out) {
    out << "n,rms_error,rms_error_se,mean_std,rms_total_error,ratio_to_direct,escaped\n";
    for (const auto& r : rows) out << r << '\n';
  });

  // Rates and one raster replicate of the hold window for the largest n.
  EnsembleSpec spec;
  spec.n_exc = spec.n_inh = c.sweep.ensemble_sizes.back();
  spec.baseline_rate = c.pulse.baseline_rate;
  spec.bin_width = c.pulse.bin_width;
  spec.seed = mix_seed(c.seed, static_cast<std::uint64_t>(spec.n_exc));
  const PopulationRates rates = rates_from_schedule(plan.schedule, s.noise, spec);
  dir.write("rates.csv", [&](std::ostream& out) { write_rates_csv(out, rates); });
  const SpikeRaster raster = sample_raster(rates, spec, 0);
  const Eigen::Index first =
      std::llround(s.horizon.reach_time / spec.bin_width);
  const Eigen::Index count = raster.exc.front().cols() - first;
  SpikeRaster window;
  for (std::size_t i = 0; i < raster.exc.size(); ++i) {
    window.exc.push_back(raster.exc[i].middleCols(first, count));
    window.inh.push_back(raster.inh[i].middleCols(first, count));
  }
  dir.write("raster_hold.csv", [&](std::ostream& out) { write_raster_csv(out, window); });
  add(report, "raster_first_bin", std::to_string(first));

  const std::vector<double> flat(ns.size(), direct.rms_error());
  dir.write("pulse.svg", [&](std::ostream& out) {
    PlotSpec spec_plot{"rms error under pulse-train control", "neurons per population", "rms error"};
    spec_plot.log_x = spec_plot.log_y = true;
    write_svg(out, spec_plot,
              {{"pulse control", ns, rms, kPalette[0], false, true},
               {"direct schedule", ns, flat, kPalette[1], true}});
  });
}

}  // namespace

LinearSystem linear_system(const ExperimentConfig& c) {
  LinearSystem sys;
  sys.p = c.linear.p;
  sys.q = c.linear.q;
  sys.x0 = c.linear.x0;
  sys.z0 = c.linear.z0;
  sys.noise = c.noise;
  sys.noise.kappa = VectorXd::Constant(1, c.kappa);
  sys.horizon = c.horizon;
  sys.validate();
  return sys;
}

std::vector<LinearCheckRow> linear_check(const ExperimentConfig& c) {
  const auto& k = c.check;
  const Horizon& h = c.horizon;
  const int steps = h.total_steps();
  std::vector<int> probe_steps(k.probes);
  for (int j = 0; j < k.probes; ++j)
    probe_steps[j] = static_cast<int>(std::llround(double(j + 1) * steps / k.probes));

  std::vector<LinearCheckRow> rows;
  for (int inst = 0; inst < k.instances; ++inst) {
    CounterRng rng(c.seed, static_cast<std::uint32_t>(inst), 0x11c0u);
    auto draw = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
    LinearSystem sys;
    sys.p = draw(k.p_min, k.p_max);
    sys.q = draw(k.q_min, k.q_max);
    if (std::abs(sys.q) < 1e-3) sys.q = std::copysign(1e-3, sys.q == 0.0 ? 1.0 : sys.q);
    sys.x0 = draw(k.x0_min, k.x0_max);
    sys.z0 = draw(k.z0_min, k.z0_max);
    sys.noise = c.noise;
    sys.noise.kappa = VectorXd::Constant(1, c.kappa);
    sys.horizon = h;
    sys.validate();

    const ScalarFn lambda = reach_then_hold_control(sys);
    const RealizedControl control = realize_functions({lambda}, h);
    const auto model = make_scalar_linear_model(sys.p, sys.q, 1e9);
    EnsembleOptions eo;
    eo.paths = c.paths;
    eo.seed = mix_seed(c.seed, static_cast<std::uint64_t>(inst) + 1);
    eo.threads = c.threads;
    const TrajectoryEnsemble ens =
        run_ensemble(*model, sys.noise, h, control,
                     TargetSpec::constant(VectorXd::Constant(1, sys.z0), 1.0),
                     VectorXd::Constant(1, sys.x0), eo);
    const double kink[] = {h.reach_time};
    for (int step : probe_steps) {
      LinearCheckRow r;
      r.instance = inst;
      r.t = step * h.dt_integrate;
      r.mean_mc = ens.mean(0, step);
      r.var_mc = ens.variance(0, step);
      r.mean_se = std::sqrt(r.var_mc / ens.paths_used);
      r.var_se = ens.variance_se(0, step);
      r.mean_exact = mean_trajectory(sys, lambda, r.t, kink);
      r.var_exact = variance_trajectory(sys, lambda, r.t, kink);
      rows.push_back(r);
    }
  }
  return rows;
}

ArmTask make_arm_task(const ExperimentConfig& c) {
  ArmTask task;
  task.length_factor = 1.0 / c.arm.length_unit;
  task.params = c.arm.params.with_length_unit(task.length_factor);
  task.model = as_system_model(task.params, c.arm.objective, c.arm.max_speed);
  task.x0 = Eigen::Vector4d(-std::numbers::pi / 2, std::numbers::pi / 2, 0.0, 0.0);
  const bool hand = c.arm.objective == ArmObjective::kHand;
  task.target = hand ? VectorXd(forward_kinematics(task.params, c.arm.target_theta))
                     : VectorXd(c.arm.target_theta);
  const double tol = c.tolerance * (hand ? task.length_factor : 1.0);
  task.target_spec = TargetSpec::constant(task.target, tol);
  task.horizon = c.horizon;
  task.noise = c.noise;
  task.noise.kappa = VectorXd::Constant(2, c.kappa * task.params.kappa0);
  return task;
}

ScheduleMode resolve_mode(ScheduleMode mode, double alpha) {
  if (mode != ScheduleMode::kAuto) return mode;
  return alpha <= 0.5 ? ScheduleMode::kLifted : ScheduleMode::kDirect;
}

ControlPlan plan_control(const std::shared_ptr<const SystemModel>& model,
                         const NoiseSpec& noise, const Horizon& horizon,
                         const TargetSpec& target, const VectorXd& x0, ScheduleMode mode,
                         const OptimizerBlock& options, std::uint64_t seed, int threads) {
  mode = resolve_mode(mode, noise.alpha);
  ControlPlan plan;
  ReachOptions ro;
  ro.m_y = noise.m_y;
  ro.seed = seed;
  ro.regularization = options.regularization;
  plan.reach = solve_noiseless_reach(*model, horizon, target, x0, ro);
  const double width = horizon.dt_control;
  switch (mode) {
    case ScheduleMode::kLifted:
    case ScheduleMode::kAuto:
      plan.schedule = lift_to_schedule(plan.reach.u_bins, noise, width);
      plan.control = realize_schedule(plan.schedule, noise, horizon);
      break;
    case ScheduleMode::kDirect:
      plan.direct = true;
      plan.schedule = MeasureSchedule::from_signed(plan.reach.u_bins / noise.m_y, width);
      plan.control = realize_bins(plan.reach.u_bins, horizon);
      break;
    case ScheduleMode::kOptimized: {
      OptProblem prob;
      prob.model = model;
      prob.noise = noise;
      prob.horizon = horizon;
      if (options.dt_integrate > 0.0) prob.horizon.dt_integrate = options.dt_integrate;
      prob.target = target;
      prob.x0 = x0;
      prob.penalty_weight = options.penalty_weight;
      prob.max_penalty = options.max_penalty;
      prob.max_iters = options.max_iters;
      prob.restarts = options.restarts;
      prob.seed = seed;
      prob.threads = threads;
      prob.reach_regularization = options.regularization;
      prob.warm_start = MatrixXd(plan.reach.u_bins / noise.m_y);
      prob.dirac = noise.alpha > 0.5;
      OptResult res = solve(prob);
      plan.schedule = res.schedule;
      if (prob.dirac) {
        plan.direct = true;
        plan.control = realize_bins(res.schedule.signed_weights() * noise.m_y, horizon);
      } else {
        plan.control = realize_schedule(res.schedule, noise, horizon);
      }
      plan.optimized = std::move(res);
      break;
    }
  }
  return plan;
}

EnsembleOptions ensemble_options(const ExperimentConfig& c) {
  EnsembleOptions eo;
  eo.paths = c.paths;
  eo.seed = c.seed;
  eo.threads = c.threads;
  eo.escape = c.escape;
  eo.record_stride = std::gcd(c.record_stride, c.horizon.total_steps());
  return eo;
}

SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y,
                    const std::vector<double>& y_se) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n || y_se.size() != n)
    throw UsageError("fit_loglog needs matching inputs with at least two points");
  Eigen::MatrixXd a(n, 2);
  Eigen::VectorXd b(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw NumericError("fit_loglog needs positive data");
    const double rel = y_se[i] / y[i];
    w[i] = rel > 0.0 ? 1.0 / (rel * rel) : 1.0;
    a(i, 0) = std::log(x[i]);
    a(i, 1) = 1.0;
    b[i] = std::log(y[i]);
  }
  const Eigen::MatrixXd normal = a.transpose() * w.asDiagonal() * a;
  const Eigen::MatrixXd cov = normal.inverse();
  const Eigen::Vector2d beta = cov * (a.transpose() * w.asDiagonal() * b);
  SlopeFit fit;
  fit.slope = beta[0];
  fit.intercept = beta[1];
  bool weighted = false;
  for (double s : y_se) weighted = weighted || s > 0.0;
  const Eigen::VectorXd resid = b - a * beta;
  if (weighted) fit.slope_se = std::sqrt(cov(0, 0));
  if (n > 2) {
    // Unweighted scatter about the line.
    const Eigen::Matrix2d plain = (a.transpose() * a).inverse();
    fit.residual_se = std::sqrt(resid.squaredNorm() / (n - 2) * plain(0, 0));
  }
  if (!weighted) fit.slope_se = fit.residual_se;
  return fit;
}

double rms_error_se(const TrajectoryEnsemble& e, const Horizon& horizon) {
  if (horizon.hold_time <= 0.0 || e.exec_error <= 0.0) return 0.0;
  const double t0 = horizon.reach_time;
  double se = 0.0;
  for (std::size_t c = 0; c + 1 < e.times.size(); ++c) {
    const double a = e.times[c], b = e.times[c + 1];
    if (a < t0 - 1e-12 * (1.0 + t0)) continue;
    se += 0.5 * (b - a) * (e.variance_se.col(c).sum() + e.variance_se.col(c + 1).sum());
  }
  // d sqrt(E/R) = sqrt(E/R) dE / (2E)
  return e.rms_error() * se / (2.0 * e.exec_error);
}

std::string figure_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kLinearCheck: return "linear example closed forms (no figure)";
    case ExperimentKind::kIntegrandSweep: return "Fig. 1 (integrand h for alpha = 0.25 and 0.8)";
    case ExperimentKind::kArmReach: return "Figs. 4-7 (arm reach: mean controls, trajectories, variance)";
    case ExperimentKind::kScalingStudy: return "Fig. 8 inset (log-log error vs M_Y)";
    case ExperimentKind::kAlphaSweep: return "Fig. 8 main plot (error vs alpha)";
    case ExperimentKind::kPulseControl: return "Fig. 10 (pulse-train control)";
  }
  return "?";
}

RunReport run_experiment(const ExperimentConfig& c, std::ostream& log) {
  RunReport report;
  const auto start = Clock::now();
  ArtifactDir dir(c.output, report);
  log << "experiment " << to_string(c.experiment) << " -> " << dir.path().string() << '\n';
  switch (c.experiment) {
    case ExperimentKind::kLinearCheck: run_linear_check(c, dir, report, log); break;
    case ExperimentKind::kIntegrandSweep: run_integrand_sweep(c, dir, report, log); break;
    case ExperimentKind::kArmReach: run_arm_reach(c, dir, report, log); break;
    case ExperimentKind::kScalingStudy: run_scaling_study(c, dir, report, log); break;
    case ExperimentKind::kAlphaSweep: run_alpha_sweep(c, dir, report, log); break;
    case ExperimentKind::kPulseControl: run_pulse_control(c, dir, report, log); break;
  }
  const double elapsed = seconds_since(start);
  report.artifacts.push_back("manifest.txt");
  std::ofstream m(dir.path() / "manifest.txt", std::ios::binary);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(c.hash));
  m << "experiment = " << to_string(c.experiment) << '\n'
    << "figure = " << figure_name(c.experiment) << '\n'
    << "config_hash = fnv1a64:" << hash << '\n'
    << "seed = " << c.seed << '\n'
    << "threads = " << c.threads << '\n'
    << "paper_scale = " << (c.paper_scale ? "true" : "false") << '\n'
    << "version = " << YCONTROL_VERSION << '\n'
    << "eigen_version = " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.'
    << EIGEN_MINOR_VERSION << '\n'
    << "yaml_cpp_version = " << YCONTROL_YAML_CPP_VERSION << '\n'
    << "compiler = " << __VERSION__ << '\n';
  for (const auto& [k, v] : report.results) m << k << " = " << v << '\n';
  m << "time_total_s = " << format_sig(elapsed, 4) << '\n' << "artifacts =";
  for (const auto& a : report.artifacts) m << ' ' << a;
  m << '\n';
  return report;
}

}  // namespace ycontrol
