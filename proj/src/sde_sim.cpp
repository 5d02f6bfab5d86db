#include "ycontrol/sde_sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "ycontrol/csv.hpp"
#include "ycontrol/errors.hpp"
#include "ycontrol/parallel.hpp"
#include "ycontrol/philox.hpp"

namespace ycontrol {

RealizedControl::RealizedControl(Mode mode, MatrixXd levels, double dt)
    : mode_(mode), levels_(std::move(levels)), dt_(dt) {
  if (!(dt > 0.0)) throw UsageError("realized control needs dt > 0");
}

double RealizedControl::window_average(int channel, int first, int count) const {
  return levels_.row(channel).segment(first, count).mean();
}

namespace {

void check_bins_match(int bins, double bin_width, const Horizon& horizon) {
  horizon.validate();
  if (bins != horizon.total_bins())
    throw ConfigurationError("control has " + std::to_string(bins) +
                             " bins, horizon needs " +
                             std::to_string(horizon.total_bins()));
  if (std::abs(bin_width - horizon.dt_control) > 1e-9 * horizon.dt_control)
    throw ConfigurationError("schedule bin width differs from dt_control");
}

}  // namespace

RealizedControl realize_schedule(const MeasureSchedule& schedule,
                                 const NoiseSpec& noise, const Horizon& horizon) {
  check_bins_match(schedule.bins(), schedule.bin_width(), horizon);
  if (schedule.channels() != noise.channels())
    throw ConfigurationError("schedule channels differ from noise channels");
  const int per_bin = horizon.steps_per_bin();
  const int bins = schedule.bins();
  MatrixXd levels = MatrixXd::Zero(schedule.channels(), bins * per_bin);
  for (int i = 0; i < schedule.channels(); ++i) {
    double total_pos = 0.0, total_neg = 0.0;
    long long done_pos = 0, done_neg = 0;
    for (int k = 0; k < bins; ++k) {
      total_pos += std::clamp(schedule.mu(i, k), 0.0, 1.0) * per_bin;
      total_neg += std::clamp(schedule.nu(i, k), 0.0, 1.0) * per_bin;
      const long long target_pos = std::llround(total_pos);
      const long long target_neg = std::llround(total_neg);
      int n_pos = static_cast<int>(target_pos - done_pos);
      int n_neg = static_cast<int>(target_neg - done_neg);
      n_pos = std::clamp(n_pos, 0, per_bin);
      n_neg = std::clamp(n_neg, 0, per_bin - n_pos);
      done_pos += n_pos;
      done_neg += n_neg;
      const int base = k * per_bin;
      for (int s = 0; s < n_pos; ++s) levels(i, base + s) = noise.m_y;
      for (int s = 0; s < n_neg; ++s) levels(i, base + n_pos + s) = -noise.m_y;
    }
  }
  return {RealizedControl::Mode::kSchedule, std::move(levels),
          horizon.dt_integrate};
}

RealizedControl realize_bins(const MatrixXd& bin_values, const Horizon& horizon) {
  check_bins_match(static_cast<int>(bin_values.cols()), horizon.dt_control,
                   horizon);
  const int per_bin = horizon.steps_per_bin();
  MatrixXd levels(bin_values.rows(), bin_values.cols() * per_bin);
  for (Eigen::Index k = 0; k < bin_values.cols(); ++k)
    for (int s = 0; s < per_bin; ++s) levels.col(k * per_bin + s) = bin_values.col(k);
  return {RealizedControl::Mode::kDeterministic, std::move(levels),
          horizon.dt_integrate};
}

RealizedControl realize_functions(
    const std::vector<std::function<double(double)>>& channels,
    const Horizon& horizon) {
  horizon.validate();
  const int steps = horizon.total_steps();
  const double dt = horizon.dt_integrate;
  MatrixXd levels(channels.size(), steps);
  for (std::size_t i = 0; i < channels.size(); ++i)
    for (int n = 0; n < steps; ++n) levels(i, n) = channels[i]((n + 0.5) * dt);
  return {RealizedControl::Mode::kDeterministic, std::move(levels), dt};
}

namespace {

std::string describe_state(const VectorXd& x) {
  std::ostringstream out;
  out << '(';
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out << (i ? ", " : "") << format_sig(x[i], 6);
  out << ')';
  return out.str();
}

[[noreturn]] void throw_escape(double t, const VectorXd& x, int path) {
  std::ostringstream msg;
  msg << "trajectory left the state box at t=" << format_sig(t, 9)
      << " x=" << describe_state(x);
  if (path >= 0) msg << " (path " << path << ")";
  throw EscapeError(msg.str(), t);
}

// Per-step working buffers for one worker.
struct StepWorkspace {
  VectorXd drift;
  MatrixXd gain;
  VectorXd kicks;
};

// In-place Euler-Maruyama update. `amplitude_j` = kappa_j |lambda_j|^alpha.
inline void em_update(const SystemModel& model, VectorXd& x, double t,
                      const VectorXd& lambda, const VectorXd& amplitude,
                      const VectorXd& draws, double dt, double sqrt_dt,
                      StepWorkspace& ws) {
  model.controlled_drift(x, t, lambda, ws.drift);
  bool noisy = false;
  for (Eigen::Index j = 0; j < amplitude.size(); ++j) {
    ws.kicks[j] = amplitude[j] * draws[j] * sqrt_dt;
    noisy = noisy || ws.kicks[j] != 0.0;
  }
  if (noisy) {
    model.gain(x, t, ws.gain);
    x.noalias() += ws.gain * ws.kicks;
  }
  x.noalias() += dt * ws.drift;
}

}  // namespace

VectorXd step(const SystemModel& model, const NoiseSpec& noise, const VectorXd& x,
              double t, const VectorXd& lambda, double dt,
              const VectorXd& gaussian_draws) {
  const int m = model.control_dim();
  if (lambda.size() != m || gaussian_draws.size() != m ||
      noise.channels() != m)
    throw UsageError("step: control, draws and noise must have control_dim entries");
  VectorXd amplitude(m);
  for (int j = 0; j < m; ++j)
    amplitude[j] = noise.kappa[j] * std::pow(std::abs(lambda[j]), noise.alpha);
  StepWorkspace ws{VectorXd(model.state_dim()), MatrixXd(), VectorXd(m)};
  VectorXd next = x;
  em_update(model, next, t, lambda, amplitude, gaussian_draws, dt, std::sqrt(dt), ws);
  if (!model.state_box().contains(next)) throw_escape(t + dt, next, -1);
  return next;
}

namespace {

constexpr int kChunkPaths = 64;
constexpr int kWaveChunks = 16;

// Central moments up to order four for every (component, time) slot; all
// slots share one sample count.
struct Moments {
  double count = 0.0;
  VectorXd mean, m2, m3, m4;

  explicit Moments(Eigen::Index slots = 0)
      : mean(VectorXd::Zero(slots)),
        m2(VectorXd::Zero(slots)),
        m3(VectorXd::Zero(slots)),
        m4(VectorXd::Zero(slots)) {}

  void add(const double* sample) {
    const double n1 = count;
    count += 1.0;
    const double n = count;
    for (Eigen::Index s = 0; s < mean.size(); ++s) {
      const double delta = sample[s] - mean[s];
      const double dn = delta / n;
      const double dn2 = dn * dn;
      const double term1 = delta * dn * n1;
      mean[s] += dn;
      m4[s] += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * m2[s] -
               4.0 * dn * m3[s];
      m3[s] += term1 * dn * (n - 2.0) - 3.0 * dn * m2[s];
      m2[s] += term1;
    }
  }

  void merge(const Moments& other) {
    if (other.count == 0.0) return;
    if (count == 0.0) {
      *this = other;
      return;
    }
    const double na = count, nb = other.count, n = na + nb;
    for (Eigen::Index s = 0; s < mean.size(); ++s) {
      const double delta = other.mean[s] - mean[s];
      const double d2 = delta * delta;
      const double a2 = m2[s], b2 = other.m2[s];
      const double a3 = m3[s], b3 = other.m3[s];
      m4[s] = m4[s] + other.m4[s] +
              d2 * d2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
              6.0 * d2 * (na * na * b2 + nb * nb * a2) / (n * n) +
              4.0 * delta * (na * b3 - nb * a3) / n;
      m3[s] = a3 + b3 + d2 * delta * na * nb * (na - nb) / (n * n) +
              3.0 * delta * (na * b2 - nb * a2) / n;
      m2[s] = a2 + b2 + d2 * na * nb / n;
      mean[s] += delta * nb / n;
    }
    count = n;
  }
};

struct ChunkResult {
  Moments moments;
  int escaped = 0;
  std::vector<MatrixXd> kept;
};

struct SimulationPlan {
  const SystemModel* model;
  const NoiseSpec* noise;
  int steps;
  int points;  // steps + 1
  int stride;
  double dt;
  const VectorXd* x0;
  EnsembleOptions options;
};

// Simulates one path into `phi` (k x points, full resolution). Returns false
// on escape under the drop policy.
bool simulate_path(const SimulationPlan& plan, int path, const MatrixXd& levels,
                   const MatrixXd* amplitudes, MatrixXd& phi, StepWorkspace& ws) {
  const SystemModel& model = *plan.model;
  const NoiseSpec& noise = *plan.noise;
  const int m = model.control_dim();
  CounterRng rng(plan.options.seed, static_cast<std::uint32_t>(path), 0u);
  VectorXd x = *plan.x0;
  VectorXd lambda(m), amplitude(m), draws(m), phi_now(model.objective_dim());
  model.objective(x, 0.0, phi_now);
  phi.col(0) = phi_now;
  const double sqrt_dt = std::sqrt(plan.dt);
  for (int n = 0; n < plan.steps; ++n) {
    const double t = n * plan.dt;
    lambda = levels.col(n);
    if (amplitudes != nullptr) {
      amplitude = amplitudes->col(n);
    } else {
      for (int j = 0; j < m; ++j)
        amplitude[j] = noise.kappa[j] * std::pow(std::abs(lambda[j]), noise.alpha);
    }
    for (int j = 0; j < m; ++j) draws[j] = rng.normal();
    em_update(model, x, t, lambda, amplitude, draws, plan.dt, sqrt_dt, ws);
    const double t_next = (n + 1) * plan.dt;
    if (!model.state_box().contains(x)) {
      if (plan.options.escape == EscapePolicy::kAbort) throw_escape(t_next, x, path);
      return false;
    }
    model.objective(x, t_next, phi_now);
    phi.col(n + 1) = phi_now;
  }
  return true;
}

MatrixXd noise_amplitudes(const NoiseSpec& noise, const MatrixXd& levels) {
  MatrixXd amp(levels.rows(), levels.cols());
  for (Eigen::Index j = 0; j < levels.rows(); ++j)
    for (Eigen::Index n = 0; n < levels.cols(); ++n)
      amp(j, n) = noise.kappa[j] * std::pow(std::abs(levels(j, n)), noise.alpha);
  return amp;
}

TrajectoryEnsemble run_impl(const SystemModel& model, const NoiseSpec& noise,
                            const Horizon& horizon, const RealizedControl* shared,
                            const PathControlFn* per_path, const TargetSpec& target,
                            const VectorXd& x0, const EnsembleOptions& options) {
  horizon.validate();
  noise.validate();
  if (options.paths < 2) throw UsageError("run_ensemble needs at least 2 paths");
  if (options.record_stride < 1) throw UsageError("record_stride must be >= 1");
  if (noise.channels() != model.control_dim())
    throw UsageError("noise channels differ from the model's control_dim");
  if (x0.size() != model.state_dim()) throw UsageError("x0 has the wrong size");
  if (!model.state_box().contains(x0)) throw UsageError("x0 lies outside the state box");
  const int steps = horizon.total_steps();
  if (steps % options.record_stride != 0)
    throw ConfigurationError("record_stride must divide the number of steps");
  if (shared != nullptr) {
    if (shared->steps() != steps || shared->channels() != model.control_dim())
      throw ConfigurationError("realized control does not match the horizon/model");
  }

  const int k = model.objective_dim();
  SimulationPlan plan{&model, &noise, steps, steps + 1, options.record_stride,
                      horizon.dt_integrate, &x0, options};
  const Eigen::Index slots = static_cast<Eigen::Index>(k) * plan.points;

  MatrixXd shared_amplitudes;
  if (shared != nullptr) shared_amplitudes = noise_amplitudes(noise, shared->levels());

  const int chunks = (options.paths + kChunkPaths - 1) / kChunkPaths;
  Moments total(slots);
  int escaped = 0;
  std::vector<MatrixXd> kept;
  if (options.keep_paths) kept.reserve(options.paths);

  for (int wave_start = 0; wave_start < chunks; wave_start += kWaveChunks) {
    const int wave_size = std::min(kWaveChunks, chunks - wave_start);
    std::vector<ChunkResult> results(wave_size);
    parallel_for(wave_size, options.threads, [&](int w) {
      const int chunk = wave_start + w;
      ChunkResult& result = results[w];
      result.moments = Moments(slots);
      StepWorkspace ws{VectorXd(model.state_dim()), MatrixXd(),
                       VectorXd(model.control_dim())};
      MatrixXd phi(k, plan.points);
      RealizedControl own;
      const int first = chunk * kChunkPaths;
      const int last = std::min(options.paths, first + kChunkPaths);
      for (int path = first; path < last; ++path) {
        const MatrixXd* levels = nullptr;
        const MatrixXd* amplitudes = nullptr;
        if (shared != nullptr) {
          levels = &shared->levels();
          amplitudes = &shared_amplitudes;
        } else {
          (*per_path)(path, own);
          if (own.steps() != steps || own.channels() != model.control_dim())
            throw ConfigurationError("per-path control does not match the horizon");
          levels = &own.levels();
        }
        if (!simulate_path(plan, path, *levels, amplitudes, phi, ws)) {
          ++result.escaped;
          continue;
        }
        result.moments.add(phi.data());
        if (options.keep_paths) {
          MatrixXd recorded(k, steps / plan.stride + 1);
          for (Eigen::Index c = 0; c < recorded.cols(); ++c)
            recorded.col(c) = phi.col(c * plan.stride);
          result.kept.push_back(std::move(recorded));
        }
      }
    });
    // Fixed pairwise tree inside the wave, then fold waves in order.
    for (int width = 1; width < wave_size; width *= 2)
      for (int i = 0; i + width < wave_size; i += 2 * width)
        results[i].moments.merge(results[i + width].moments);
    total.merge(results[0].moments);
    for (auto& r : results) {
      escaped += r.escaped;
      for (auto& p : r.kept) kept.push_back(std::move(p));
    }
  }

  TrajectoryEnsemble out;
  out.paths_requested = options.paths;
  out.paths_used = static_cast<int>(total.count);
  out.escaped = escaped;
  out.rng_seed = options.seed;
  out.dt = plan.dt;
  out.hold_time = horizon.hold_time;
  out.paths = std::move(kept);
  if (out.paths_used < 2)
    throw NumericError("fewer than two paths stayed inside the state box");

  const double n = total.count;
  auto variance_at = [&](Eigen::Index slot) { return std::max(0.0, total.m2[slot] / (n - 1.0)); };

  const int recorded = steps / plan.stride + 1;
  out.times.resize(recorded);
  out.mean.resize(k, recorded);
  out.variance.resize(k, recorded);
  out.variance_se.resize(k, recorded);
  for (int c = 0; c < recorded; ++c) {
    const int point = c * plan.stride;
    out.times[c] = point * plan.dt;
    for (int i = 0; i < k; ++i) {
      const Eigen::Index slot = static_cast<Eigen::Index>(point) * k + i;
      const double var = variance_at(slot);
      const double m4 = total.m4[slot] / n;
      const double pop_var = total.m2[slot] / n;
      out.mean(i, c) = total.mean[slot];
      out.variance(i, c) = var;
      out.variance_se(i, c) =
          std::sqrt(std::max(0.0, (m4 - pop_var * pop_var * (n - 3.0) / (n - 1.0)) / n));
    }
  }

  const int hold_first = horizon.reach_bins() * horizon.steps_per_bin();
  if (horizon.hold_time > 0.0) {
    for (int point = hold_first; point <= steps; ++point) {
      const double weight = (point == hold_first || point == steps) ? 0.5 : 1.0;
      const double t = point * plan.dt;
      const VectorXd z = target.at(t);
      double var_sum = 0.0, bias = 0.0;
      for (int i = 0; i < k; ++i) {
        const Eigen::Index slot = static_cast<Eigen::Index>(point) * k + i;
        var_sum += variance_at(slot);
        const double d = total.mean[slot] - z[i];
        bias += d * d;
      }
      out.exec_error += weight * var_sum * plan.dt;
      out.bias_error += weight * bias * plan.dt;
      out.mean_std += weight * std::sqrt(var_sum) * plan.dt;
    }
    out.mean_std /= horizon.hold_time;
  }
  return out;
}

}  // namespace

double TrajectoryEnsemble::rms_error() const {
  return hold_time > 0.0 ? std::sqrt(exec_error / hold_time) : 0.0;
}

double TrajectoryEnsemble::rms_total_error() const {
  return hold_time > 0.0 ? std::sqrt((exec_error + bias_error) / hold_time) : 0.0;
}

VectorXd TrajectoryEnsemble::mean_se(int point) const {
  return (variance.col(point) / static_cast<double>(paths_used)).cwiseSqrt();
}

TrajectoryEnsemble run_ensemble(const SystemModel& model, const NoiseSpec& noise,
                                const Horizon& horizon,
                                const RealizedControl& control,
                                const TargetSpec& target, const VectorXd& x0,
                                const EnsembleOptions& options) {
  return run_impl(model, noise, horizon, &control, nullptr, target, x0, options);
}

TrajectoryEnsemble run_ensemble(const SystemModel& model, const NoiseSpec& noise,
                                const Horizon& horizon,
                                const PathControlFn& control,
                                const TargetSpec& target, const VectorXd& x0,
                                const EnsembleOptions& options) {
  return run_impl(model, noise, horizon, nullptr, &control, target, x0, options);
}

MatrixXd simulate_noiseless(const SystemModel& model, const Horizon& horizon,
                            const RealizedControl& control, const VectorXd& x0) {
  const int steps = horizon.total_steps();
  if (control.steps() != steps || control.channels() != model.control_dim())
    throw ConfigurationError("realized control does not match the horizon/model");
  const double dt = horizon.dt_integrate;
  MatrixXd states(model.state_dim(), steps + 1);
  VectorXd x = x0, drift(model.state_dim()), lambda(model.control_dim());
  states.col(0) = x;
  for (int n = 0; n < steps; ++n) {
    lambda = control.at(n);
    model.controlled_drift(x, n * dt, lambda, drift);
    x.noalias() += dt * drift;
    if (!model.state_box().contains(x)) throw_escape((n + 1) * dt, x, -1);
    states.col(n + 1) = x;
  }
  return states;
}

void write_ensemble_csv(std::ostream& out, const TrajectoryEnsemble& e) {
  const Eigen::Index k = e.mean.rows();
  out << 't';
  for (Eigen::Index i = 0; i < k; ++i) out << ",mean_" << i + 1;
  for (Eigen::Index i = 0; i < k; ++i) out << ",var_" << i + 1;
  out << '\n';
  for (std::size_t c = 0; c < e.times.size(); ++c) {
    out << format_sig(e.times[c], 9);
    for (Eigen::Index i = 0; i < k; ++i) out << ',' << format_exact(e.mean(i, c));
    for (Eigen::Index i = 0; i < k; ++i) out << ',' << format_exact(e.variance(i, c));
    out << '\n';
  }
}

void write_control_csv(std::ostream& out, const RealizedControl& control) {
  out << 't';
  for (int i = 0; i < control.channels(); ++i) out << ",u_" << i + 1;
  out << '\n';
  for (int n = 0; n < control.steps(); ++n) {
    out << format_sig(n * control.dt(), 9);
    for (int i = 0; i < control.channels(); ++i)
      out << ',' << format_exact(control.levels()(i, n));
    out << '\n';
  }
}

void write_ensemble_manifest(std::ostream& out, const TrajectoryEnsemble& e,
                             const Horizon& horizon) {
  out << "seed = " << e.rng_seed << '\n'
      << "paths = " << e.paths_requested << '\n'
      << "paths_used = " << e.paths_used << '\n'
      << "escaped = " << e.escaped << '\n'
      << "dt_integrate = " << format_sig(horizon.dt_integrate, 9) << '\n'
      << "dt_control = " << format_sig(horizon.dt_control, 9) << '\n'
      << "reach_time = " << format_sig(horizon.reach_time, 9) << '\n'
      << "hold_time = " << format_sig(horizon.hold_time, 9) << '\n'
      << "exec_error = " << format_exact(e.exec_error) << '\n'
      << "bias_error = " << format_exact(e.bias_error) << '\n'
      << "rms_error = " << format_exact(e.rms_error()) << '\n'
      << "mean_std = " << format_exact(e.mean_std) << '\n';
}

}  // namespace ycontrol
