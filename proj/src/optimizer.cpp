#include "ycontrol/optimizer.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>

#include "ycontrol/csv.hpp"
#include "ycontrol/errors.hpp"
#include "ycontrol/moment_prop.hpp"
#include "ycontrol/parallel.hpp"
#include "ycontrol/philox.hpp"

namespace ycontrol {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Largest |phi - z| relative to the per-component tolerance.
double scaled_violation(const VectorXd& diff, const VectorXd& tolerance) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < diff.size(); ++i)
    worst = std::max(worst, std::abs(diff[i]) / tolerance[i]);
  return worst;
}

// ---------------------------------------------------------------------------
// Noiseless single shooting.

class ShootingProblem {
 public:
  ShootingProblem(const SystemModel& model, const Horizon& horizon,
                  const TargetSpec& target, const VectorXd& x0, double m_y,
                  int samples_per_bin)
      : model_(model), target_(target), x0_(x0), m_y_(m_y),
        m_(model.control_dim()), k_(model.objective_dim()),
        bins_(horizon.total_bins()), per_bin_(horizon.steps_per_bin()),
        dt_(horizon.dt_integrate) {
    const int steps = bins_ * per_bin_;
    const int first_hold = horizon.reach_bins() * per_bin_;
    const int spacing = std::max(1, per_bin_ / std::max(1, samples_per_bin));
    for (int n = first_hold; n < steps; n += spacing) sample_steps_.push_back(n);
    sample_steps_.push_back(steps);
  }

  int variables() const { return m_ * bins_; }
  int residuals() const { return k_ * static_cast<int>(sample_steps_.size()); }
  int bins() const { return bins_; }
  int channels() const { return m_; }

  // Residuals for scaled controls s (u = s M_Y), simulating from bin
  // `start` whose initial state is checkpoints[start]. Earlier residuals
  // are copied from `base`. With `record`, checkpoints are rewritten.
  VectorXd residual(const VectorXd& s, int start, std::vector<VectorXd>& checkpoints,
                    const VectorXd* base, bool record) const {
    VectorXd r = base != nullptr ? *base : VectorXd::Zero(residuals());
    VectorXd x = checkpoints[start], drift(model_.state_dim()), u(m_), phi;
    std::size_t sample = std::lower_bound(sample_steps_.begin(), sample_steps_.end(),
                                          start * per_bin_) -
                         sample_steps_.begin();
    auto take_samples = [&](int n) {
      while (sample < sample_steps_.size() && sample_steps_[sample] == n) {
        const double t = n * dt_;
        model_.objective(x, t, phi);
        r.segment(static_cast<Eigen::Index>(sample) * k_, k_) = phi - target_.at(t);
        ++sample;
      }
    };
    for (int bin = start; bin < bins_; ++bin) {
      if (record) checkpoints[bin] = x;
      u = s.segment(static_cast<Eigen::Index>(bin) * m_, m_) * m_y_;
      for (int j = 0; j < per_bin_; ++j) {
        const int n = bin * per_bin_ + j;
        take_samples(n);
        model_.controlled_drift(x, n * dt_, u, drift);
        x.noalias() += dt_ * drift;
        if (!x.allFinite() || !model_.state_box().contains(x))
          return VectorXd::Constant(residuals(), kInf);
      }
    }
    take_samples(bins_ * per_bin_);
    if (record) checkpoints[bins_] = x;
    return r;
  }

  double violation(const VectorXd& r) const {
    if (!r.allFinite()) return kInf;
    double worst = 0.0;
    for (std::size_t j = 0; j < sample_steps_.size(); ++j)
      worst = std::max(worst, scaled_violation(r.segment(j * k_, k_),
                                               target_.tolerance));
    return worst;
  }

  double max_norm(const VectorXd& r) const {
    double worst = 0.0;
    for (std::size_t j = 0; j < sample_steps_.size(); ++j)
      worst = std::max(worst, r.segment(j * k_, k_).norm());
    return worst;
  }

  const VectorXd& x0() const { return x0_; }

 private:
  const SystemModel& model_;
  const TargetSpec& target_;
  VectorXd x0_;
  double m_y_;
  int m_, k_, bins_, per_bin_;
  double dt_;
  std::vector<int> sample_steps_;
};

struct ShootingOutcome {
  VectorXd s;
  double violation = kInf;
  int iterations = 0;
};

// With `minimal_change` each step is the smallest correction of s that
// zeroes the linearized residual; otherwise it is the smallest s (in the
// metric set by the regularization) that does.
ShootingOutcome gauss_newton(const ShootingProblem& sp, VectorXd s,
                             const ReachOptions& options, int threads,
                             bool minimal_change = false) {
  const int nv = sp.variables();
  std::vector<VectorXd> checkpoints(sp.bins() + 1);
  checkpoints[0] = sp.x0();
  VectorXd r = sp.residual(s, 0, checkpoints, nullptr, true);
  ShootingOutcome out{s, sp.violation(r), 0};
  constexpr double h = 1e-7;

  for (int it = 0; it < options.max_iters && out.violation > 1.0; ++it) {
    if (!r.allFinite()) break;
    MatrixXd jac(sp.residuals(), nv);
    parallel_for(nv, threads, [&](int v) {
      std::vector<VectorXd> local = checkpoints;
      VectorXd probe = s;
      const double step = probe[v] + h > 1.0 ? -h : h;
      probe[v] += step;
      const VectorXd rp = sp.residual(probe, v / sp.channels(), local, &r, false);
      jac.col(v) = (rp - r) / step;
    });
    if (!jac.allFinite()) break;

    VectorXd scale = VectorXd::Ones(nv);
    if (!minimal_change && options.regularization == ReachRegularization::kEqualContribution) {
      scale = jac.colwise().norm().transpose();
      const double floor = 1e-12 * std::max(scale.maxCoeff(), 1e-300);
      scale = scale.cwiseMax(floor);
    }
    // Minimum-norm solution of J s' = J s - r in the metric |diag(scale) s'|.
    const MatrixXd scaled = jac * scale.cwiseInverse().asDiagonal();
    // Forward differences carry ~1e-9 relative round-off; directions below
    // the threshold are noise and would otherwise dominate the min-norm step.
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod;
    cod.setThreshold(1e-6);
    cod.compute(scaled);
    const VectorXd direction =
        minimal_change ? VectorXd(-cod.solve(r))
                       : VectorXd(scale.cwiseInverse().cwiseProduct(cod.solve(jac * s - r)) - s);

    const double current = r.squaredNorm();
    auto try_step = [&](const VectorXd& step) {
      VectorXd trial = (s + step).cwiseMax(-1.0).cwiseMin(1.0);
      std::vector<VectorXd> trial_checkpoints(sp.bins() + 1);
      trial_checkpoints[0] = sp.x0();
      VectorXd rt = sp.residual(trial, 0, trial_checkpoints, nullptr, true);
      if (!rt.allFinite() || !(rt.squaredNorm() < current || sp.violation(rt) <= 1.0))
        return false;
      s = std::move(trial);
      r = std::move(rt);
      checkpoints = std::move(trial_checkpoints);
      return true;
    };
    bool accepted = false;
    for (double t = 1.0; t > 1e-4 && !accepted; t *= 0.5) accepted = try_step(t * direction);
    if (!accepted) {
      // Ill-conditioned Jacobian (fast, strongly nonlinear reaches): fall
      // back to damped steps, from light to heavy damping.
      const MatrixXd jtj = jac.transpose() * jac;
      const VectorXd grad = jac.transpose() * r;
      const double base = std::max(jtj.diagonal().mean(), 1e-300);
      for (double mu = 1e-8; mu < 1e8 && !accepted; mu *= 10.0) {
        MatrixXd damped = jtj;
        damped.diagonal().array() += mu * base;
        accepted = try_step(-damped.llt().solve(grad));
      }
    }
    out.iterations = it + 1;
    if (!accepted) break;
    out.s = s;
    out.violation = sp.violation(r);
  }
  return out;
}

}  // namespace

ReachResult solve_noiseless_reach(const SystemModel& model, const Horizon& horizon,
                                  const TargetSpec& target, const VectorXd& x0,
                                  const ReachOptions& options) {
  horizon.validate();
  if (!(options.m_y > 0.0)) throw UsageError("reach solver needs M_Y > 0");
  if (x0.size() != model.state_dim()) throw UsageError("x0 has the wrong size");
  if (target.tolerance.size() != model.objective_dim())
    throw UsageError("target tolerance has the wrong size");
  ShootingProblem sp(model, horizon, target, x0, options.m_y, options.samples_per_bin);

  ShootingOutcome best;
  int total_iterations = 0;
  for (int attempt = 0; attempt < std::max(1, options.restarts); ++attempt) {
    VectorXd s0 = VectorXd::Zero(sp.variables());
    if (attempt > 0) {
      CounterRng rng(options.seed, 0x72656163u, static_cast<std::uint32_t>(attempt));
      for (Eigen::Index v = 0; v < s0.size(); ++v) s0[v] = 0.1 * (2.0 * rng.uniform() - 1.0);
    }
    ShootingOutcome outcome = gauss_newton(sp, s0, options, 1);
    total_iterations += outcome.iterations;
    if (outcome.violation < best.violation) best = std::move(outcome);
    if (best.violation <= 1.0) break;
  }
  if (!(best.violation <= 1.0)) {
    throw InfeasibleError("noiseless reach did not meet the target tolerance",
                          best.violation);
  }
  ReachResult result;
  result.u_bins = Eigen::Map<const MatrixXd>(best.s.data(), sp.channels(), sp.bins()) *
                  options.m_y;
  std::vector<VectorXd> checkpoints(sp.bins() + 1);
  checkpoints[0] = x0;
  result.residual = sp.max_norm(sp.residual(best.s, 0, checkpoints, nullptr, true));
  result.iterations = total_iterations;
  return result;
}

MeasureSchedule lift_to_schedule(const MatrixXd& u_bins, const NoiseSpec& noise,
                                 double bin_width) {
  if (!(noise.m_y > 0.0)) throw UsageError("lift needs M_Y > 0");
  const double worst = u_bins.size() ? u_bins.cwiseAbs().maxCoeff() : 0.0;
  if (worst > noise.m_y * (1.0 + 1e-12))
    throw InfeasibleError("control exceeds M_Y; cannot lift to a measure",
                          worst - noise.m_y);
  return MeasureSchedule::from_signed(u_bins / noise.m_y, bin_width);
}

// ---------------------------------------------------------------------------
// Relaxed problem.

void OptProblem::validate() const {
  if (!model) throw UsageError("optimizer needs a model");
  noise.validate();
  horizon.validate();
  if (!(penalty_weight > 0.0)) throw UsageError("penalty_weight must be > 0");
  if (restarts < 1) throw UsageError("restarts must be >= 1");
  if (max_iters < 1) throw UsageError("max_iters must be >= 1");
  if (!(fd_step > 0.0)) throw UsageError("fd_step must be > 0");
  if (x0.size() != model->state_dim()) throw UsageError("x0 has the wrong size");
  if (noise.channels() != model->control_dim())
    throw UsageError("noise channels differ from the model's control_dim");
  if (target.tolerance.size() != model->objective_dim())
    throw UsageError("target tolerance has the wrong size");
  if (!(target.tolerance.array() > 0.0).all())
    throw UsageError("target tolerances must be positive");
}

namespace {

struct Checkpoint {
  MomentState state;
  double hold_variance = 0.0;
  double penalty = 0.0;
  double violation = 0.0;  // scaled, max over constraint points so far
  double residual = 0.0;   // max |E phi - z| so far
};

class MomentObjective {
 public:
  explicit MomentObjective(const OptProblem& problem)
      : p_(problem),
        model_(*problem.model),
        bins_(problem.horizon.total_bins()),
        reach_bins_(problem.horizon.reach_bins()),
        per_bin_(problem.horizon.steps_per_bin()),
        dt_(problem.horizon.dt_integrate),
        m_(model_.control_dim()) {}

  int bins() const { return bins_; }
  int channels() const { return m_; }

  Checkpoint initial() const {
    Checkpoint c;
    c.state = MomentState::deterministic(p_.x0);
    constrain(c, 0);
    return c;
  }

  // Sweeps bins [start, K) from `from`. Returns false on escape or
  // non-finite values. With `record`, trail[k] holds the checkpoint at the
  // start of bin k (and trail[K] the final one).
  bool sweep(const MatrixXd& w, int start, Checkpoint from,
             std::vector<Checkpoint>* trail, Checkpoint& final) const {
    try {
      for (int bin = start; bin < bins_; ++bin) {
        if (trail != nullptr) (*trail)[bin] = from;
        const VectorXd col = w.col(bin);
        const BinWeights weights{col.cwiseMax(0.0), (-col).cwiseMax(0.0), p_.dirac};
        from.hold_variance += advance_bin(model_, p_.noise, from.state, weights,
                                          bin * per_bin_ * dt_, dt_, per_bin_,
                                          bin >= reach_bins_);
        constrain(from, bin + 1);
      }
    } catch (const NumericError&) {
      return false;
    }
    if (!std::isfinite(from.hold_variance) || !std::isfinite(from.penalty)) return false;
    if (trail != nullptr) (*trail)[bins_] = from;
    final = std::move(from);
    return true;
  }

  double value(const Checkpoint& c, double rho) const {
    return c.hold_variance + rho * c.penalty;
  }

 private:
  // Adds the constraint term at bin boundary `boundary` if it is in the
  // hold window.
  void constrain(Checkpoint& c, int boundary) const {
    if (boundary < reach_bins_) return;
    const double t = boundary * per_bin_ * dt_;
    VectorXd phi;
    model_.objective(c.state.mean, t, phi);
    const VectorXd diff = phi - p_.target.at(t);
    c.penalty += diff.squaredNorm();
    c.residual = std::max(c.residual, diff.norm());
    c.violation = std::max(c.violation, scaled_violation(diff, p_.target.tolerance));
  }

  const OptProblem& p_;
  const SystemModel& model_;
  int bins_, reach_bins_, per_bin_;
  double dt_;
  int m_;
};

struct Iterate {
  MatrixXd w;
  Checkpoint end;
  std::vector<Checkpoint> trail;
  double value = kInf;
};

bool evaluate(const MomentObjective& obj, const MatrixXd& w, double rho, Iterate& out) {
  out.w = w;
  out.trail.assign(obj.bins() + 1, Checkpoint{});
  if (!obj.sweep(w, 0, obj.initial(), &out.trail, out.end)) {
    out.value = kInf;
    return false;
  }
  out.value = obj.value(out.end, rho);
  return true;
}

MatrixXd gradient(const MomentObjective& obj, const Iterate& at, double rho,
                  double h, int threads) {
  const int m = obj.channels();
  const int nv = m * obj.bins();
  MatrixXd grad(m, obj.bins());
  parallel_for(nv, threads, [&](int v) {
    const int bin = v / m, channel = v % m;
    MatrixXd probe = at.w;
    const double step = probe(channel, bin) + h > 1.0 ? -h : h;
    probe(channel, bin) += step;
    Checkpoint end;
    const bool ok = obj.sweep(probe, bin, at.trail[bin], nullptr, end);
    grad(channel, bin) = ok ? (obj.value(end, rho) - at.value) / step
                            : (step > 0 ? kInf : -kInf);
  });
  // An escaping probe means "do not go there"; cap it to a large finite push.
  const double cap = 1e300;
  return grad.cwiseMax(-cap).cwiseMin(cap);
}

struct RestartOutcome {
  Iterate best;
  double rho = 0.0;
  int iterations = 0;
  bool feasible = false;
  bool converged = false;
};

// Smallest change of w that meets the hold constraint. The relaxed mean
// follows the noiseless plant under u = w M_Y, so the shooting residuals
// are the constraint.
bool restore(const ShootingProblem& sp, const MomentObjective& obj, double rho,
             Iterate& it) {
  ReachOptions options;
  options.max_iters = 20;
  const VectorXd s0 = Eigen::Map<const VectorXd>(it.w.data(), it.w.size());
  const ShootingOutcome o = gauss_newton(sp, s0, options, 1, true);
  if (!(o.violation <= 1.0)) return false;
  Iterate trial;
  const MatrixXd w = Eigen::Map<const MatrixXd>(o.s.data(), it.w.rows(), it.w.cols());
  if (!evaluate(obj, w, rho, trial) || trial.end.violation > 1.0) return false;
  it = std::move(trial);
  return true;
}

RestartOutcome run_restart(const OptProblem& problem, const MomentObjective& obj,
                           const ShootingProblem& sp, MatrixXd w0, int restart,
                           int threads) {
  RestartOutcome out;
  double rho = problem.penalty_weight;
  Iterate current;
  if (!evaluate(obj, w0, rho, current)) return out;

  // Every penalty stage yields a feasible candidate, directly or after
  // restoration; the lowest-variance one wins.
  auto consider = [&](const Iterate& candidate, bool converged) {
    if (!out.feasible || candidate.end.hold_variance < out.best.end.hold_variance) {
      out.best = candidate;
      out.rho = rho;
      out.converged = converged;
    }
    out.feasible = true;
  };
  double previous_restored = kInf;

  while (true) {
    MatrixXd g = gradient(obj, current, rho, problem.fd_step, threads);
    double step = 0.1 / std::max(g.cwiseAbs().maxCoeff(), 1e-300);
    std::deque<double> history{current.value};
    bool converged = false;
    for (int it = 0; it < problem.max_iters; ++it) {
      ++out.iterations;
      Iterate trial;
      bool accepted = false;
      MatrixXd displacement;
      for (int tries = 0; tries < 60; ++tries) {
        const MatrixXd w_new = (current.w - step * g).cwiseMax(-1.0).cwiseMin(1.0);
        displacement = w_new - current.w;
        if (displacement.cwiseAbs().maxCoeff() == 0.0) break;
        if (evaluate(obj, w_new, rho, trial) &&
            trial.value <= current.value + 1e-4 * (g.array() * displacement.array()).sum()) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        converged = true;  // projected-stationary to working precision
        break;
      }
      MatrixXd g_new = gradient(obj, trial, rho, problem.fd_step, threads);
      const double sy = (displacement.array() * (g_new - g).array()).sum();
      const double ss = displacement.squaredNorm();
      step = sy > 0.0 ? std::clamp(ss / sy, 1e-20, 1e20) : step * 2.0;
      current = std::move(trial);
      g = std::move(g_new);
      if (problem.progress)
        problem.progress(restart, out.iterations, rho, current.end.hold_variance,
                         current.end.residual);
      history.push_back(current.value);
      if (history.size() > 11) history.pop_front();
      if (history.size() == 11 &&
          std::abs(history.front() - history.back()) <=
              1e-8 * std::max(std::abs(history.back()), 1e-300)) {
        converged = true;
        break;
      }
    }
    if (current.end.violation <= 1.0) {
      consider(current, converged);
      return out;
    }
    Iterate restored = current;
    if (restore(sp, obj, rho, restored)) {
      consider(restored, converged);
      // Stop once the stages agree or the penalty alone nearly made it.
      const double v = restored.end.hold_variance;
      if (current.end.violation <= 10.0 ||
          std::abs(v - previous_restored) <= 1e-4 * std::abs(v))
        return out;
      previous_restored = v;
    }
    if (rho * 10.0 > problem.max_penalty) {
      if (!out.feasible) out.best = std::move(current);
      return out;
    }
    rho *= 10.0;
    current.value = obj.value(current.end, rho);
  }
}

}  // namespace

ScheduleScore score_schedule(const OptProblem& problem, const MatrixXd& signed_weights) {
  problem.validate();
  MomentObjective obj(problem);
  if (signed_weights.rows() != obj.channels() || signed_weights.cols() != obj.bins())
    throw UsageError("signed weights do not match the horizon/model");
  Checkpoint end;
  if (!obj.sweep(signed_weights, 0, obj.initial(), nullptr, end))
    throw EscapeError("schedule drives the propagated mean out of the state box", 0.0);
  return {end.hold_variance, end.residual, end.penalty};
}

OptResult solve(const OptProblem& problem) {
  problem.validate();
  MomentObjective obj(problem);
  const ShootingProblem shooting(*problem.model, problem.horizon, problem.target,
                                 problem.x0, problem.noise.m_y, 4);
  const double bin_width = problem.horizon.dt_control;

  MatrixXd warm;
  if (problem.warm_start) {
    warm = *problem.warm_start;
    if (warm.rows() != obj.channels() || warm.cols() != obj.bins())
      throw UsageError("warm start does not match the horizon/model");
  } else {
    ReachOptions reach;
    reach.m_y = problem.noise.m_y;
    reach.seed = problem.seed;
    reach.regularization = problem.reach_regularization;
    const ReachResult noiseless = solve_noiseless_reach(
        *problem.model, problem.horizon, problem.target, problem.x0, reach);
    warm = lift_to_schedule(noiseless.u_bins, problem.noise, bin_width).signed_weights();
  }
  warm = warm.cwiseMax(-1.0).cwiseMin(1.0);

  const double spread =
      problem.restart_spread * std::max(warm.cwiseAbs().maxCoeff(), 1e-3);
  std::vector<RestartOutcome> outcomes(problem.restarts);
  const int outer = std::min(problem.threads, problem.restarts);
  const int inner = std::max(1, problem.threads / std::max(1, outer));
  parallel_for(problem.restarts, outer, [&](int r) {
    MatrixXd w0 = warm;
    if (r > 0) {
      CounterRng rng(problem.seed, 0x6f707421u, static_cast<std::uint32_t>(r));
      for (Eigen::Index k = 0; k < w0.cols(); ++k)
        for (Eigen::Index i = 0; i < w0.rows(); ++i)
          w0(i, k) += spread * (2.0 * rng.uniform() - 1.0);
      w0 = w0.cwiseMax(-1.0).cwiseMin(1.0);
    }
    outcomes[r] = run_restart(problem, obj, shooting, std::move(w0), r, inner);
  });

  int chosen = -1;
  double best_residual = kInf;
  for (int r = 0; r < problem.restarts; ++r) {
    const RestartOutcome& o = outcomes[r];
    if (std::isfinite(o.best.value)) best_residual = std::min(best_residual, o.best.end.residual);
    if (!o.feasible) continue;
    if (chosen < 0 || o.best.end.hold_variance < outcomes[chosen].best.end.hold_variance)
      chosen = r;
  }
  if (chosen < 0)
    throw InfeasibleError("no restart met the hold constraint at the largest penalty",
                          best_residual);

  const RestartOutcome& o = outcomes[chosen];
  OptResult result;
  result.schedule = MeasureSchedule::from_signed(o.best.w, bin_width);
  result.objective = o.best.end.hold_variance;
  result.constraint_residual = o.best.end.residual;
  result.penalty_weight = o.rho;
  result.iterations = o.iterations;
  result.restart = chosen;
  result.converged = o.converged;
  return result;
}

void write_opt_manifest(std::ostream& out, const OptResult& result,
                        std::uint64_t seed, double seconds) {
  out << "objective = " << format_exact(result.objective) << '\n'
      << "constraint_residual = " << format_exact(result.constraint_residual) << '\n'
      << "penalty_weight = " << format_sig(result.penalty_weight, 6) << '\n'
      << "iterations = " << result.iterations << '\n'
      << "restart = " << result.restart << '\n'
      << "converged = " << (result.converged ? "true" : "false") << '\n'
      << "seed = " << seed << '\n'
      << "seconds = " << format_sig(seconds, 6) << '\n';
}

}  // namespace ycontrol
