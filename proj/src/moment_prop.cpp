#include "ycontrol/moment_prop.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <ostream>

#include "ycontrol/csv.hpp"
#include "ycontrol/errors.hpp"

namespace ycontrol {

MomentState MomentState::deterministic(const VectorXd& x0) {
  return {x0, MatrixXd::Zero(x0.size(), x0.size())};
}

BinWeights BinWeights::from_schedule(const MeasureSchedule& schedule, int bin) {
  return {schedule.weights_pos().col(bin), schedule.weights_neg().col(bin)};
}

namespace {

void check_finite(const VectorXd& v, const char* what) {
  if (!v.allFinite()) throw NumericError(std::string("non-finite ") + what);
}

void diffusion(const SystemModel& model, const NoiseSpec& noise,
               const VectorXd& mean, const BinWeights& weights, double t,
               MatrixXd& out) {
  const int n = model.state_dim();
  out.setZero(n, n);
  const double level = std::pow(noise.m_y, 2.0 * noise.alpha);
  MatrixXd b;
  bool have_gain = false;
  for (int j = 0; j < model.control_dim(); ++j) {
    const double mass =
        weights.dirac
            ? std::pow(std::abs(weights.mu[j] - weights.nu[j]) * noise.m_y, 2.0 * noise.alpha)
            : (weights.mu[j] + weights.nu[j]) * level;
    const double intensity = noise.kappa[j] * noise.kappa[j] * mass;
    if (intensity == 0.0) continue;
    if (!have_gain) {
      model.gain(mean, t, b);
      have_gain = true;
    }
    out.noalias() += intensity * b.col(j) * b.col(j).transpose();
  }
}

void make_psd(MatrixXd& cov) {
  cov = 0.5 * (cov + cov.transpose()).eval();
  if (cov.rows() == 1) {
    if (cov(0, 0) < -1e-10) cov(0, 0) = 0.0;
    return;
  }
  // Cheap acceptance: a successful Cholesky of cov + 1e-10 I proves every
  // eigenvalue is above -1e-10.
  const MatrixXd shifted =
      cov + 1e-10 * MatrixXd::Identity(cov.rows(), cov.cols());
  if (shifted.llt().info() == Eigen::Success) return;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  if (eig.eigenvalues().minCoeff() >= -1e-10) return;
  const VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  cov = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  cov = 0.5 * (cov + cov.transpose()).eval();
}

}  // namespace

VectorXd propagate_mean(const SystemModel& model, const NoiseSpec& noise,
                        const MomentState& state, const BinWeights& weights,
                        double t, double dt) {
  VectorXd a;
  model.controlled_drift(state.mean, t, weights.mean_control(noise.m_y), a);
  check_finite(a, "drift");
  return state.mean + dt * a;
}

MatrixXd propagate_cov(const SystemModel& model, const NoiseSpec& noise,
                       const MomentState& state, const BinWeights& weights,
                       double t, double dt) {
  MatrixXd jac, q;
  model.controlled_drift_jacobian(state.mean, t, weights.mean_control(noise.m_y), jac);
  if (!jac.allFinite()) throw NumericError("non-finite drift Jacobian");
  diffusion(model, noise, state.mean, weights, t, q);
  MatrixXd cov = state.cov + dt * (jac * state.cov + state.cov * jac.transpose()) + dt * q;
  make_psd(cov);
  return cov;
}

void propagate_step(const SystemModel& model, const NoiseSpec& noise,
                    MomentState& state, const BinWeights& weights, double t,
                    double dt) {
  MatrixXd cov = propagate_cov(model, noise, state, weights, t, dt);
  state.mean = propagate_mean(model, noise, state, weights, t, dt);
  state.cov = std::move(cov);
}

void objective_moments(const SystemModel& model, const MomentState& state,
                       double t, VectorXd& phi_mean, VectorXd& phi_var) {
  MatrixXd d;
  model.objective(state.mean, t, phi_mean);
  model.objective_jacobian(state.mean, t, d);
  phi_var = (d * state.cov * d.transpose()).diagonal().cwiseMax(0.0);
}

double advance_bin(const SystemModel& model, const NoiseSpec& noise,
                   MomentState& state, const BinWeights& weights, double t0,
                   double dt, int steps, bool in_hold) {
  VectorXd phi_mean, phi_var;
  double integral = 0.0;
  for (int s = 0; s < steps; ++s) {
    const double t = t0 + s * dt;
    if (in_hold) {
      objective_moments(model, state, t, phi_mean, phi_var);
      integral += (s == 0 ? 0.5 : 1.0) * phi_var.sum() * dt;
    }
    propagate_step(model, noise, state, weights, t, dt);
    if (!model.state_box().contains(state.mean)) {
      const double t_next = t0 + (s + 1) * dt;
      throw EscapeError("propagated mean left the state box at t=" +
                            format_sig(t_next, 9),
                        t_next);
    }
  }
  if (in_hold) {
    objective_moments(model, state, t0 + steps * dt, phi_mean, phi_var);
    integral += 0.5 * phi_var.sum() * dt;
  }
  return integral;
}

HorizonMoments propagate_horizon(const SystemModel& model, const NoiseSpec& noise,
                                 const Horizon& horizon,
                                 const MeasureSchedule& schedule,
                                 const VectorXd& x0) {
  horizon.validate();
  noise.validate();
  if (schedule.bins() != horizon.total_bins() ||
      schedule.channels() != model.control_dim())
    throw ConfigurationError("schedule does not cover the horizon/model");
  if (x0.size() != model.state_dim()) throw UsageError("x0 has the wrong size");
  const int bins = schedule.bins();
  const int per_bin = horizon.steps_per_bin();
  const int reach_bins = horizon.reach_bins();
  const double dt = horizon.dt_integrate;
  const int k = model.objective_dim();

  HorizonMoments out;
  out.phi_mean.resize(k, bins + 1);
  out.phi_var.resize(k, bins + 1);
  MomentState state = MomentState::deterministic(x0);
  VectorXd phi_mean, phi_var;
  auto record = [&](int boundary) {
    const double t = boundary * per_bin * dt;
    objective_moments(model, state, t, phi_mean, phi_var);
    out.times.push_back(t);
    out.states.push_back(state);
    out.phi_mean.col(boundary) = phi_mean;
    out.phi_var.col(boundary) = phi_var;
  };
  record(0);
  for (int bin = 0; bin < bins; ++bin) {
    out.hold_variance +=
        advance_bin(model, noise, state, BinWeights::from_schedule(schedule, bin),
                    bin * per_bin * dt, dt, per_bin, bin >= reach_bins);
    record(bin + 1);
  }
  return out;
}

void write_moments_csv(std::ostream& out, const HorizonMoments& m) {
  const Eigen::Index k = m.phi_mean.rows();
  out << 't';
  for (Eigen::Index i = 0; i < k; ++i) out << ",mean_" << i + 1;
  for (Eigen::Index i = 0; i < k; ++i) out << ",var_" << i + 1;
  out << '\n';
  for (std::size_t c = 0; c < m.times.size(); ++c) {
    out << format_sig(m.times[c], 9);
    for (Eigen::Index i = 0; i < k; ++i) out << ',' << format_exact(m.phi_mean(i, c));
    for (Eigen::Index i = 0; i < k; ++i) out << ',' << format_exact(m.phi_var(i, c));
    out << '\n';
  }
}

}  // namespace ycontrol
