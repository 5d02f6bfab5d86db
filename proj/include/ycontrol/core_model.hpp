#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace ycontrol {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Axis-aligned box bounding the admissible state space. Unbounded by default.
struct StateBox {
  VectorXd lower;
  VectorXd upper;

  static StateBox unbounded(int dim);
  bool contains(const VectorXd& x) const;
};

// Controlled plant dx = (a(x,t) + b(x,t) u) dt with objective phi(x,t).
//
// Implementations are immutable after construction and may be shared
// read-only between worker threads.
class SystemModel {
 public:
  SystemModel(int state_dim, int control_dim, int objective_dim, StateBox box);
  virtual ~SystemModel() = default;

  int state_dim() const { return state_dim_; }
  int control_dim() const { return control_dim_; }
  int objective_dim() const { return objective_dim_; }
  const StateBox& state_box() const { return box_; }

  virtual void drift(const VectorXd& x, double t, VectorXd& out) const = 0;
  virtual void gain(const VectorXd& x, double t, MatrixXd& out) const = 0;
  virtual void objective(const VectorXd& x, double t, VectorXd& out) const = 0;

  // A(x,t,lambda) = a(x,t) + b(x,t) lambda.
  virtual void controlled_drift(const VectorXd& x, double t,
                                const VectorXd& lambda, VectorXd& out) const;

  // State Jacobian of A at (x,t,lambda). The default uses central
  // differences with step 1e-6 (1 + |x_j|).
  virtual void controlled_drift_jacobian(const VectorXd& x, double t,
                                         const VectorXd& lambda,
                                         MatrixXd& out) const;

  // k x n Jacobian of the objective; central differences by default.
  virtual void objective_jacobian(const VectorXd& x, double t,
                                  MatrixXd& out) const;

  VectorXd drift(const VectorXd& x, double t) const;
  MatrixXd gain(const VectorXd& x, double t) const;
  VectorXd objective(const VectorXd& x, double t) const;

 private:
  int state_dim_;
  int control_dim_;
  int objective_dim_;
  StateBox box_;
};

// SystemModel assembled from plain callables.
class FunctionalModel final : public SystemModel {
 public:
  using VectorFn = std::function<VectorXd(const VectorXd&, double)>;
  using MatrixFn = std::function<MatrixXd(const VectorXd&, double)>;

  FunctionalModel(int state_dim, int control_dim, int objective_dim,
                  VectorFn drift, MatrixFn gain, VectorFn objective,
                  StateBox box);

  void drift(const VectorXd& x, double t, VectorXd& out) const override;
  void gain(const VectorXd& x, double t, MatrixXd& out) const override;
  void objective(const VectorXd& x, double t, VectorXd& out) const override;

  using SystemModel::drift;
  using SystemModel::gain;
  using SystemModel::objective;

 private:
  VectorFn drift_;
  MatrixFn gain_;
  VectorFn objective_;
};

// Scalar plant dx/dt = p x + q u observed directly (phi = x).
std::shared_ptr<const SystemModel> make_scalar_linear_model(double p, double q,
                                                            double bound);

// Samples the box (finite faces only) and reports whether drift and gain are
// finite everywhere sampled.
bool check_model_finite(const SystemModel& model, int samples,
                        std::uint64_t seed);

// Largest sampled ratio |phi(x) - phi(y)| / |x - y| over random pairs in the
// box. A model satisfies its Lipschitz declaration when this is <= C1.
double sampled_lipschitz_ratio(const SystemModel& model, int samples,
                               std::uint64_t seed);

struct NoiseSpec {
  double alpha = 0.25;
  VectorXd kappa;
  double m_y = 1.0;

  // Throws UsageError unless alpha in (0, 1], m_y > 0 and all kappa >= 0.
  void validate() const;
  int channels() const { return static_cast<int>(kappa.size()); }
};

struct Horizon {
  double reach_time = 0.0;
  double hold_time = 0.0;
  double dt_integrate = 0.0;
  double dt_control = 0.0;

  void validate() const;

  double end_time() const { return reach_time + hold_time; }
  // Integration steps per control bin; throws ConfigurationError when
  // dt_control is not a whole multiple of dt_integrate (to 1 part in 1e9).
  int steps_per_bin() const;
  // Bin counts; reach and hold must each be whole numbers of control bins.
  int reach_bins() const;
  int hold_bins() const;
  int total_bins() const { return reach_bins() + hold_bins(); }
  int total_steps() const { return total_bins() * steps_per_bin(); }
};

struct TargetSpec {
  std::function<VectorXd(double)> target;
  VectorXd tolerance;

  static TargetSpec constant(const VectorXd& z, double tolerance);
  VectorXd at(double t) const { return target(t); }
};

// Three-point measure mu delta_{+M} + nu delta_{-M} + (1 - mu - nu) delta_0
// per channel and control bin.
class MeasureSchedule {
 public:
  MeasureSchedule() = default;
  MeasureSchedule(MatrixXd weights_pos, MatrixXd weights_neg, double bin_width);

  static MeasureSchedule zeros(int channels, int bins, double bin_width);
  // mu = max(w, 0), nu = max(-w, 0) with w clamped to [-1, 1].
  static MeasureSchedule from_signed(const MatrixXd& w, double bin_width);

  int channels() const { return static_cast<int>(mu_.rows()); }
  int bins() const { return static_cast<int>(mu_.cols()); }
  double bin_width() const { return bin_width_; }
  double t_start(int bin) const { return bin * bin_width_; }

  double mu(int channel, int bin) const { return mu_(channel, bin); }
  double nu(int channel, int bin) const { return nu_(channel, bin); }
  const MatrixXd& weights_pos() const { return mu_; }
  const MatrixXd& weights_neg() const { return nu_; }

  // mu - nu, the signed weight of each cell.
  MatrixXd signed_weights() const { return mu_ - nu_; }

 private:
  MatrixXd mu_;
  MatrixXd nu_;
  double bin_width_ = 0.0;
};

// (mu - nu) * M_Y for one channel and bin.
double mean_control(const MeasureSchedule& schedule, const NoiseSpec& noise,
                    int channel, int bin);

enum class ViolationKind { kWeightOutOfRange, kSumExceedsOne, kComplementarity };

struct ScheduleViolation {
  ViolationKind kind;
  int channel;
  int bin;
  std::string message;
};

std::vector<ScheduleViolation> validate_schedule(const MeasureSchedule& schedule,
                                                 double tolerance = 1e-12);

// CSV: header `bin,t_start,channel,mu,nu`, times with 9 significant digits.
void write_schedule_csv(std::ostream& out, const MeasureSchedule& schedule);
MeasureSchedule read_schedule_csv(std::istream& in, double bin_width);

}  // namespace ycontrol
