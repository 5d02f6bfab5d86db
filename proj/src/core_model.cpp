#include "ycontrol/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "ycontrol/csv.hpp"
#include "ycontrol/errors.hpp"
#include "ycontrol/philox.hpp"

namespace ycontrol {

StateBox StateBox::unbounded(int dim) {
  const double inf = std::numeric_limits<double>::infinity();
  return {VectorXd::Constant(dim, -inf), VectorXd::Constant(dim, inf)};
}

bool StateBox::contains(const VectorXd& x) const {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    // Written so that NaN counts as outside.
    if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
  }
  return true;
}

SystemModel::SystemModel(int state_dim, int control_dim, int objective_dim,
                         StateBox box)
    : state_dim_(state_dim),
      control_dim_(control_dim),
      objective_dim_(objective_dim),
      box_(std::move(box)) {
  if (state_dim <= 0 || control_dim <= 0 || objective_dim <= 0)
    throw UsageError("model dimensions must be positive");
  if (box_.lower.size() != state_dim || box_.upper.size() != state_dim)
    throw UsageError("state box dimension does not match state_dim");
}

void SystemModel::controlled_drift(const VectorXd& x, double t,
                                   const VectorXd& lambda, VectorXd& out) const {
  MatrixXd b;
  drift(x, t, out);
  gain(x, t, b);
  out.noalias() += b * lambda;
}

void SystemModel::controlled_drift_jacobian(const VectorXd& x, double t,
                                            const VectorXd& lambda,
                                            MatrixXd& out) const {
  const int n = state_dim_;
  out.resize(n, n);
  VectorXd probe = x;
  VectorXd plus(n), minus(n);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(x[j]));
    probe[j] = x[j] + h;
    controlled_drift(probe, t, lambda, plus);
    probe[j] = x[j] - h;
    controlled_drift(probe, t, lambda, minus);
    probe[j] = x[j];
    out.col(j) = (plus - minus) / (2.0 * h);
  }
}

void SystemModel::objective_jacobian(const VectorXd& x, double t,
                                     MatrixXd& out) const {
  const int n = state_dim_;
  out.resize(objective_dim_, n);
  VectorXd probe = x;
  VectorXd plus(objective_dim_), minus(objective_dim_);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * (1.0 + std::abs(x[j]));
    probe[j] = x[j] + h;
    objective(probe, t, plus);
    probe[j] = x[j] - h;
    objective(probe, t, minus);
    probe[j] = x[j];
    out.col(j) = (plus - minus) / (2.0 * h);
  }
}

VectorXd SystemModel::drift(const VectorXd& x, double t) const {
  VectorXd out(state_dim_);
  drift(x, t, out);
  return out;
}

MatrixXd SystemModel::gain(const VectorXd& x, double t) const {
  MatrixXd out(state_dim_, control_dim_);
  gain(x, t, out);
  return out;
}

VectorXd SystemModel::objective(const VectorXd& x, double t) const {
  VectorXd out(objective_dim_);
  objective(x, t, out);
  return out;
}

FunctionalModel::FunctionalModel(int state_dim, int control_dim,
                                 int objective_dim, VectorFn drift,
                                 MatrixFn gain, VectorFn objective,
                                 StateBox box)
    : SystemModel(state_dim, control_dim, objective_dim, std::move(box)),
      drift_(std::move(drift)),
      gain_(std::move(gain)),
      objective_(std::move(objective)) {}

void FunctionalModel::drift(const VectorXd& x, double t, VectorXd& out) const {
  out = drift_(x, t);
}

void FunctionalModel::gain(const VectorXd& x, double t, MatrixXd& out) const {
  out = gain_(x, t);
}

void FunctionalModel::objective(const VectorXd& x, double t,
                                VectorXd& out) const {
  out = objective_(x, t);
}

namespace {

// dx/dt = p x + q u with an analytic Jacobian.
class ScalarLinearModel final : public SystemModel {
 public:
  ScalarLinearModel(double p, double q, double bound)
      : SystemModel(1, 1, 1,
                    StateBox{VectorXd::Constant(1, -bound),
                             VectorXd::Constant(1, bound)}),
        p_(p),
        q_(q) {}

  void drift(const VectorXd& x, double, VectorXd& out) const override {
    out.resize(1);
    out[0] = p_ * x[0];
  }
  void gain(const VectorXd&, double, MatrixXd& out) const override {
    out.resize(1, 1);
    out(0, 0) = q_;
  }
  void objective(const VectorXd& x, double, VectorXd& out) const override {
    out = x;
  }
  void controlled_drift(const VectorXd& x, double, const VectorXd& lambda,
                        VectorXd& out) const override {
    out.resize(1);
    out[0] = p_ * x[0] + q_ * lambda[0];
  }
  void controlled_drift_jacobian(const VectorXd&, double, const VectorXd&,
                                 MatrixXd& out) const override {
    out.resize(1, 1);
    out(0, 0) = p_;
  }
  void objective_jacobian(const VectorXd&, double,
                          MatrixXd& out) const override {
    out = MatrixXd::Identity(1, 1);
  }

  using SystemModel::drift;
  using SystemModel::gain;
  using SystemModel::objective;

 private:
  double p_;
  double q_;
};

VectorXd sample_box(const StateBox& box, CounterRng& rng) {
  VectorXd x(box.lower.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double lo = std::isfinite(box.lower[i]) ? box.lower[i] : -1e3;
    const double hi = std::isfinite(box.upper[i]) ? box.upper[i] : 1e3;
    x[i] = lo + (hi - lo) * rng.uniform();
  }
  return x;
}

}  // namespace

std::shared_ptr<const SystemModel> make_scalar_linear_model(double p, double q,
                                                            double bound) {
  if (q == 0.0) throw UsageError("scalar linear model needs q != 0");
  return std::make_shared<ScalarLinearModel>(p, q, bound);
}

bool check_model_finite(const SystemModel& model, int samples,
                        std::uint64_t seed) {
  CounterRng rng(seed, 0x6d6f64u);
  for (int s = 0; s < samples; ++s) {
    const VectorXd x = sample_box(model.state_box(), rng);
    if (!model.drift(x, 0.0).allFinite()) return false;
    if (!model.gain(x, 0.0).allFinite()) return false;
  }
  return true;
}

double sampled_lipschitz_ratio(const SystemModel& model, int samples,
                               std::uint64_t seed) {
  CounterRng rng(seed, 0x6c6970u);
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const VectorXd x = sample_box(model.state_box(), rng);
    const VectorXd y = sample_box(model.state_box(), rng);
    const double dx = (x - y).norm();
    if (dx == 0.0) continue;
    const double dphi = (model.objective(x, 0.0) - model.objective(y, 0.0)).norm();
    worst = std::max(worst, dphi / dx);
  }
  return worst;
}

void NoiseSpec::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw UsageError("dispersion index alpha must lie in (0, 1]");
  if (!(m_y > 0.0)) throw UsageError("control bound M_Y must be positive");
  if (kappa.size() == 0) throw UsageError("noise needs at least one channel");
  for (Eigen::Index i = 0; i < kappa.size(); ++i) {
    if (!(kappa[i] >= 0.0)) throw UsageError("noise scales kappa must be >= 0");
  }
}

namespace {

int whole_ratio(double numerator, double denominator, const char* what) {
  const double ratio = numerator / denominator;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
    throw ConfigurationError(std::string(what));
  return static_cast<int>(rounded);
}

}  // namespace

void Horizon::validate() const {
  if (!(dt_integrate > 0.0 && dt_integrate <= dt_control &&
        dt_control <= reach_time))
    throw UsageError("horizon needs 0 < dt_integrate <= dt_control <= reach_time");
  if (!(hold_time >= 0.0)) throw UsageError("hold_time must be >= 0");
}

int Horizon::steps_per_bin() const {
  return whole_ratio(dt_control, dt_integrate,
                     "dt_control is not a whole multiple of dt_integrate");
}

int Horizon::reach_bins() const {
  return whole_ratio(reach_time, dt_control,
                     "reach_time is not a whole number of control bins");
}

int Horizon::hold_bins() const {
  if (hold_time == 0.0) return 0;
  return whole_ratio(hold_time, dt_control,
                     "hold_time is not a whole number of control bins");
}

TargetSpec TargetSpec::constant(const VectorXd& z, double tolerance) {
  return {[z](double) { return z; }, VectorXd::Constant(z.size(), tolerance)};
}

MeasureSchedule::MeasureSchedule(MatrixXd weights_pos, MatrixXd weights_neg,
                                 double bin_width)
    : mu_(std::move(weights_pos)), nu_(std::move(weights_neg)),
      bin_width_(bin_width) {
  if (mu_.rows() != nu_.rows() || mu_.cols() != nu_.cols())
    throw UsageError("mu and nu must have identical shapes");
  if (!(bin_width > 0.0)) throw UsageError("bin width must be positive");
}

MeasureSchedule MeasureSchedule::zeros(int channels, int bins,
                                       double bin_width) {
  return {MatrixXd::Zero(channels, bins), MatrixXd::Zero(channels, bins),
          bin_width};
}

MeasureSchedule MeasureSchedule::from_signed(const MatrixXd& w,
                                             double bin_width) {
  const MatrixXd clamped = w.cwiseMax(-1.0).cwiseMin(1.0);
  return {clamped.cwiseMax(0.0), (-clamped).cwiseMax(0.0), bin_width};
}

double mean_control(const MeasureSchedule& schedule, const NoiseSpec& noise,
                    int channel, int bin) {
  if (channel < 0 || channel >= schedule.channels() || bin < 0 ||
      bin >= schedule.bins())
    throw UsageError("mean_control: channel or bin index out of range");
  return (schedule.mu(channel, bin) - schedule.nu(channel, bin)) * noise.m_y;
}

std::vector<ScheduleViolation> validate_schedule(const MeasureSchedule& schedule,
                                                 double tolerance) {
  std::vector<ScheduleViolation> violations;
  auto report = [&](ViolationKind kind, int i, int k, const std::string& what) {
    std::ostringstream msg;
    msg << what << " at channel " << i << ", bin " << k;
    violations.push_back({kind, i, k, msg.str()});
  };
  for (int k = 0; k < schedule.bins(); ++k) {
    for (int i = 0; i < schedule.channels(); ++i) {
      const double mu = schedule.mu(i, k);
      const double nu = schedule.nu(i, k);
      // At most one violation per cell, the most basic one.
      if (!(mu >= -tolerance && mu <= 1.0 + tolerance && nu >= -tolerance &&
            nu <= 1.0 + tolerance))
        report(ViolationKind::kWeightOutOfRange, i, k, "weight outside [0, 1]");
      else if (mu + nu > 1.0 + tolerance)
        report(ViolationKind::kSumExceedsOne, i, k, "sum exceeds 1");
      else if (mu * nu > tolerance)
        report(ViolationKind::kComplementarity, i, k, "complementarity");
    }
  }
  return violations;
}

void write_schedule_csv(std::ostream& out, const MeasureSchedule& schedule) {
  out << "bin,t_start,channel,mu,nu\n";
  for (int k = 0; k < schedule.bins(); ++k) {
    for (int i = 0; i < schedule.channels(); ++i) {
      out << k << ',' << format_sig(schedule.t_start(k), 9) << ',' << i << ','
          << format_exact(schedule.mu(i, k)) << ','
          << format_exact(schedule.nu(i, k)) << '\n';
    }
  }
}

MeasureSchedule read_schedule_csv(std::istream& in, double bin_width) {
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) !=
          std::vector<std::string>{"bin", "t_start", "channel", "mu", "nu"})
    throw ConfigurationError("schedule CSV: missing or wrong header");
  struct Row {
    int bin, channel;
    double mu, nu;
  };
  std::vector<Row> rows;
  int bins = 0, channels = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5)
      throw ConfigurationError("schedule CSV: expected 5 fields: " + line);
    try {
      Row row{std::stoi(fields[0]), std::stoi(fields[2]), std::stod(fields[3]),
              std::stod(fields[4])};
      if (row.bin < 0 || row.channel < 0)
        throw ConfigurationError("schedule CSV: negative index: " + line);
      bins = std::max(bins, row.bin + 1);
      channels = std::max(channels, row.channel + 1);
      rows.push_back(row);
    } catch (const std::logic_error&) {
      throw ConfigurationError("schedule CSV: malformed row: " + line);
    }
  }
  if (rows.size() != static_cast<std::size_t>(bins) * channels)
    throw ConfigurationError("schedule CSV: rows do not cover every cell");
  MatrixXd mu = MatrixXd::Zero(channels, bins);
  MatrixXd nu = MatrixXd::Zero(channels, bins);
  for (const Row& row : rows) {
    mu(row.channel, row.bin) = row.mu;
    nu(row.channel, row.bin) = row.nu;
  }
  return {std::move(mu), std::move(nu), bin_width};
}

}  // namespace ycontrol
