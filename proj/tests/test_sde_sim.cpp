#include <doctest.h>

#include "test_util.hpp"

#include <cmath>
#include <sstream>

#include "ycontrol/errors.hpp"
#include "ycontrol/linear_analytic.hpp"
#include "ycontrol/optimizer.hpp"
#include "ycontrol/philox.hpp"
#include "ycontrol/sde_sim.hpp"

using namespace ycontrol;

namespace {

NoiseSpec scalar_noise(double alpha, double kappa, double m_y) {
  NoiseSpec n;
  n.alpha = alpha;
  n.kappa = VectorXd::Constant(1, kappa);
  n.m_y = m_y;
  return n;
}

// Two equal bins, so the horizon can hold one bin of reach and one of hold.
MeasureSchedule one_bin(double mu, double nu, double width) {
  return MeasureSchedule(MatrixXd::Constant(1, 2, mu), MatrixXd::Constant(1, 2, nu), width);
}

}  // namespace

TEST_CASE("realize_schedule examples") {
  const NoiseSpec noise = scalar_noise(0.25, 1.0, 4.0);
  const Horizon h{0.01, 0.01, 1e-3, 0.01};
  RealizedControl r = realize_schedule(one_bin(0.3, 0.0, 0.01), noise, h);
  REQUIRE(r.steps() == 20);
  for (int n = 0; n < 10; ++n) CHECK(r.at(n)(0) == (n < 3 ? 4.0 : 0.0));

  r = realize_schedule(one_bin(0.0, 0.0, 0.01), noise, h);
  CHECK(r.levels().norm() == 0.0);
  r = realize_schedule(one_bin(1.0, 0.0, 0.01), noise, h);
  CHECK(r.window_average(0, 0, 10) == 4.0);

  // Order within the bin is +M, -M, then 0.
  r = realize_schedule(one_bin(0.2, 0.5, 0.01), noise, h);
  const double expect[10] = {4, 4, -4, -4, -4, -4, -4, 0, 0, 0};
  for (int n = 0; n < 10; ++n) CHECK(r.at(n)(0) == expect[n]);

  CHECK_THROWS_AS(realize_schedule(one_bin(0.2, 0.0, 0.01), noise, Horizon{0.01, 0.01, 3e-3, 0.01}),
                  ConfigurationError);
  CHECK_THROWS_AS(realize_schedule(MeasureSchedule::zeros(1, 3, 0.01), noise, h), ConfigurationError);
}

TEST_CASE("property: realized bins track their weights") {
  const NoiseSpec noise = scalar_noise(0.25, 1.0, 7.0);
  const Horizon h{0.3, 0.2, 1e-3, 0.01};
  CounterRng rng(3, 9);
  MatrixXd w(2, h.total_bins());
  for (int k = 0; k < w.cols(); ++k)
    for (int i = 0; i < 2; ++i) w(i, k) = 2 * rng.uniform() - 1;
  const MeasureSchedule s = MeasureSchedule::from_signed(w, h.dt_control);
  NoiseSpec two = noise;
  two.kappa = VectorXd::Ones(2);
  const RealizedControl r = realize_schedule(s, two, h);
  const int spb = h.steps_per_bin();
  for (int i = 0; i < 2; ++i) {
    double cum_target = 0.0, cum_real = 0.0;
    for (int k = 0; k < s.bins(); ++k) {
      const double avg = r.window_average(i, k * spb, spb);
      CHECK(std::abs(avg - mean_control(s, two, i, k)) <= two.m_y * h.dt_integrate / h.dt_control + 1e-12);
      cum_target += mean_control(s, two, i, k) * spb;
      cum_real += avg * spb;
      // Carry rounding keeps the running total within one step per sign.
      CHECK(std::abs(cum_target - cum_real) <= 2 * two.m_y + 1e-9);
      for (int n = 0; n < spb; ++n) {
        const double v = r.at(k * spb + n)(i);
        CHECK((v == 0.0 || std::abs(v) == two.m_y));
      }
    }
  }
}

TEST_CASE("step examples") {
  auto model = make_scalar_linear_model(0.0, 1.0, 1e6);
  const NoiseSpec noise = scalar_noise(0.25, 1.0, 10.0);
  VectorXd x = VectorXd::Constant(1, 0.7), lam = VectorXd::Constant(1, 1.0);
  CHECK(step(*model, noise, x, 0.0, lam, 0.01, VectorXd::Zero(1))(0) == rel(0.71));
  CHECK(step(*model, noise, x, 0.0, lam, 0.01, VectorXd::Ones(1))(0) == rel(0.81));
  CHECK(step(*model, noise, x, 0.0, VectorXd::Zero(1), 0.01, VectorXd::Constant(1, 3.0))(0) == 0.7);

  auto boxed = make_scalar_linear_model(0.0, 1.0, 0.75);
  CHECK_THROWS_AS(step(*boxed, noise, x, 0.0, lam, 0.01, VectorXd::Ones(1)), EscapeError);
}

TEST_CASE("ensemble determinism, thread independence and stored paths") {
  auto model = make_scalar_linear_model(-1.0, 1.0, 1e6);
  const NoiseSpec noise = scalar_noise(0.25, 0.5, 10.0);
  const Horizon h{0.2, 0.1, 1e-3, 0.01};
  MatrixXd w = MatrixXd::Constant(1, h.total_bins(), 0.3);
  const RealizedControl ctl = realize_schedule(MeasureSchedule::from_signed(w, 0.01), noise, h);
  const TargetSpec target = TargetSpec::constant(VectorXd::Constant(1, 0.5), 1e-3);
  EnsembleOptions opt;
  opt.paths = 300;
  opt.seed = 77;
  opt.keep_paths = true;
  const TrajectoryEnsemble a = run_ensemble(*model, noise, h, ctl, target, VectorXd::Zero(1), opt);
  const TrajectoryEnsemble b = run_ensemble(*model, noise, h, ctl, target, VectorXd::Zero(1), opt);
  opt.threads = 4;
  const TrajectoryEnsemble c = run_ensemble(*model, noise, h, ctl, target, VectorXd::Zero(1), opt);
  CHECK(a.mean == b.mean);
  CHECK(a.variance == b.variance);
  CHECK(a.exec_error == b.exec_error);
  CHECK(a.mean == c.mean);
  CHECK(a.variance == c.variance);
  CHECK(a.exec_error == c.exec_error);
  opt.seed = 78;
  const TrajectoryEnsemble d = run_ensemble(*model, noise, h, ctl, target, VectorXd::Zero(1), opt);
  CHECK(a.mean != d.mean);

  REQUIRE(a.paths.size() == 300);
  for (std::size_t t = 0; t < a.times.size(); ++t) {
    double mean = 0.0;
    for (const auto& p : a.paths) mean += p(0, t);
    mean /= 300;
    double var = 0.0;
    for (const auto& p : a.paths) var += (p(0, t) - mean) * (p(0, t) - mean);
    var /= 299;
    CHECK(std::abs(mean - a.mean(0, t)) <= 1e-12 * (1 + std::abs(mean)));
    CHECK(std::abs(var - a.variance(0, t)) <= 1e-12 * (1 + var));
    CHECK(a.variance(0, t) >= 0.0);
  }
  CHECK(a.exec_error >= 0.0);
  CHECK(a.rms_total_error() >= a.rms_error());
}

TEST_CASE("noiseless ensemble is degenerate") {
  auto model = make_scalar_linear_model(-1.0, 1.0, 1e6);
  const NoiseSpec noise = scalar_noise(0.25, 0.0, 10.0);
  const Horizon h{0.2, 0.1, 1e-3, 0.01};
  const RealizedControl ctl = realize_bins(MatrixXd::Constant(1, h.total_bins(), 2.0), h);
  const TargetSpec target = TargetSpec::constant(VectorXd::Constant(1, 1.0), 1e-3);
  EnsembleOptions opt;
  opt.paths = 50;
  const TrajectoryEnsemble e = run_ensemble(*model, noise, h, ctl, target, VectorXd::Zero(1), opt);
  CHECK(e.variance.norm() == 0.0);
  CHECK(e.exec_error == 0.0);
  const MatrixXd x = simulate_noiseless(*model, h, ctl, VectorXd::Zero(1));
  CHECK(std::abs(e.mean(0, e.times.size() - 1) - x(0, x.cols() - 1)) < 1e-14);
  CHECK(e.bias_error > 0.0);
}

TEST_CASE("escape policies") {
  // Alternating +-1 slices: no drift, path spread about 0.39 by the end.
  auto model = make_scalar_linear_model(0.0, 1.0, 0.4);
  const NoiseSpec noise = scalar_noise(0.5, 1.0, 1.0);
  const Horizon h{0.2, 0.1, 1e-3, 0.01};
  const RealizedControl sliced = realize_schedule(
      MeasureSchedule(MatrixXd::Constant(1, h.total_bins(), 0.5), MatrixXd::Constant(1, h.total_bins(), 0.5), 0.01),
      noise, h);
  const TargetSpec target = TargetSpec::constant(VectorXd::Zero(1), 1.0);
  EnsembleOptions opt;
  opt.paths = 64;
  CHECK_THROWS_AS(run_ensemble(*model, noise, h, sliced, target, VectorXd::Zero(1), opt), EscapeError);
  opt.escape = EscapePolicy::kDropAndFlag;
  const TrajectoryEnsemble e = run_ensemble(*model, noise, h, sliced, target, VectorXd::Zero(1), opt);
  CHECK(e.escaped > 0);
  CHECK(e.paths_used + e.escaped == 64);
}

TEST_CASE("linear oracle: ensemble variance within 5 percent") {
  LinearSystem sys;
  sys.p = -1.0;
  sys.q = 1.0;
  sys.x0 = 0.0;
  sys.z0 = 1.0;
  sys.noise = scalar_noise(0.25, 1.0, 10.0);
  sys.horizon = Horizon{1.0, 0.5, 1e-3, 0.05};
  auto model = make_scalar_linear_model(sys.p, sys.q, 1e6);
  const ScalarFn u = reach_then_hold_control(sys);
  const RealizedControl ctl = realize_functions({[&](double t) { return u(t); }}, sys.horizon);
  EnsembleOptions opt;
  opt.paths = 10000;
  opt.seed = 4;
  const TrajectoryEnsemble e = run_ensemble(*model, sys.noise, sys.horizon, ctl,
                                            TargetSpec::constant(VectorXd::Ones(1), 1e-3),
                                            VectorXd::Zero(1), opt);
  const double bp[] = {sys.horizon.reach_time};
  for (double t : {0.5, 1.0, 1.5}) {
    const int idx = static_cast<int>(std::lround(t / sys.horizon.dt_integrate));
    const double exact = variance_trajectory(sys, u, t, bp);
    CHECK(std::abs(e.variance(0, idx) / exact - 1.0) < 0.05);
    CHECK(std::abs(e.mean(0, idx) - mean_trajectory(sys, u, t, bp)) < 3 * e.mean_se(idx)(0) + 1e-3);
  }
}

TEST_CASE("property: schedule mean converges at first order") {
  // Noiseless plant driven by the time-sliced schedule of a smooth control
  // against the same control applied directly.
  auto model = make_scalar_linear_model(-1.0, 1.0, 1e6);
  const NoiseSpec noise = scalar_noise(0.25, 0.0, 10.0);
  auto u = [](double t) { return 6.0 * std::sin(5.0 * t) + 2.0; };
  double errors[3];
  int i = 0;
  for (double dtc : {0.04, 0.02, 0.01}) {
    const Horizon h{0.64, 0.16, 2e-5, dtc};
    MatrixXd w(1, h.total_bins());
    for (int k = 0; k < w.cols(); ++k) w(0, k) = u((k + 0.5) * dtc) / noise.m_y;
    const RealizedControl sliced = realize_schedule(MeasureSchedule::from_signed(w, dtc), noise, h);
    const RealizedControl smooth = realize_functions({u}, h);
    const MatrixXd xs = simulate_noiseless(*model, h, sliced, VectorXd::Zero(1));
    const MatrixXd xr = simulate_noiseless(*model, h, smooth, VectorXd::Zero(1));
    errors[i++] = (xs - xr).cwiseAbs().maxCoeff();
  }
  MESSAGE("sup errors " << errors[0] << " " << errors[1] << " " << errors[2]);
  for (int k = 0; k < 2; ++k) {
    const double order = std::log2(errors[k] / errors[k + 1]);
    CHECK(order > 0.8);
    CHECK(order < 1.3);
  }
}

TEST_CASE("property: hold variance shrinks as M_Y^(2 alpha - 1)") {
  LinearSystem sys;
  sys.p = -1.0;
  sys.q = 1.0;
  sys.x0 = 0.0;
  sys.z0 = 1.0;
  sys.horizon = Horizon{0.5, 0.5, 1e-4, 0.02};
  auto model = make_scalar_linear_model(sys.p, sys.q, 1e6);
  sys.noise = scalar_noise(0.25, 1.0, 5.0);
  // Fixed mean control sampled at bin midpoints, lifted at each bound.
  const ScalarFn u = reach_then_hold_control(sys);
  MatrixXd ub(1, sys.horizon.total_bins());
  for (int k = 0; k < ub.cols(); ++k) ub(0, k) = u((k + 0.5) * sys.horizon.dt_control);
  double var[3];
  int i = 0;
  for (double m : {5.0, 20.0, 80.0}) {
    const NoiseSpec n = scalar_noise(0.25, 1.0, m);
    const MeasureSchedule s = lift_to_schedule(ub, n, sys.horizon.dt_control);
    const RealizedControl ctl = realize_schedule(s, n, sys.horizon);
    EnsembleOptions opt;
    opt.paths = 4000;
    opt.seed = 10;
    var[i++] = run_ensemble(*model, n, sys.horizon, ctl, TargetSpec::constant(VectorXd::Ones(1), 1e-3),
                            VectorXd::Zero(1), opt)
                   .exec_error;
  }
  MESSAGE("hold variance " << var[0] << " " << var[1] << " " << var[2]);
  CHECK(var[0] / var[1] == rel(2.0).epsilon(0.15));
  CHECK(var[1] / var[2] == rel(2.0).epsilon(0.15));
}

TEST_CASE("csv and manifest output") {
  TrajectoryEnsemble e;
  e.times = {0.0, 0.5};
  e.mean = MatrixXd::Constant(1, 2, 1.5);
  e.variance = MatrixXd::Constant(1, 2, 0.25);
  std::ostringstream out;
  write_ensemble_csv(out, e);
  CHECK(out.str().rfind("t,mean_1,var_1\n", 0) == 0);
  std::ostringstream ctl;
  write_control_csv(ctl, RealizedControl(RealizedControl::Mode::kDeterministic, MatrixXd::Ones(2, 3), 0.1));
  CHECK(ctl.str().rfind("t,u_1,u_2\n", 0) == 0);
}
