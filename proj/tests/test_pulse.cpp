#include <doctest.h>

#include "test_util.hpp"

#include <cmath>
#include <algorithm>
#include <sstream>

#include "ycontrol/errors.hpp"
#include "ycontrol/pulse_ensemble.hpp"

using namespace ycontrol;

namespace {

NoiseSpec noise_of(double m_y) {
  NoiseSpec n;
  n.alpha = 0.25;
  n.kappa = VectorXd::Ones(1);
  n.m_y = m_y;
  return n;
}

EnsembleSpec spec_of(int n, double baseline, double bin_width) {
  EnsembleSpec s;
  s.n_exc = n;
  s.n_inh = n;
  s.baseline_rate = baseline;
  s.bin_width = bin_width;
  return s;
}

}  // namespace

TEST_CASE("rates_from_schedule examples") {
  const NoiseSpec noise = noise_of(100.0);
  const EnsembleSpec spec = spec_of(100, 5.0, 1e-3);  // gamma = 1, baseline 0.5 spikes
  MatrixXd w(1, 3);
  w << 0.0, 0.5, -0.25;
  const MeasureSchedule s = MeasureSchedule::from_signed(w, 0.01);
  const PopulationRates r = rates_from_schedule(s, noise, spec);
  REQUIRE(r.exc.cols() == 30);
  for (int b = 0; b < 10; ++b) {
    CHECK(r.exc(0, b) == rel(0.5));
    CHECK(r.inh(0, b) == rel(0.5));
    CHECK(r.exc(0, 10 + b) == rel(50.5));
    CHECK(r.inh(0, 10 + b) == rel(0.5));
  }
  for (int k = 0; k < 3; ++k)
    for (int b = 0; b < 10; ++b)
      CHECK(spec.effective_gamma(noise.m_y) * (r.exc(0, 10 * k + b) - r.inh(0, 10 * k + b)) ==
            rel(mean_control(s, noise, 0, k)).epsilon(1e-12).scale(1.0));

  // 100 neurons cannot fire 100.5 spikes per bin.
  w(0, 1) = 1.0;
  CHECK_THROWS_AS(rates_from_schedule(MeasureSchedule::from_signed(w, 0.01), noise, spec), NumericError);
  CHECK_THROWS_AS(rates_from_schedule(s, noise, spec_of(100, 5.0, 3e-3)), ConfigurationError);
}

TEST_CASE("binomial counts and raster") {
  const EnsembleSpec spec = spec_of(100, 0.0, 1e-3);
  PopulationRates r;
  r.exc = MatrixXd::Constant(1, 4000, 50.0);
  r.inh = MatrixXd::Constant(1, 4000, 50.0);
  MatrixXd exc, inh;
  sample_counts(r, spec, 3, exc, inh);
  const double mean = exc.mean();
  const double sd = std::sqrt((exc.array() - mean).square().sum() / (exc.size() - 1));
  CHECK(std::abs(mean - 50.0) < 3 * 5.0 / std::sqrt(4000.0));
  CHECK(sd == rel(5.0).epsilon(0.05));
  CHECK(std::abs((exc - inh).mean()) < 3 * std::sqrt(50.0) / std::sqrt(4000.0));

  const SpikeRaster raster = sample_raster(r, spec, 3);
  const MatrixXd counts = raster.exc_counts();
  const double rmean = counts.mean();
  const double rsd = std::sqrt((counts.array() - rmean).square().sum() / (counts.size() - 1));
  CHECK(std::abs(rmean - 50.0) < 3 * 5.0 / std::sqrt(4000.0));
  CHECK(rsd == rel(5.0).epsilon(0.05));

  MatrixXd exc2, inh2;
  sample_counts(r, spec, 3, exc2, inh2);
  CHECK(exc == exc2);
  CHECK(inh == inh2);
  CHECK(sample_raster(r, spec, 3).exc_counts() == counts);
  sample_counts(r, spec, 4, exc2, inh2);
  CHECK(exc != exc2);
}

TEST_CASE("all-baseline raster nets to zero on average") {
  PopulationRates r;
  r.exc = MatrixXd::Constant(2, 2000, 2.0);
  r.inh = r.exc;
  MatrixXd exc, inh;
  sample_counts(r, spec_of(100, 20.0, 1e-3), 0, exc, inh);
  const MatrixXd u = control_from_counts(exc, inh, 0.5);
  CHECK(std::abs(u.mean()) < 3 * 0.5 * std::sqrt(2 * 2.0) / std::sqrt(4000.0));
}

TEST_CASE("property: pulse control is unbiased and sharpens as 1/sqrt(n)") {
  const NoiseSpec noise = noise_of(1000.0);
  MatrixXd w(1, 4);
  w << 0.6, -0.3, 0.1, 0.0;
  const MeasureSchedule s = MeasureSchedule::from_signed(w, 0.01);
  double sd_at[2];
  int idx = 0;
  for (int n : {100, 400}) {
    const EnsembleSpec spec = spec_of(n, 5.0, 1e-3);
    const double gamma = spec.effective_gamma(noise.m_y);
    const PopulationRates r = rates_from_schedule(s, noise, spec);
    const int seeds = 100, per_bin = 10;
    MatrixXd sum = MatrixXd::Zero(1, 40), sq = MatrixXd::Zero(1, 40);
    for (int seed = 0; seed < seeds; ++seed) {
      MatrixXd exc, inh;
      sample_counts(r, spec, static_cast<std::uint32_t>(seed), exc, inh);
      const MatrixXd u = control_from_counts(exc, inh, gamma);
      sum += u;
      sq += u.cwiseProduct(u);
    }
    double pooled_var = 0.0;
    for (int k = 0; k < 4; ++k) {
      double avg = 0.0, var = 0.0;
      for (int b = 0; b < per_bin; ++b) {
        const double m = sum(0, k * per_bin + b) / seeds;
        avg += m / per_bin;
        var += (sq(0, k * per_bin + b) - seeds * m * m) / (seeds - 1) / per_bin;
      }
      pooled_var += var / 4;
      const double se = std::sqrt(var / (seeds * per_bin));
      CHECK(std::abs(avg - mean_control(s, noise, 0, k)) <= 3 * se);
    }
    sd_at[idx++] = std::sqrt(pooled_var);
  }
  MESSAGE("control sd n=100 " << sd_at[0] << " n=400 " << sd_at[1]);
  CHECK(sd_at[1] / sd_at[0] == rel(0.5).epsilon(0.1));
}

TEST_CASE("pulse control on the integration grid") {
  const Horizon h{0.01, 0.01, 1e-4, 5e-3};
  MatrixXd values(1, 20);
  for (int b = 0; b < 20; ++b) values(0, b) = b;
  const RealizedControl c = pulse_control(values, h, 1e-3);
  REQUIRE(c.steps() == 200);
  CHECK(c.at(0)(0) == 0.0);
  CHECK(c.at(9)(0) == 0.0);
  CHECK(c.at(10)(0) == 1.0);
  CHECK(c.at(199)(0) == 19.0);
  CHECK_THROWS_AS(pulse_control(values.leftCols(10), h, 1e-3), ConfigurationError);
}

TEST_CASE("raster and rate csv") {
  PopulationRates r;
  r.exc = MatrixXd::Constant(1, 2, 1.0);
  r.inh = MatrixXd::Constant(1, 2, 1.0);
  const SpikeRaster raster = sample_raster(r, spec_of(3, 0.0, 1e-3), 0);
  std::ostringstream out;
  write_raster_csv(out, raster);
  const std::string text = out.str();
  CHECK(text.rfind("bin,channel,neuron,spike\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 2 * 6);
  std::ostringstream rates;
  write_rates_csv(rates, r);
  CHECK(rates.str().rfind("bin,channel,exc_rate,inh_rate\n", 0) == 0);
}
