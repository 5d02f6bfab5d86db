#include "ycontrol/pulse_ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "ycontrol/csv.hpp"
#include "ycontrol/errors.hpp"
#include "ycontrol/philox.hpp"

namespace ycontrol {
namespace {

// Each pulse bin owns 2^24 Philox blocks of its stream.
constexpr int kBlocksPerBinShift = 24;

std::uint32_t population_stream(int channel, int population) {
  return 0x70000000u + static_cast<std::uint32_t>(channel) * 2u +
         static_cast<std::uint32_t>(population);
}

int whole_multiple(double big, double small, const char* what) {
  const double ratio = big / small;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * ratio)
    throw ConfigurationError(what);
  return static_cast<int>(rounded);
}

}  // namespace

void EnsembleSpec::validate() const {
  if (n_exc < 1 || n_inh < 1) throw UsageError("ensembles need at least one neuron");
  if (gamma < 0.0) throw UsageError("gamma must be positive (or 0 for M_Y / n_exc)");
  if (!(baseline_rate >= 0.0)) throw UsageError("baseline rate must be >= 0");
  if (!(bin_width > 0.0)) throw UsageError("pulse bin width must be > 0");
}

PopulationRates rates_from_schedule(const MeasureSchedule& schedule,
                                    const NoiseSpec& noise, const EnsembleSpec& spec) {
  spec.validate();
  const int sub = whole_multiple(schedule.bin_width(), spec.bin_width,
                                 "pulse bin width must divide the control bin");
  const double gamma = spec.effective_gamma(noise.m_y);
  const double base_exc = spec.baseline_count(spec.n_exc);
  const double base_inh = spec.baseline_count(spec.n_inh);
  PopulationRates rates{MatrixXd(schedule.channels(), schedule.bins() * sub),
                        MatrixXd(schedule.channels(), schedule.bins() * sub)};
  for (int i = 0; i < schedule.channels(); ++i) {
    for (int k = 0; k < schedule.bins(); ++k) {
      const double u = mean_control(schedule, noise, i, k);
      const double exc = base_exc + std::max(u, 0.0) / gamma;
      const double inh = base_inh + std::max(-u, 0.0) / gamma;
      if (exc > spec.n_exc * (1.0 + 1e-12) || inh > spec.n_inh * (1.0 + 1e-12))
        throw NumericError("ensemble saturated at channel " + std::to_string(i) +
                           ", bin " + std::to_string(k) +
                           "; increase gamma or the ensemble size");
      rates.exc.block(i, k * sub, 1, sub).setConstant(std::min<double>(exc, spec.n_exc));
      rates.inh.block(i, k * sub, 1, sub).setConstant(std::min<double>(inh, spec.n_inh));
    }
  }
  return rates;
}

MatrixXd SpikeRaster::exc_counts() const {
  if (exc.empty()) return {};
  MatrixXd out(exc.size(), exc.front().cols());
  for (std::size_t i = 0; i < exc.size(); ++i)
    out.row(i) = exc[i].cast<double>().colwise().sum();
  return out;
}

MatrixXd SpikeRaster::inh_counts() const {
  if (inh.empty()) return {};
  MatrixXd out(inh.size(), inh.front().cols());
  for (std::size_t i = 0; i < inh.size(); ++i)
    out.row(i) = inh[i].cast<double>().colwise().sum();
  return out;
}

SpikeRaster sample_raster(const PopulationRates& rates, const EnsembleSpec& spec,
                          std::uint32_t stream) {
  spec.validate();
  const Eigen::Index channels = rates.exc.rows(), bins = rates.exc.cols();
  SpikeRaster raster;
  auto fill = [&](const MatrixXd& rate, int n, int population, auto& out) {
    for (Eigen::Index i = 0; i < channels; ++i) {
      out.emplace_back(n, bins);
      CounterRng rng(spec.seed, stream, population_stream(static_cast<int>(i), population));
      for (Eigen::Index k = 0; k < bins; ++k) {
        const double prob = rate(i, k) / n;
        if (prob > 1.0 + 1e-12) throw NumericError("spike probability exceeds 1");
        rng.seek(static_cast<std::uint64_t>(k) << kBlocksPerBinShift);
        for (int j = 0; j < n; ++j) out.back()(j, k) = rng.uniform() < prob ? 1 : 0;
      }
    }
  };
  fill(rates.exc, spec.n_exc, 0, raster.exc);
  fill(rates.inh, spec.n_inh, 1, raster.inh);
  return raster;
}

void sample_counts(const PopulationRates& rates, const EnsembleSpec& spec,
                   std::uint32_t stream, MatrixXd& exc, MatrixXd& inh) {
  const Eigen::Index channels = rates.exc.rows(), bins = rates.exc.cols();
  auto fill = [&](const MatrixXd& rate, int n, int population, MatrixXd& out) {
    out.resize(channels, bins);
    for (Eigen::Index i = 0; i < channels; ++i) {
      CounterRng rng(spec.seed, stream, population_stream(static_cast<int>(i), population));
      for (Eigen::Index k = 0; k < bins; ++k) {
        const double prob = std::clamp(rate(i, k) / n, 0.0, 1.0);
        rng.seek(static_cast<std::uint64_t>(k) << kBlocksPerBinShift);
        std::binomial_distribution<int> draw(n, prob);
        out(i, k) = draw(rng);
      }
    }
  };
  fill(rates.exc, spec.n_exc, 0, exc);
  fill(rates.inh, spec.n_inh, 1, inh);
}

MatrixXd control_from_counts(const MatrixXd& exc, const MatrixXd& inh, double gamma) {
  return gamma * (exc - inh);
}

MatrixXd control_from_raster(const SpikeRaster& raster, double gamma) {
  return control_from_counts(raster.exc_counts(), raster.inh_counts(), gamma);
}

RealizedControl pulse_control(const MatrixXd& pulse_values, const Horizon& horizon,
                              double pulse_bin_width) {
  const int per_pulse = whole_multiple(pulse_bin_width, horizon.dt_integrate,
                                       "pulse bin width must be a multiple of dt_integrate");
  const int steps = horizon.total_steps();
  if (pulse_values.cols() * per_pulse != steps)
    throw ConfigurationError("pulse train does not cover the horizon");
  MatrixXd levels(pulse_values.rows(), steps);
  for (Eigen::Index k = 0; k < pulse_values.cols(); ++k)
    for (int s = 0; s < per_pulse; ++s) levels.col(k * per_pulse + s) = pulse_values.col(k);
  return {RealizedControl::Mode::kDeterministic, std::move(levels), horizon.dt_integrate};
}

PathControlFn pulse_control_source(PopulationRates rates, EnsembleSpec spec,
                                   double m_y, Horizon horizon) {
  const double gamma = spec.effective_gamma(m_y);
  return [rates = std::move(rates), spec, gamma, horizon](int path, RealizedControl& out) {
    MatrixXd exc, inh;
    sample_counts(rates, spec, static_cast<std::uint32_t>(path), exc, inh);
    out = pulse_control(control_from_counts(exc, inh, gamma), horizon, spec.bin_width);
  };
}

void write_raster_csv(std::ostream& out, const SpikeRaster& raster) {
  out << "bin,channel,neuron,spike\n";
  if (raster.exc.empty()) return;
  const Eigen::Index bins = raster.exc.front().cols();
  for (Eigen::Index k = 0; k < bins; ++k) {
    for (std::size_t i = 0; i < raster.exc.size(); ++i) {
      const auto& e = raster.exc[i];
      const auto& h = raster.inh[i];
      for (Eigen::Index j = 0; j < e.rows(); ++j)
        out << k << ',' << i << ',' << j << ',' << int(e(j, k)) << '\n';
      for (Eigen::Index j = 0; j < h.rows(); ++j)
        out << k << ',' << i << ',' << e.rows() + j << ',' << int(h(j, k)) << '\n';
    }
  }
}

void write_rates_csv(std::ostream& out, const PopulationRates& rates) {
  out << "bin,channel,exc_rate,inh_rate\n";
  for (Eigen::Index k = 0; k < rates.exc.cols(); ++k)
    for (Eigen::Index i = 0; i < rates.exc.rows(); ++i)
      out << k << ',' << i << ',' << format_exact(rates.exc(i, k)) << ','
          << format_exact(rates.inh(i, k)) << '\n';
}

}  // namespace ycontrol
