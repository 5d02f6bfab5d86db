#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ycontrol/core_model.hpp"
#include "ycontrol/sde_sim.hpp"

namespace ycontrol {

// Excitatory/inhibitory populations driving each control channel. Rates are
// expected spike counts per pulse bin for a whole population; a population
// of n neurons saturates at n.
struct EnsembleSpec {
  int n_exc = 100;
  int n_inh = 100;
  double gamma = 0.0;          // control units per spike; 0 means M_Y / n_exc
  double baseline_rate = 5.0;  // spikes per second per neuron
  double bin_width = 1e-4;     // seconds
  std::uint64_t seed = 1;

  void validate() const;
  double effective_gamma(double m_y) const { return gamma > 0.0 ? gamma : m_y / n_exc; }
  double baseline_count(int population) const {
    return baseline_rate * bin_width * population;
  }
};

// channels x pulse bins.
struct PopulationRates {
  MatrixXd exc;
  MatrixXd inh;
};

// Pulse bins subdivide every control bin of the schedule. exc = baseline +
// max(u, 0)/gamma, inh = baseline + max(-u, 0)/gamma with u the bin's mean
// control. Throws NumericError (saturation) when a rate exceeds its
// population size, and ConfigurationError when bin_width does not divide
// the control bin.
PopulationRates rates_from_schedule(const MeasureSchedule& schedule,
                                    const NoiseSpec& noise, const EnsembleSpec& spec);

struct SpikeRaster {
  // Per channel: neurons x bins, 1 where the neuron fired.
  std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>> exc;
  std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>> inh;

  MatrixXd exc_counts() const;  // channels x bins
  MatrixXd inh_counts() const;
};

// Independent Bernoulli firing with probability rate / n per neuron and
// bin. `stream` selects an independent replicate (e.g. a Monte Carlo path).
SpikeRaster sample_raster(const PopulationRates& rates, const EnsembleSpec& spec,
                          std::uint32_t stream = 0);

// Population counts with the same law as summing sample_raster, drawn
// directly from the binomial distribution.
void sample_counts(const PopulationRates& rates, const EnsembleSpec& spec,
                   std::uint32_t stream, MatrixXd& exc, MatrixXd& inh);

// u = gamma (exc_count - inh_count) per pulse bin (channels x bins).
MatrixXd control_from_counts(const MatrixXd& exc, const MatrixXd& inh,
                             double gamma);
MatrixXd control_from_raster(const SpikeRaster& raster, double gamma);

// Pulse control held over each pulse bin on the integration grid.
RealizedControl pulse_control(const MatrixXd& pulse_values, const Horizon& horizon,
                              double pulse_bin_width);

// Per-path control source for run_ensemble: path p uses replicate stream p.
PathControlFn pulse_control_source(PopulationRates rates, EnsembleSpec spec,
                                   double m_y, Horizon horizon);

// `bin,channel,neuron,spike` (neurons 0..n_exc-1 excitatory, then inhibitory).
void write_raster_csv(std::ostream& out, const SpikeRaster& raster);
// `bin,channel,exc_rate,inh_rate`
void write_rates_csv(std::ostream& out, const PopulationRates& rates);

}  // namespace ycontrol
