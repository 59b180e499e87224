#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "twbsim/daq.hpp"
#include "twbsim/photonstats.hpp"
#include "twbsim/random.hpp"
#include "twbsim/sipm.hpp"

namespace twbsim::experiment {

/// Full virtual-experiment description: a pump-intensity scan, two detectors,
/// the pulse model and the acquisition chains under comparison.
struct ExperimentConfig {
  std::vector<double> scan_means;  ///< source mean photons per pulse, per point
  double modes = 100.0;            ///< thermal mode number of the source
  sipm::SiPMConfig det_signal;
  sipm::SiPMConfig det_idler;
  sipm::PulseKernel kernel;
  sipm::Window window{-100.0, 500.0};
  std::vector<daq::ChainConfig> chains;
  int n_shots = 100000;
  std::uint64_t master_seed = 1;
  int threads = 0;  ///< 0 = hardware concurrency

  void validate() const;
};

/// Calibrated photon counts per shot, chain and arm. Reproducible bit-exactly
/// from (config, master_seed) regardless of worker count: every shot draws
/// from streams derived from (seed, point, shot, ...).
struct ShotTable {
  int n_shots = 0;
  int n_chains = 0;
  int point = 0;
  double source_mean = 0.0;
  std::vector<std::uint32_t> counts;  ///< [shot][chain][arm]

  std::uint32_t at(int shot, int chain, int arm) const {
    return counts[(static_cast<std::size_t>(shot) * n_chains + chain) * 2 +
                  arm];
  }
  std::uint32_t& at(int shot, int chain, int arm) {
    return counts[(static_cast<std::size_t>(shot) * n_chains + chain) * 2 +
                  arm];
  }

  std::vector<std::pair<int, int>> chain_pairs(int chain) const;
  std::vector<int> arm_counts(int chain, int arm) const;
};

/// Simulates one scan point end to end (source, detector events, every chain,
/// calibration) and returns the per-shot count table.
ShotTable run_point(const ExperimentConfig& cfg, int point_index);

/// Single-cell calibration constant of every configured chain.
std::vector<daq::CalibConstant> chain_calibrations(const ExperimentConfig& cfg);

/// Full detail of one shot, for trace dumps and debugging. Uses the same
/// stream derivations as run_point, so the counts match the table bit for
/// bit.
struct ShotDetail {
  int n_photons = 0;
  std::array<sipm::EventList, 2> events;
  std::vector<std::array<double, 2>> raw;  ///< per chain, per arm
  std::vector<std::array<int, 2>> m;       ///< per chain, per arm
  /// digitized traces, one per sampling group and arm (empty elsewhere)
  std::vector<std::array<std::optional<daq::SampleRecord>, 2>> traces;
};

ShotDetail debug_shot(const ExperimentConfig& cfg, int point_index, int shot);

/// One row of the scan table: a chain at a scan point.
struct ScanRow {
  int point = 0;
  std::string chain;
  daq::ChainKind kind = daq::ChainKind::boxcar;
  double gate_ns = 0.0;
  double source_mean = 0.0;
  double mean_m1 = 0.0;
  double mean_m2 = 0.0;
  double r = 0.0;
  double r_err = 0.0;
  double r_theory = 0.0;
  double mu1_hat = 0.0;
  double mu2_hat = 0.0;
  bool r_defined = false;
  bool theory_defined = false;
  std::string flag;  ///< "ok" or semicolon-joined reasons
};

struct ScanPointSummary {
  int point = 0;
  double source_mean = 0.0;
  int best_chain = -1;  ///< index used for the eta estimate
  double eta_hat = 0.0;
  bool eta_defined = false;
  std::vector<ScanRow> rows;  ///< one per chain, config order
};

struct ScanResult {
  std::vector<ScanPointSummary> points;

  /// All rows ordered by measured mean_m1 (the plot abscissa), then label.
  std::vector<ScanRow> sorted_rows() const;
};

/// Full scan: for every point and chain, simulate n_shots, estimate the
/// noise reduction factor with a bootstrap error, and attach the closed-form
/// expectation evaluated from the measured means, the moment-estimated mode
/// numbers and the efficiency recovered from the best chain's R. Estimator
/// failures flag the row, never abort the scan.
ScanResult run_scan(const ExperimentConfig& cfg);

/// Bootstrap replicate NRFs, one row per chain, on shared shot resamples.
/// Shared draws make differences between chains directly resolvable, which is
/// how the chain-ordering significance is assessed. Degenerate replicates
/// (zero total count) are NaN.
std::vector<std::vector<double>> nrf_replicates(const ShotTable& table,
                                                int n_resamples,
                                                std::uint64_t seed);

/// Sources of the theory overlays attached to a conditional measurement.
struct ConditionalTheoryInputs {
  photonstats::TwbSourceParams source;  ///< source-level mean and modes
  photonstats::DetectionParams det;     ///< arm efficiencies for the oracle
  double mean_m2 = 0.0;                 ///< detected arm-2 mean (closed form)
  double eta = 1.0;                     ///< common efficiency (closed form)
};

struct ConditionalResult {
  int m_cond = 0;
  std::int64_t n_selected = 0;
  double mean = 0.0;
  double fano = 0.0;
  double fano_err = 0.0;
  std::vector<double> histogram;   ///< normalized over m2
  std::vector<double> theory_pmf;  ///< exact Bayes posterior, when available
  double theory_fano = 0.0;
  bool theory_defined = false;
  double fidelity = 0.0;  ///< Bhattacharyya fidelity vs theory_pmf
};

/// Post-selects shots with m = m_cond on the conditioning arm and summarizes
/// the other arm: mean, Fano with a whole-shot bootstrap error, normalized
/// histogram, plus theory overlays when inputs are supplied. Throws
/// InsufficientData when fewer than 2 shots satisfy the condition.
ConditionalResult condition_on(
    const ShotTable& table, int chain, int conditioning_arm, int m_cond,
    int analysis_arm, const std::optional<ConditionalTheoryInputs>& theory,
    int n_resamples, std::uint64_t seed);

/// Normalized empirical histogram of a count sample and its fidelity
/// (sum sqrt(p q))^2 against a reference pmf.
std::pair<std::vector<double>, double> reconstruct_statistics(
    std::span<const int> sample, std::span<const double> theory);

/// Bootstrap standard error of a statistic under resampling with replacement.
template <class Statistic>
double bootstrap(Statistic&& statistic, std::span<const double> data,
                 int n_resamples, RandomStream& rng) {
  if (n_resamples < 2) return 0.0;
  const std::size_t n = data.size();
  if (n == 0) return 0.0;
  std::vector<double> resample(n);
  std::vector<double> replicates;
  replicates.reserve(n_resamples);
  for (int b = 0; b < n_resamples; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = static_cast<std::size_t>(
          (static_cast<unsigned __int128>(rng()) * n) >> 64);
      resample[i] = data[j];
    }
    replicates.push_back(statistic(std::span<const double>(resample)));
  }
  double mean = 0.0;
  for (double r : replicates) mean += r;
  mean /= static_cast<double>(replicates.size());
  double ss = 0.0;
  for (double r : replicates) ss += (r - mean) * (r - mean);
  return std::sqrt(ss / (static_cast<double>(replicates.size()) - 1.0));
}

/// Runs fn(shot) for every shot index on the requested number of threads.
/// Results must be written to per-shot slots; aggregation stays outside.
void parallel_shots(int n_shots, int threads,
                    const std::function<void(int)>& fn);

}  // namespace twbsim::experiment
