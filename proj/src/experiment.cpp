#include "twbsim/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "twbsim/errors.hpp"

namespace twbsim::experiment {

using photonstats::TwbSourceParams;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t bounded(std::uint64_t word, std::size_t n) {
  return static_cast<std::size_t>(
      (static_cast<unsigned __int128>(word) * n) >> 64);
}

double sample_sd(const std::vector<double>& values) {
  std::vector<double> finite;
  finite.reserve(values.size());
  for (double v : values)
    if (std::isfinite(v)) finite.push_back(v);
  if (finite.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : finite) mean += v;
  mean /= static_cast<double>(finite.size());
  double ss = 0.0;
  for (double v : finite) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (static_cast<double>(finite.size()) - 1.0));
}

/// Digitizer chains sharing sampling parameters read one physical trace per
/// shot and arm; only the off-line gate differs. group_of[i] is the index of
/// the first chain with the same sampling setup, or -1 for non-digitizers.
std::vector<int> digitizer_groups(const std::vector<daq::ChainConfig>& chains) {
  std::vector<int> group_of(chains.size(), -1);
  for (std::size_t i = 0; i < chains.size(); ++i) {
    const auto* di = std::get_if<daq::DigitizerConfig>(&chains[i]);
    if (!di) continue;
    group_of[i] = static_cast<int>(i);
    for (std::size_t j = 0; j < i; ++j) {
      const auto* dj = std::get_if<daq::DigitizerConfig>(&chains[j]);
      if (dj && dj->sample_rate == di->sample_rate && dj->bits == di->bits &&
          dj->full_scale == di->full_scale &&
          dj->baseline_offset == di->baseline_offset &&
          dj->phase_jitter == di->phase_jitter) {
        group_of[i] = group_of[j];
        break;
      }
    }
  }
  return group_of;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (scan_means.empty()) throw ConfigError("scan must contain at least one point");
  for (double mean : scan_means)
    TwbSourceParams{mean, modes}.validate();
  det_signal.validate();
  det_idler.validate();
  kernel.validate();
  window.validate();
  if (chains.empty()) throw ConfigError("at least one chain is required");
  for (const auto& chain : chains) {
    if (const auto* b = std::get_if<daq::BoxcarConfig>(&chain))
      b->validate(window);
    else if (const auto* d = std::get_if<daq::DigitizerConfig>(&chain))
      d->validate(window);
    else
      std::get<daq::PeakHoldConfig>(chain).validate(window);
  }
  if (n_shots < 100) throw ConfigError("n_shots must be >= 100");
}

std::vector<std::pair<int, int>> ShotTable::chain_pairs(int chain) const {
  std::vector<std::pair<int, int>> pairs(static_cast<std::size_t>(n_shots));
  for (int s = 0; s < n_shots; ++s)
    pairs[static_cast<std::size_t>(s)] = {static_cast<int>(at(s, chain, 0)),
                                          static_cast<int>(at(s, chain, 1))};
  return pairs;
}

std::vector<int> ShotTable::arm_counts(int chain, int arm) const {
  std::vector<int> values(static_cast<std::size_t>(n_shots));
  for (int s = 0; s < n_shots; ++s)
    values[static_cast<std::size_t>(s)] = static_cast<int>(at(s, chain, arm));
  return values;
}

void parallel_shots(int n_shots, int threads,
                    const std::function<void(int)>& fn) {
  int n_workers = threads > 0
                      ? threads
                      : static_cast<int>(std::thread::hardware_concurrency());
  if (n_workers < 1) n_workers = 1;
  n_workers = std::min(n_workers, n_shots);
  if (n_workers <= 1) {
    for (int s = 0; s < n_shots; ++s) fn(s);
    return;
  }

  std::mutex error_mutex;
  std::exception_ptr first_error;
  int first_error_shot = n_shots;

  auto worker = [&](int begin, int end) {
    for (int s = begin; s < end; ++s) {
      try {
        fn(s);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (s < first_error_shot) {
          first_error_shot = s;
          first_error = std::current_exception();
        }
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_workers));
  const int chunk = (n_shots + n_workers - 1) / n_workers;
  for (int w = 0; w < n_workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n_shots, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(worker, begin, end);
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<daq::CalibConstant> chain_calibrations(
    const ExperimentConfig& cfg) {
  std::vector<daq::CalibConstant> calib;
  calib.reserve(cfg.chains.size());
  for (const auto& chain : cfg.chains)
    calib.push_back(daq::calibrate_single_photon(chain, cfg.kernel, cfg.window));
  return calib;
}

namespace {

/// One shot through source, both detectors and every chain. Stream
/// derivations depend only on (seed, point, shot, arm, chain slot), which is
/// what makes the table independent of worker count. When `detail` is given,
/// event lists and raw outputs are captured as well.
void simulate_shot(const ExperimentConfig& cfg, const TwbSourceParams& source,
                   std::uint64_t point_u, int shot,
                   const std::vector<daq::CalibConstant>& calib,
                   const std::vector<int>& group_of, ShotTable* table,
                   ShotDetail* detail) {
  const int n_chains = static_cast<int>(cfg.chains.size());
  const sipm::SiPMConfig* dets[2] = {&cfg.det_signal, &cfg.det_idler};
  const std::uint64_t shot_u = static_cast<std::uint64_t>(shot);

  auto src_rng =
      substream(cfg.master_seed, {streams::kSource, point_u, shot_u});
  const int n_photons = photonstats::sample_multithermal(source, src_rng);
  if (detail) {
    detail->n_photons = n_photons;
    detail->raw.assign(static_cast<std::size_t>(n_chains), {0.0, 0.0});
    detail->m.assign(static_cast<std::size_t>(n_chains), {0, 0});
    detail->traces.assign(static_cast<std::size_t>(n_chains), {});
  }

  for (int arm = 0; arm < 2; ++arm) {
    const std::uint64_t arm_u = static_cast<std::uint64_t>(arm);
    auto det_rng = substream(cfg.master_seed,
                             {streams::kDetector, point_u, shot_u, arm_u});
    const sipm::EventList events = sipm::build_event_list(
        n_photons, *dets[arm], cfg.kernel, cfg.window, det_rng);
    const double noise = dets[arm]->baseline_noise_sigma;

    // One digitized trace per sampling group, reused by every gate.
    std::vector<std::optional<daq::SampleRecord>> traces(
        static_cast<std::size_t>(n_chains));
    for (int c = 0; c < n_chains; ++c) {
      const auto& chain = cfg.chains[static_cast<std::size_t>(c)];
      daq::ChainOutput out;
      if (const auto* dig = std::get_if<daq::DigitizerConfig>(&chain)) {
        const int g = group_of[static_cast<std::size_t>(c)];
        auto& trace = traces[static_cast<std::size_t>(g)];
        if (!trace) {
          auto rng = substream(cfg.master_seed,
                               {streams::kChain, point_u, shot_u, arm_u,
                                static_cast<std::uint64_t>(g)});
          trace = daq::digitize(events, cfg.kernel, *dig, noise, rng);
        }
        out = daq::gated_sum(*trace, *dig);
      } else {
        auto rng = substream(cfg.master_seed,
                             {streams::kChain, point_u, shot_u, arm_u,
                              static_cast<std::uint64_t>(c)});
        out = daq::run_chain(events, cfg.kernel, chain, noise, rng);
      }
      const int m =
          daq::charge_to_photons(out, calib[static_cast<std::size_t>(c)]);
      if (table)
        table->at(shot, c, arm) = static_cast<std::uint32_t>(m);
      if (detail) {
        detail->raw[static_cast<std::size_t>(c)][static_cast<std::size_t>(arm)] =
            out.raw;
        detail->m[static_cast<std::size_t>(c)][static_cast<std::size_t>(arm)] = m;
      }
    }
    if (detail) {
      detail->events[static_cast<std::size_t>(arm)] = events;
      for (int c = 0; c < n_chains; ++c)
        if (group_of[static_cast<std::size_t>(c)] == c &&
            traces[static_cast<std::size_t>(c)])
          detail->traces[static_cast<std::size_t>(c)]
                        [static_cast<std::size_t>(arm)] =
              traces[static_cast<std::size_t>(c)];
    }
  }
}

}  // namespace

ShotTable run_point(const ExperimentConfig& cfg, int point_index) {
  cfg.validate();
  if (point_index < 0 ||
      point_index >= static_cast<int>(cfg.scan_means.size()))
    throw ConfigError("scan point index out of range");

  const auto calib = chain_calibrations(cfg);
  const std::vector<int> group_of = digitizer_groups(cfg.chains);
  const TwbSourceParams source{cfg.scan_means[static_cast<std::size_t>(point_index)],
                               cfg.modes};
  const std::uint64_t point_u = static_cast<std::uint64_t>(point_index);

  ShotTable table;
  table.n_shots = cfg.n_shots;
  table.n_chains = static_cast<int>(cfg.chains.size());
  table.point = point_index;
  table.source_mean = source.mean_photons;
  table.counts.assign(
      static_cast<std::size_t>(cfg.n_shots) * table.n_chains * 2, 0);

  parallel_shots(cfg.n_shots, cfg.threads, [&](int shot) {
    simulate_shot(cfg, source, point_u, shot, calib, group_of, &table, nullptr);
  });
  return table;
}

ShotDetail debug_shot(const ExperimentConfig& cfg, int point_index, int shot) {
  cfg.validate();
  if (point_index < 0 ||
      point_index >= static_cast<int>(cfg.scan_means.size()))
    throw ConfigError("scan point index out of range");
  if (shot < 0 || shot >= cfg.n_shots)
    throw ConfigError("shot index out of range");

  const auto calib = chain_calibrations(cfg);
  const std::vector<int> group_of = digitizer_groups(cfg.chains);
  const TwbSourceParams source{cfg.scan_means[static_cast<std::size_t>(point_index)],
                               cfg.modes};
  ShotDetail detail;
  simulate_shot(cfg, source, static_cast<std::uint64_t>(point_index), shot,
                calib, group_of, nullptr, &detail);
  return detail;
}

std::vector<std::vector<double>> nrf_replicates(const ShotTable& table,
                                                int n_resamples,
                                                std::uint64_t seed) {
  const int n_chains = table.n_chains;
  const std::size_t n = static_cast<std::size_t>(table.n_shots);
  std::vector<std::vector<double>> replicates(
      static_cast<std::size_t>(n_chains));
  for (auto& r : replicates) r.assign(static_cast<std::size_t>(n_resamples), kNaN);

  std::vector<double> sum_d(static_cast<std::size_t>(n_chains));
  std::vector<double> sum_d2(static_cast<std::size_t>(n_chains));
  std::vector<double> sum_tot(static_cast<std::size_t>(n_chains));
  for (int b = 0; b < n_resamples; ++b) {
    auto rng = substream(seed, {streams::kBootstrap,
                                static_cast<std::uint64_t>(b)});
    std::fill(sum_d.begin(), sum_d.end(), 0.0);
    std::fill(sum_d2.begin(), sum_d2.end(), 0.0);
    std::fill(sum_tot.begin(), sum_tot.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const int s = static_cast<int>(bounded(rng(), n));
      for (int c = 0; c < n_chains; ++c) {
        const double m1 = table.at(s, c, 0);
        const double m2 = table.at(s, c, 1);
        const double d = m1 - m2;
        sum_d[static_cast<std::size_t>(c)] += d;
        sum_d2[static_cast<std::size_t>(c)] += d * d;
        sum_tot[static_cast<std::size_t>(c)] += m1 + m2;
      }
    }
    const double nn = static_cast<double>(n);
    for (int c = 0; c < n_chains; ++c) {
      const std::size_t cc = static_cast<std::size_t>(c);
      if (sum_tot[cc] <= 0.0) continue;
      const double var_d = (sum_d2[cc] - sum_d[cc] * sum_d[cc] / nn) / (nn - 1.0);
      replicates[cc][static_cast<std::size_t>(b)] = var_d / (sum_tot[cc] / nn);
    }
  }
  return replicates;
}

namespace {

void append_flag(std::string& flag, const char* reason) {
  if (!flag.empty()) flag += ';';
  flag += reason;
}

}  // namespace

ScanResult run_scan(const ExperimentConfig& cfg) {
  cfg.validate();
  ScanResult result;
  result.points.reserve(cfg.scan_means.size());

  for (int point = 0; point < static_cast<int>(cfg.scan_means.size());
       ++point) {
    const ShotTable table = run_point(cfg, point);
    ScanPointSummary summary;
    summary.point = point;
    summary.source_mean = table.source_mean;

    const int n_chains = table.n_chains;
    const auto replicates = nrf_replicates(
        table, 200,
        derive_seed(cfg.master_seed,
                    {streams::kBootstrap, static_cast<std::uint64_t>(point)}));

    summary.rows.resize(static_cast<std::size_t>(n_chains));
    for (int c = 0; c < n_chains; ++c) {
      ScanRow& row = summary.rows[static_cast<std::size_t>(c)];
      const auto& chain = cfg.chains[static_cast<std::size_t>(c)];
      row.point = point;
      row.chain = daq::chain_label(chain);
      row.kind = daq::chain_kind(chain);
      row.gate_ns = daq::chain_gate_ns(chain);
      row.source_mean = table.source_mean;

      const auto pairs = table.chain_pairs(c);
      double s1 = 0.0, s2 = 0.0;
      for (const auto& [m1, m2] : pairs) {
        s1 += m1;
        s2 += m2;
      }
      row.mean_m1 = s1 / static_cast<double>(table.n_shots);
      row.mean_m2 = s2 / static_cast<double>(table.n_shots);

      try {
        row.r = photonstats::nrf_value(pairs);
        row.r_err = sample_sd(replicates[static_cast<std::size_t>(c)]);
        row.r_defined = true;
      } catch (const Error&) {
        row.r = kNaN;
        row.r_err = kNaN;
        append_flag(row.flag, "undefined_nrf");
      }

      for (int arm = 0; arm < 2; ++arm) {
        double& mu_hat = arm == 0 ? row.mu1_hat : row.mu2_hat;
        try {
          const auto counts = table.arm_counts(c, arm);
          mu_hat = photonstats::estimate_modes(
              photonstats::fano_factor(counts));
        } catch (const Error&) {
          mu_hat = kNaN;
          append_flag(row.flag, arm == 0 ? "mu1_undefined" : "mu2_undefined");
        }
      }
    }

    // Overall efficiency for the theory overlay: a single scalar recovered
    // from the best chain's sub-shot-noise level, the way it is measured.
    // The best chain is the shortest-gate boxcar when one is configured.
    summary.best_chain = -1;
    double best_gate = std::numeric_limits<double>::infinity();
    for (int c = 0; c < n_chains; ++c) {
      const auto& chain = cfg.chains[static_cast<std::size_t>(c)];
      if (daq::chain_kind(chain) == daq::ChainKind::boxcar &&
          summary.rows[static_cast<std::size_t>(c)].r_defined &&
          daq::chain_gate_ns(chain) < best_gate) {
        best_gate = daq::chain_gate_ns(chain);
        summary.best_chain = c;
      }
    }
    if (summary.best_chain < 0) {
      double best_r = std::numeric_limits<double>::infinity();
      for (int c = 0; c < n_chains; ++c) {
        const ScanRow& row = summary.rows[static_cast<std::size_t>(c)];
        if (row.r_defined && row.r < best_r) {
          best_r = row.r;
          summary.best_chain = c;
        }
      }
    }
    if (summary.best_chain >= 0) {
      try {
        summary.eta_hat = photonstats::estimate_eta_from_nrf(
            summary.rows[static_cast<std::size_t>(summary.best_chain)].r);
        summary.eta_defined = true;
      } catch (const Error&) {
        summary.eta_defined = false;
      }
    }

    for (auto& row : summary.rows) {
      if (summary.eta_defined && std::isfinite(row.mu1_hat) &&
          std::isfinite(row.mu2_hat) && row.mean_m1 + row.mean_m2 > 0.0) {
        try {
          row.r_theory = photonstats::theoretical_nrf(
              summary.eta_hat, summary.eta_hat, row.mean_m1, row.mean_m2,
              row.mu1_hat, row.mu2_hat);
          row.theory_defined = true;
        } catch (const Error&) {
          row.r_theory = kNaN;
          append_flag(row.flag, "theory_undefined");
        }
      } else {
        row.r_theory = kNaN;
        append_flag(row.flag, "theory_undefined");
      }
      if (row.flag.empty()) row.flag = "ok";
    }

    result.points.push_back(std::move(summary));
  }
  return result;
}

std::vector<ScanRow> ScanResult::sorted_rows() const {
  std::vector<ScanRow> rows;
  for (const auto& point : points)
    rows.insert(rows.end(), point.rows.begin(), point.rows.end());
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ScanRow& a, const ScanRow& b) {
                     if (a.mean_m1 != b.mean_m1) return a.mean_m1 < b.mean_m1;
                     return a.chain < b.chain;
                   });
  return rows;
}

ConditionalResult condition_on(
    const ShotTable& table, int chain, int conditioning_arm, int m_cond,
    int analysis_arm, const std::optional<ConditionalTheoryInputs>& theory,
    int n_resamples, std::uint64_t seed) {
  if (chain < 0 || chain >= table.n_chains)
    throw ConfigError("conditioning chain index out of range");
  if (conditioning_arm < 0 || conditioning_arm > 1 || analysis_arm < 0 ||
      analysis_arm > 1)
    throw ConfigError("arm index must be 0 or 1");
  if (m_cond < 0) throw DomainError("m_cond must be >= 0");

  ConditionalResult out;
  out.m_cond = m_cond;

  std::vector<int> selected;
  for (int s = 0; s < table.n_shots; ++s)
    if (static_cast<int>(table.at(s, chain, conditioning_arm)) == m_cond)
      selected.push_back(static_cast<int>(table.at(s, chain, analysis_arm)));
  out.n_selected = static_cast<std::int64_t>(selected.size());
  if (out.n_selected < 2)
    throw InsufficientData(
        "conditioning on m = " + std::to_string(m_cond) + " selected " +
        std::to_string(out.n_selected) + " shots; need at least 2");

  const auto moments = photonstats::fano_factor(selected);
  out.mean = moments.mean;
  out.fano = moments.fano.value_or(0.0);

  // Bootstrap over whole shots (the i.i.d. unit), re-running the selection
  // in every replicate so the selected count fluctuates like the data.
  const std::size_t n = static_cast<std::size_t>(table.n_shots);
  std::vector<double> fano_reps;
  fano_reps.reserve(static_cast<std::size_t>(n_resamples));
  for (int b = 0; b < n_resamples; ++b) {
    auto rng = substream(seed, {streams::kBootstrap,
                                static_cast<std::uint64_t>(b)});
    double sum = 0.0, sum2 = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int s = static_cast<int>(bounded(rng(), n));
      if (static_cast<int>(table.at(s, chain, conditioning_arm)) != m_cond)
        continue;
      const double v = table.at(s, chain, analysis_arm);
      sum += v;
      sum2 += v * v;
      ++count;
    }
    if (count < 2 || sum <= 0.0) continue;
    const double cc = static_cast<double>(count);
    const double var = (sum2 - sum * sum / cc) / (cc - 1.0);
    fano_reps.push_back(var / (sum / cc));
  }
  out.fano_err = sample_sd(fano_reps);

  if (theory) {
    try {
      out.theory_pmf = photonstats::conditional_pmf_exact(theory->source,
                                                          theory->det, m_cond);
      photonstats::ConditionalTheoryParams params;
      params.m_cond = m_cond;
      params.mean_m2 = theory->mean_m2;
      params.modes = theory->source.modes;
      params.eta = theory->eta;
      out.theory_fano = photonstats::conditional_fano_theory(params);
      out.theory_defined = true;
    } catch (const Error&) {
      out.theory_pmf.clear();
      out.theory_defined = false;
    }
  }

  auto [histogram, fidelity] = reconstruct_statistics(selected, out.theory_pmf);
  out.histogram = std::move(histogram);
  out.fidelity = out.theory_defined ? fidelity : 0.0;
  return out;
}

std::pair<std::vector<double>, double> reconstruct_statistics(
    std::span<const int> sample, std::span<const double> theory) {
  if (sample.empty())
    throw InsufficientData("cannot reconstruct statistics of an empty sample");
  int max_m = 0;
  for (int v : sample) max_m = std::max(max_m, v);
  std::vector<double> histogram(
      std::max(static_cast<std::size_t>(max_m) + 1, theory.size()), 0.0);
  const double w = 1.0 / static_cast<double>(sample.size());
  for (int v : sample) histogram[static_cast<std::size_t>(v)] += w;

  double bhattacharyya = 0.0;
  for (std::size_t m = 0; m < histogram.size(); ++m) {
    const double q = m < theory.size() ? theory[m] : 0.0;
    bhattacharyya += std::sqrt(histogram[m] * q);
  }
  return {std::move(histogram), bhattacharyya * bhattacharyya};
}

}  // namespace twbsim::experiment
