#include "twbsim/photonstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "twbsim/errors.hpp"

namespace twbsim::photonstats {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double lbinom_pmf(int k, int n, double p) {
  if (k < 0 || k > n) return kNegInf;
  if (p <= 0.0) return k == 0 ? 0.0 : kNegInf;
  if (p >= 1.0) return k == n ? 0.0 : kNegInf;
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) -
         std::lgamma(n - k + 1.0) + k * std::log(p) +
         (n - k) * std::log1p(-p);
}

}  // namespace

void TwbSourceParams::validate() const {
  if (!(mean_photons >= 0.0) || !std::isfinite(mean_photons))
    throw DomainError("source mean_photons must be >= 0, got " +
                      std::to_string(mean_photons));
  if (!(modes >= 1.0) || !std::isfinite(modes))
    throw DomainError("source modes must be >= 1, got " +
                      std::to_string(modes));
}

void DetectionParams::validate() const {
  for (double eta : {eta_s, eta_i})
    if (!(eta >= 0.0 && eta <= 1.0))
      throw DomainError("detection efficiency must lie in [0,1], got " +
                        std::to_string(eta));
}

void ConditionalTheoryParams::validate() const {
  if (m_cond < 0) throw DomainError("m_cond must be >= 0");
  if (!(mean_m2 >= 0.0)) throw DomainError("mean_m2 must be >= 0");
  if (!(modes >= 1.0)) throw DomainError("modes must be >= 1");
  if (!(eta >= 0.0 && eta <= 1.0))
    throw DomainError("eta must lie in [0,1]");
}

double multithermal_log_pmf(double mean, double modes, int n) {
  if (mean < 0.0) throw DomainError("multithermal pmf: negative mean");
  if (modes < 1.0) throw DomainError("multithermal pmf: modes < 1");
  if (n < 0) throw DomainError("multithermal pmf: negative n");
  if (mean == 0.0) return n == 0 ? 0.0 : kNegInf;
  const double ratio = mean / modes;
  return std::lgamma(n + modes) - std::lgamma(modes) - std::lgamma(n + 1.0) +
         n * std::log(ratio) - (n + modes) * std::log1p(ratio);
}

double multithermal_pmf(double mean, double modes, int n) {
  return std::exp(multithermal_log_pmf(mean, modes, n));
}

int multithermal_tail_cutoff(double mean, double modes, double tail_mass) {
  if (mean == 0.0) return 0;
  // Successive pmf ratios p(n+1)/p(n) = (n+modes)/(n+1) * q decrease toward
  // q = mean/(mean+modes), so past the mode the tail beyond N is bounded by
  // p(N+1) / (1 - ratio(N+2)). A ratio bound avoids accumulating the pmf,
  // whose lgamma evaluation is only good to ~1e-12 at large mode numbers.
  const double q = mean / (mean + modes);
  const int hard_cap = 1 << 22;
  for (int n = static_cast<int>(mean); n < hard_cap; ++n) {
    const double ratio = (n + 1.0 + modes) / (n + 2.0) * q;
    if (ratio >= 1.0) continue;
    const double tail_bound =
        multithermal_pmf(mean, modes, n + 1) / (1.0 - ratio);
    if (tail_bound < tail_mass) return n;
  }
  throw DomainError("multithermal tail cutoff did not converge");
}

int sample_multithermal(const TwbSourceParams& params, RandomStream& rng) {
  params.validate();
  if (params.mean_photons == 0.0) return 0;
  std::gamma_distribution<double> gamma(params.modes,
                                        params.mean_photons / params.modes);
  const double rate = gamma(rng);
  if (rate <= 0.0) return 0;
  std::poisson_distribution<int> poisson(rate);
  return poisson(rng);
}

PhotonPair sample_twb_pair(const TwbSourceParams& params, RandomStream& rng) {
  const int n = sample_multithermal(params, rng);
  return PhotonPair{n, n};
}

int apply_binomial_detection(int n, double eta, RandomStream& rng) {
  if (n < 0) throw DomainError("binomial detection: negative photon number");
  if (!(eta >= 0.0 && eta <= 1.0))
    throw DomainError("binomial detection: eta outside [0,1]");
  if (n == 0 || eta == 0.0) return 0;
  if (eta == 1.0) return n;
  std::binomial_distribution<int> binom(n, eta);
  return binom(rng);
}

double nrf_value(std::span<const std::pair<int, int>> pairs) {
  if (pairs.size() < 2)
    throw InsufficientData("NRF needs at least 2 shots, got " +
                           std::to_string(pairs.size()));
  const double n = static_cast<double>(pairs.size());
  double sum_d = 0.0, sum_d2 = 0.0, sum_tot = 0.0;
  for (const auto& [m1, m2] : pairs) {
    const double d = static_cast<double>(m1) - static_cast<double>(m2);
    sum_d += d;
    sum_d2 += d * d;
    sum_tot += static_cast<double>(m1) + static_cast<double>(m2);
  }
  const double mean_tot = sum_tot / n;
  if (mean_tot <= 0.0)
    throw EstimationError("NRF undefined: mean total count is zero");
  const double var_d = (sum_d2 - sum_d * sum_d / n) / (n - 1.0);
  return var_d / mean_tot;
}

NrfEstimate empirical_nrf(std::span<const std::pair<int, int>> pairs,
                          RandomStream& rng, int n_resamples) {
  NrfEstimate est;
  est.value = nrf_value(pairs);
  est.n_shots = static_cast<std::int64_t>(pairs.size());
  if (n_resamples < 2) return est;

  const std::size_t n = pairs.size();
  std::vector<double> replicates;
  replicates.reserve(n_resamples);
  for (int b = 0; b < n_resamples; ++b) {
    double sum_d = 0.0, sum_d2 = 0.0, sum_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      // Lemire bounded draw; avoids modulo bias.
      const std::size_t j = static_cast<std::size_t>(
          (static_cast<unsigned __int128>(rng()) * n) >> 64);
      const auto& [m1, m2] = pairs[j];
      const double d = static_cast<double>(m1) - static_cast<double>(m2);
      sum_d += d;
      sum_d2 += d * d;
      sum_tot += static_cast<double>(m1) + static_cast<double>(m2);
    }
    if (sum_tot <= 0.0) continue;  // degenerate resample, skip
    const double nn = static_cast<double>(n);
    const double var_d = (sum_d2 - sum_d * sum_d / nn) / (nn - 1.0);
    replicates.push_back(var_d / (sum_tot / nn));
  }
  if (replicates.size() >= 2) {
    double mean = 0.0;
    for (double r : replicates) mean += r;
    mean /= static_cast<double>(replicates.size());
    double ss = 0.0;
    for (double r : replicates) ss += (r - mean) * (r - mean);
    est.std_error = std::sqrt(ss / (static_cast<double>(replicates.size()) - 1.0));
  }
  return est;
}

double theoretical_nrf(double eta_s, double eta_i, double mean_ms,
                       double mean_mi, double mu_s, double mu_i) {
  for (double eta : {eta_s, eta_i})
    if (!(eta >= 0.0 && eta <= 1.0))
      throw DomainError("theoretical NRF: efficiency outside [0,1]");
  if (mean_ms < 0.0 || mean_mi < 0.0)
    throw DomainError("theoretical NRF: negative mean");
  if (mu_s < 1.0 || mu_i < 1.0)
    throw DomainError("theoretical NRF: modes < 1");
  const double total = mean_ms + mean_mi;
  if (total <= 0.0)
    throw DomainError("theoretical NRF: zero total mean");
  const double cross = std::sqrt(eta_s * mean_ms * eta_i * mean_mi);
  const double imbalance = (mean_ms - mean_mi) * (mean_ms - mean_mi);
  return 1.0 - 2.0 * cross / total +
         imbalance / (std::sqrt(mu_s * mu_i) * total);
}

MomentSummary fano_factor(std::span<const int> sample) {
  if (sample.size() < 2)
    throw InsufficientData("moment summary needs at least 2 values");
  MomentSummary out;
  out.count = static_cast<std::int64_t>(sample.size());
  const double n = static_cast<double>(sample.size());
  double sum = 0.0, sum2 = 0.0;
  for (int v : sample) {
    sum += v;
    sum2 += static_cast<double>(v) * static_cast<double>(v);
  }
  out.mean = sum / n;
  out.variance = std::max(0.0, (sum2 - sum * sum / n) / (n - 1.0));
  if (out.mean > 0.0) out.fano = out.variance / out.mean;
  return out;
}

double conditional_fano_theory(const ConditionalTheoryParams& p) {
  p.validate();
  if (p.eta == 1.0) return 0.0;  // Fock state: the (1 - eta) prefactor wins
  const double m2 = p.mean_m2;
  const double mu = p.modes;
  const double mc = static_cast<double>(p.m_cond);
  const double denom =
      (mc + mu) * (m2 + p.eta * mu) - p.eta * mu * (m2 + mu);
  if (!(denom > 0.0))
    throw DomainError("conditional Fano theory: nonpositive denominator");
  const double inner =
      1.0 + m2 * (mc + mu) * (m2 + p.eta * mu) / ((m2 + mu) * denom);
  return (1.0 - p.eta) * inner;
}

std::vector<double> conditional_pmf_exact(const TwbSourceParams& source,
                                          const DetectionParams& det,
                                          int m_cond, int n_max) {
  source.validate();
  det.validate();
  if (m_cond < 0) throw DomainError("conditional pmf: m_cond < 0");
  if (n_max < m_cond)
    throw DomainError("conditional pmf: n_max below m_cond");

  // Joint weight of (n, m2) given m1 = m_cond, accumulated over the prior.
  // All factors are assembled in log space and exponentiated per term; the
  // evidence normalizes at the end.
  std::vector<double> posterior(static_cast<std::size_t>(n_max) + 1, 0.0);
  double evidence = 0.0;
  for (int n = m_cond; n <= n_max; ++n) {
    const double lw = multithermal_log_pmf(source.mean_photons, source.modes, n) +
                      lbinom_pmf(m_cond, n, det.eta_s);
    if (lw == kNegInf) continue;
    const double w = std::exp(lw);
    evidence += w;
    for (int m2 = 0; m2 <= n; ++m2) {
      const double lb = lbinom_pmf(m2, n, det.eta_i);
      if (lb == kNegInf) continue;
      posterior[static_cast<std::size_t>(m2)] += w * std::exp(lb);
    }
  }
  if (!(evidence > 1e-300))
    throw EstimationError(
        "conditional pmf: evidence underflow, P(m1 = " +
        std::to_string(m_cond) + ") is numerically zero");
  for (double& p : posterior) p /= evidence;
  // Trim the all-zero tail beyond the largest reachable m2.
  while (posterior.size() > 1 && posterior.back() == 0.0) posterior.pop_back();
  return posterior;
}

std::vector<double> conditional_pmf_exact(const TwbSourceParams& source,
                                          const DetectionParams& det,
                                          int m_cond) {
  const int cutoff =
      multithermal_tail_cutoff(source.mean_photons, source.modes, 1e-12);
  return conditional_pmf_exact(source, det, m_cond,
                               std::max(cutoff, m_cond) + 8);
}

PmfMoments pmf_moments(std::span<const double> pmf) {
  PmfMoments out;
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    m1 += static_cast<double>(i) * pmf[i];
    m2 += static_cast<double>(i) * static_cast<double>(i) * pmf[i];
  }
  out.mean = m1;
  out.variance = m2 - m1 * m1;
  out.fano = m1 > 0.0 ? out.variance / m1 : 0.0;
  return out;
}

double estimate_modes(const MomentSummary& summary) {
  if (!(summary.variance > summary.mean))
    throw EstimationError(
        "mode estimation impossible: sample is not super-Poissonian "
        "(variance <= mean)");
  return summary.mean * summary.mean / (summary.variance - summary.mean);
}

double estimate_eta_from_nrf(double r) {
  if (!(r >= 0.0 && r <= 1.0))
    throw DomainError("eta from NRF: R outside [0,1] violates the model");
  return 1.0 - r;
}

}  // namespace twbsim::photonstats
