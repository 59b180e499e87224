#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "twbsim/random.hpp"

namespace twbsim::photonstats {

/// Multimode thermal twin-beam source: mean photons per pulse and effective
/// number of independent thermal modes. The per-arm photon statistics is
/// negative binomial with Fano factor 1 + mean_photons/modes.
struct TwbSourceParams {
  double mean_photons = 0.0;
  double modes = 1.0;

  void validate() const;
};

/// Arm detection efficiencies.
struct DetectionParams {
  double eta_s = 1.0;
  double eta_i = 1.0;

  void validate() const;
};

/// Generated photon numbers for one shot, one per arm. The twin beam is
/// perfectly correlated at generation: n_s == n_i.
struct PhotonPair {
  int n_s = 0;
  int n_i = 0;
};

/// First two moments of a count sample. `variance` is the unbiased sample
/// variance (divisor count-1). `fano` is empty when the mean is zero.
struct MomentSummary {
  std::int64_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
  std::optional<double> fano;
};

/// Noise reduction factor estimate with a bootstrap standard error.
struct NrfEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t n_shots = 0;
};

/// Inputs of the closed-form conditional Fano factor.
struct ConditionalTheoryParams {
  int m_cond = 0;       ///< conditioning value measured on arm 1
  double mean_m2 = 0.0; ///< mean of arm 2 before conditioning
  double modes = 1.0;   ///< effective mode number
  double eta = 1.0;     ///< common overall detection efficiency

  void validate() const;
};

/// Mean, variance and Fano factor of a pmf over {0, 1, ...}.
struct PmfMoments {
  double mean = 0.0;
  double variance = 0.0;
  double fano = 0.0;
};

/// log P(n) of the multimode thermal (negative binomial) photon-number law
///   P(n) = Gamma(n+mu)/(Gamma(mu) n!) (nbar/mu)^n / (1+nbar/mu)^(n+mu).
/// Computed in log space; exact point masses at mean 0.
double multithermal_log_pmf(double mean, double modes, int n);

/// P(n) of the multimode thermal law.
double multithermal_pmf(double mean, double modes, int n);

/// Smallest N such that the upper tail P(n > N) is below `tail_mass`.
int multithermal_tail_cutoff(double mean, double modes, double tail_mass);

/// One draw from the multimode thermal law, via a Gamma-Poisson mixture
/// (rate ~ Gamma(shape modes, mean mean_photons), then Poisson at that rate).
/// Supports non-integer mode numbers.
int sample_multithermal(const TwbSourceParams& params, RandomStream& rng);

/// One twin-beam shot: a single multithermal draw copied to both arms.
PhotonPair sample_twb_pair(const TwbSourceParams& params, RandomStream& rng);

/// Binomial thinning: m ~ Binomial(n, eta).
int apply_binomial_detection(int n, double eta, RandomStream& rng);

/// Noise reduction factor R = var(m1 - m2) / <m1 + m2> over shots, with
/// unbiased variance and a bootstrap standard error from resampling whole
/// shots. Throws EstimationError when the mean total count is zero.
NrfEstimate empirical_nrf(std::span<const std::pair<int, int>> pairs,
                          RandomStream& rng, int n_resamples = 200);

/// R without the bootstrap (cheap path used inside resampling loops).
double nrf_value(std::span<const std::pair<int, int>> pairs);

/// Closed-form noise reduction factor of a multimode twin beam with real
/// detection:
///   R = 1 - 2 sqrt(eta_s <m_s> eta_i <m_i>) / (<m_s> + <m_i>)
///       + (<m_s> - <m_i>)^2 / (sqrt(mu_s mu_i) (<m_s> + <m_i>)).
/// Attains 1 - eta for balanced arms with equal efficiency.
double theoretical_nrf(double eta_s, double eta_i, double mean_ms,
                       double mean_mi, double mu_s, double mu_i);

/// Sample moments and Fano factor of a count sample.
MomentSummary fano_factor(std::span<const int> sample);

/// Closed-form Fano factor of the conditionally prepared state. Less than 1
/// for m_cond >= 1 and 0 < eta <= 1. Throws DomainError when the internal
/// denominator is not positive (flagged, never clamped).
double conditional_fano_theory(const ConditionalTheoryParams& p);

/// Exact conditional photon-number distribution P(m2 | m1 = m_cond) by direct
/// Bayes summation over the generated photon number n:
///   P(m2 | m_cond) ~ sum_n P(n) Binom(m_cond | n, eta_s) Binom(m2 | n, eta_i).
/// `n_max` must make the truncated prior tail negligible (see
/// multithermal_tail_cutoff; the default targets a tail mass of 1e-12).
/// This is the brute-force oracle for all conditional statistics.
std::vector<double> conditional_pmf_exact(const TwbSourceParams& source,
                                          const DetectionParams& det,
                                          int m_cond, int n_max);

/// Convenience overload choosing n_max from a prior tail mass of 1e-12.
std::vector<double> conditional_pmf_exact(const TwbSourceParams& source,
                                          const DetectionParams& det,
                                          int m_cond);

/// Moments of a pmf over {0, 1, ...}.
PmfMoments pmf_moments(std::span<const double> pmf);

/// Mode-number estimator from the first two moments: mu = mean^2 / (var - mean).
/// Throws EstimationError when the sample is not super-Poissonian.
double estimate_modes(const MomentSummary& summary);

/// Efficiency from the measured noise reduction factor: eta = 1 - R.
double estimate_eta_from_nrf(double r);

}  // namespace twbsim::photonstats
