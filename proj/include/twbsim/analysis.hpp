#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <vector>

namespace twbsim::analysis {

/// One row of an external per-shot count file (CSV `shot,m1,m2`).
struct ShotRecord {
  std::int64_t shot = 0;
  int m1 = 0;
  int m2 = 0;
};

/// Parses a `shot,m1,m2` CSV. Throws DataError with the offending line number
/// on malformed rows, negative counts or duplicate shot ids.
std::vector<ShotRecord> parse_shot_csv(std::istream& in);

struct ArmStats {
  double mean = 0.0;
  double variance = 0.0;
  std::optional<double> fano;
  std::optional<double> mu_hat;
};

struct ConditionalRow {
  int m1 = 0;
  std::int64_t n_selected = 0;
  double mean = 0.0;
  std::optional<double> fano;
  double fano_err = 0.0;
};

/// Estimator suite applied to external data: the noise reduction factor with
/// a bootstrap error, per-arm moments, moment-estimated mode numbers, the
/// efficiency eta = 1 - R, and a conditional summary for every m1 value seen
/// at least min_count times.
struct AnalysisResult {
  std::int64_t n_shots = 0;
  double r = 0.0;
  double r_err = 0.0;
  std::optional<double> eta_hat;
  ArmStats arm1, arm2;
  std::vector<ConditionalRow> conditional;
};

AnalysisResult analyze_shots(std::span<const ShotRecord> shots, int min_count,
                             int n_resamples, std::uint64_t seed);

}  // namespace twbsim::analysis
