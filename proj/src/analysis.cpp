#include "twbsim/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <string>
#include <string_view>

#include "twbsim/errors.hpp"
#include "twbsim/photonstats.hpp"
#include "twbsim/random.hpp"

namespace twbsim::analysis {

namespace {

std::int64_t parse_count(std::string_view field, long line, const char* name) {
  std::int64_t value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end)
    throw DataError("line " + std::to_string(line) + ": field '" +
                    std::string(name) + "' is not an integer: '" +
                    std::string(field) + "'");
  if (value < 0)
    throw DataError("line " + std::to_string(line) + ": field '" +
                    std::string(name) + "' must be >= 0");
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<ShotRecord> parse_shot_csv(std::istream& in) {
  std::vector<ShotRecord> records;
  std::string line;
  long line_no = 0;

  if (!std::getline(in, line))
    throw DataError("empty file: expected header 'shot,m1,m2'");
  ++line_no;
  if (trim(line) != "shot,m1,m2")
    throw DataError("line 1: expected header 'shot,m1,m2', got '" + line + "'");

  std::map<std::int64_t, long> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const std::size_t c1 = row.find(',');
    const std::size_t c2 = c1 == std::string_view::npos
                               ? std::string_view::npos
                               : row.find(',', c1 + 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos ||
        row.find(',', c2 + 1) != std::string_view::npos)
      throw DataError("line " + std::to_string(line_no) +
                      ": expected exactly 3 comma-separated fields");
    ShotRecord rec;
    rec.shot = parse_count(trim(row.substr(0, c1)), line_no, "shot");
    rec.m1 = static_cast<int>(
        parse_count(trim(row.substr(c1 + 1, c2 - c1 - 1)), line_no, "m1"));
    rec.m2 = static_cast<int>(parse_count(trim(row.substr(c2 + 1)), line_no, "m2"));
    auto [it, inserted] = seen.emplace(rec.shot, line_no);
    if (!inserted)
      throw DataError("line " + std::to_string(line_no) + ": duplicate shot id " +
                      std::to_string(rec.shot) + " (first seen on line " +
                      std::to_string(it->second) + ")");
    records.push_back(rec);
  }
  return records;
}

AnalysisResult analyze_shots(std::span<const ShotRecord> shots, int min_count,
                             int n_resamples, std::uint64_t seed) {
  if (shots.size() < 2)
    throw InsufficientData("analysis needs at least 2 shots, got " +
                           std::to_string(shots.size()));

  AnalysisResult out;
  out.n_shots = static_cast<std::int64_t>(shots.size());

  std::vector<std::pair<int, int>> pairs;
  std::vector<int> arm1, arm2;
  pairs.reserve(shots.size());
  arm1.reserve(shots.size());
  arm2.reserve(shots.size());
  for (const auto& rec : shots) {
    pairs.emplace_back(rec.m1, rec.m2);
    arm1.push_back(rec.m1);
    arm2.push_back(rec.m2);
  }

  auto nrf_rng = substream(seed, {streams::kBootstrap, 0});
  const auto nrf = photonstats::empirical_nrf(pairs, nrf_rng, n_resamples);
  out.r = nrf.value;
  out.r_err = nrf.std_error;
  try {
    out.eta_hat = photonstats::estimate_eta_from_nrf(out.r);
  } catch (const Error&) {
    out.eta_hat.reset();
  }

  auto arm_stats = [](std::span<const int> counts) {
    ArmStats stats;
    const auto summary = photonstats::fano_factor(counts);
    stats.mean = summary.mean;
    stats.variance = summary.variance;
    stats.fano = summary.fano;
    try {
      stats.mu_hat.emplace(photonstats::estimate_modes(summary));
    } catch (const Error&) {
    }
    return stats;
  };
  out.arm1 = arm_stats(arm1);
  out.arm2 = arm_stats(arm2);

  // Conditional summary for every m1 value with enough statistics.
  std::map<int, std::vector<int>> by_m1;
  for (const auto& rec : shots) by_m1[rec.m1].push_back(rec.m2);
  for (const auto& [m1, values] : by_m1) {
    if (static_cast<int>(values.size()) < std::max(min_count, 2)) continue;
    ConditionalRow row;
    row.m1 = m1;
    row.n_selected = static_cast<std::int64_t>(values.size());
    const auto summary = photonstats::fano_factor(values);
    row.mean = summary.mean;
    row.fano = summary.fano;

    // Whole-shot bootstrap, selection re-run per replicate. Stream layout
    // mirrors the condition command so exported data re-analyzes to the
    // same errors under the same seed.
    const std::size_t n = shots.size();
    const std::uint64_t row_seed = derive_seed(
        seed, {streams::kBootstrap, 1, static_cast<std::uint64_t>(m1)});
    std::vector<double> reps;
    reps.reserve(static_cast<std::size_t>(n_resamples));
    for (int b = 0; b < n_resamples; ++b) {
      auto rng = substream(row_seed, {streams::kBootstrap,
                                      static_cast<std::uint64_t>(b)});
      double sum = 0.0, sum2 = 0.0;
      std::int64_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = static_cast<std::size_t>(
            (static_cast<unsigned __int128>(rng()) * n) >> 64);
        if (shots[j].m1 != m1) continue;
        const double v = shots[j].m2;
        sum += v;
        sum2 += v * v;
        ++count;
      }
      if (count < 2 || sum <= 0.0) continue;
      const double cc = static_cast<double>(count);
      const double var = (sum2 - sum * sum / cc) / (cc - 1.0);
      reps.push_back(var / (sum / cc));
    }
    if (reps.size() >= 2) {
      double mean = 0.0;
      for (double r : reps) mean += r;
      mean /= static_cast<double>(reps.size());
      double ss = 0.0;
      for (double r : reps) ss += (r - mean) * (r - mean);
      row.fano_err = std::sqrt(ss / (static_cast<double>(reps.size()) - 1.0));
    }
    out.conditional.push_back(std::move(row));
  }
  return out;
}

}  // namespace twbsim::analysis
