#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "twbsim/errors.hpp"
#include "twbsim/experiment.hpp"
#include "twbsim/photonstats.hpp"

using namespace twbsim;
using namespace twbsim::experiment;

namespace {

sipm::SiPMConfig ideal_detector(double pde) {
  sipm::SiPMConfig det;
  det.pde = pde;
  det.n_cells = 1 << 20;
  det.dark_rate = 0.0;
  det.p_crosstalk = 0.0;
  det.p_afterpulse = 0.0;
  det.baseline_noise_sigma = 0.0;
  return det;
}

/// Ideal chain: full-pulse boxcar, no noise anywhere.
ExperimentConfig ideal_config(double pde, double source_mean, int n_shots) {
  ExperimentConfig cfg;
  cfg.scan_means = {source_mean};
  cfg.modes = 100.0;
  cfg.det_signal = ideal_detector(pde);
  cfg.det_idler = ideal_detector(pde);
  cfg.kernel = {1.0, 15.0, 1.0};
  cfg.window = {-100.0, 500.0};
  cfg.chains = {daq::ChainConfig{
      daq::BoxcarConfig{cfg.kernel.peak_time(), 60.0}}};
  cfg.n_shots = n_shots;
  cfg.master_seed = 2024;
  return cfg;
}

ExperimentConfig realistic_config(double source_mean, int n_shots) {
  ExperimentConfig cfg;
  cfg.scan_means = {source_mean};
  cfg.modes = 100.0;
  cfg.kernel = {1.0, 15.0, 1.0};
  cfg.window = {-100.0, 500.0};
  const double peak = cfg.kernel.peak_time();
  daq::DigitizerConfig d50;
  d50.gate_center = peak;
  cfg.chains = {daq::ChainConfig{daq::BoxcarConfig{peak, 10.0}},
                daq::ChainConfig{d50}};
  cfg.n_shots = n_shots;
  cfg.master_seed = 77;
  return cfg;
}

}  // namespace

TEST_CASE("shot tables are reproducible and thread-count independent") {
  ExperimentConfig cfg = realistic_config(5.0, 600);
  cfg.threads = 1;
  const auto serial = run_point(cfg, 0);
  const auto serial_again = run_point(cfg, 0);
  CHECK(serial.counts == serial_again.counts);
  cfg.threads = 4;
  const auto parallel = run_point(cfg, 0);
  CHECK(serial.counts == parallel.counts);
}

TEST_CASE("debug shots reproduce the table bit for bit") {
  ExperimentConfig cfg = realistic_config(5.0, 300);
  const auto table = run_point(cfg, 0);
  for (int shot : {0, 7, 123, 299}) {
    const auto detail = debug_shot(cfg, 0, shot);
    for (int c = 0; c < table.n_chains; ++c)
      for (int arm = 0; arm < 2; ++arm)
        CHECK(detail.m[static_cast<std::size_t>(c)][static_cast<std::size_t>(arm)] ==
              static_cast<int>(table.at(shot, c, arm)));
    for (const auto& events : detail.events)
      for (const auto& e : events.events) CHECK(cfg.window.contains(e.time));
  }
}

TEST_CASE("ideal chain attains the sub-shot-noise limit") {
  ExperimentConfig cfg = ideal_config(0.2, 12.0, 20000);
  const auto result = run_scan(cfg);
  REQUIRE(result.points.size() == 1);
  const auto& row = result.points[0].rows[0];
  REQUIRE(row.r_defined);
  INFO("R=", row.r, " err=", row.r_err);
  CHECK(std::fabs(row.r - 0.8) < 3.0 * row.r_err);
  // theory overlay built from measured quantities agrees with the data
  REQUIRE(row.theory_defined);
  CHECK(std::fabs(row.r - row.r_theory) < 3.0 * row.r_err);
  // eta recovered from the best chain matches the configured pde within 5%
  REQUIRE(result.points[0].eta_defined);
  CHECK(result.points[0].eta_hat ==
        doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("zero-intensity scan points are flagged, not fatal") {
  ExperimentConfig cfg = ideal_config(0.3, 6.0, 500);
  cfg.scan_means = {0.0, 6.0};
  const auto result = run_scan(cfg);
  REQUIRE(result.points.size() == 2);
  const auto& dead = result.points[0].rows[0];
  CHECK_FALSE(dead.r_defined);
  CHECK(dead.flag.find("undefined_nrf") != std::string::npos);
  CHECK(result.points[1].rows[0].r_defined);
}

TEST_CASE("scan rows come out ordered by measured mean") {
  ExperimentConfig cfg = ideal_config(0.4, 3.0, 500);
  cfg.scan_means = {9.0, 3.0, 6.0};  // intentionally unsorted
  const auto rows = run_scan(cfg).sorted_rows();
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].mean_m1 <= rows[1].mean_m1);
  CHECK(rows[1].mean_m1 <= rows[2].mean_m1);
}

TEST_CASE("bootstrap replicates resolve chain differences") {
  ExperimentConfig cfg = realistic_config(6.3, 20000);
  const auto table = run_point(cfg, 0);
  const auto reps = nrf_replicates(table, 100, 555);
  REQUIRE(reps.size() == 2);
  REQUIRE(reps[0].size() == 100);
  for (const auto& chain_reps : reps)
    for (double r : chain_reps) CHECK(std::isfinite(r));
  // replicate spread is a sane standard error (1e-3..1e-2 at 2e4 shots)
  double mean = std::accumulate(reps[0].begin(), reps[0].end(), 0.0) / 100.0;
  double ss = 0.0;
  for (double r : reps[0]) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / 99.0);
  CHECK(sd > 1e-4);
  CHECK(sd < 0.05);
}

TEST_CASE("conditioning on a perfect chain prepares Fock states") {
  ExperimentConfig cfg = ideal_config(1.0, 3.0, 4000);
  const auto table = run_point(cfg, 0);
  const auto res = condition_on(table, 0, 0, 3, 1, std::nullopt, 50, 42);
  CHECK(res.n_selected > 100);
  CHECK(res.mean == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(res.fano == 0.0);
  CHECK(res.histogram[3] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conditioning with too few matching shots is an error") {
  ExperimentConfig cfg = ideal_config(0.5, 2.0, 500);
  const auto table = run_point(cfg, 0);
  CHECK_THROWS_AS(condition_on(table, 0, 0, 99, 1, std::nullopt, 50, 42),
                  InsufficientData);
}

TEST_CASE("conditional theory overlays") {
  // eta = 0.109, mu = 2000, detected mean 2.52: the printed-anchor regime
  ExperimentConfig cfg = ideal_config(0.109, 2.52 / 0.109, 200000);
  cfg.modes = 2000.0;
  const auto table = run_point(cfg, 0);

  ConditionalTheoryInputs theory;
  theory.source = {2.52 / 0.109, 2000.0};
  theory.det = {0.109, 0.109};
  theory.mean_m2 = 2.52;
  theory.eta = 0.109;

  const auto res = condition_on(table, 0, 0, 5, 1, theory, 100, 99);
  REQUIRE(res.theory_defined);
  CHECK(res.theory_fano ==
        doctest::Approx(0.9796339876079495).epsilon(1e-12));
  INFO("mean=", res.mean, " n=", res.n_selected);
  // MC mean against the exact posterior mean, 3 sigma of the subsample
  const double sd_mean =
      std::sqrt(res.fano * res.mean / static_cast<double>(res.n_selected));
  CHECK(std::fabs(res.mean - 2.79310069312669) < 3.0 * sd_mean);
  CHECK(res.fano_err > 0.0);
  CHECK(res.fidelity > 0.99);
  // histogram and theory pmf are both normalized
  double h = 0.0, t = 0.0;
  for (double p : res.histogram) h += p;
  for (double p : res.theory_pmf) t += p;
  CHECK(h == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(t == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("reconstructed statistics and fidelity") {
  SUBCASE("identical distributions have unit fidelity") {
    std::vector<int> sample{0, 1, 1, 2};
    auto [hist, fid] = reconstruct_statistics(
        sample, std::vector<double>{0.25, 0.5, 0.25});
    CHECK(fid == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hist[1] == 0.5);
  }
  SUBCASE("disjoint supports have zero fidelity") {
    std::vector<int> sample{0, 0};
    auto [hist, fid] =
        reconstruct_statistics(sample, std::vector<double>{0.0, 1.0});
    CHECK(fid == 0.0);
  }
  SUBCASE("a sample from the theory pmf approaches unit fidelity") {
    auto rng = RandomStream(31337);
    const std::vector<double> pmf{0.1, 0.3, 0.35, 0.15, 0.08, 0.02};
    std::vector<int> sample(100000);
    for (auto& v : sample) {
      double u = rng.uniform(), cum = 0.0;
      int m = 0;
      for (std::size_t i = 0; i < pmf.size(); ++i) {
        cum += pmf[i];
        if (u < cum) {
          m = static_cast<int>(i);
          break;
        }
      }
      v = m;
    }
    auto [hist, fid] = reconstruct_statistics(sample, pmf);
    CHECK(fid > 0.999);
  }
  SUBCASE("empty samples are rejected") {
    CHECK_THROWS_AS(
        reconstruct_statistics(std::vector<int>{}, std::vector<double>{1.0}),
        InsufficientData);
  }
}

TEST_CASE("generic bootstrap") {
  auto mean_stat = [](std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  };
  SUBCASE("constant data has zero error") {
    std::vector<double> data(500, 3.25);
    auto rng = RandomStream(1);
    CHECK(bootstrap(mean_stat, data, 100, rng) == 0.0);
  }
  SUBCASE("CLT scale for the mean of unit-variance data") {
    auto rng = RandomStream(2);
    std::vector<double> data(10000);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : data) v = normal(rng);
    auto boot_rng = RandomStream(3);
    const double se = bootstrap(mean_stat, data, 200, boot_rng);
    CHECK(se == doctest::Approx(0.01).epsilon(0.2));
  }
  SUBCASE("doubling the data doubles the error of the mean") {
    auto rng = RandomStream(4);
    std::vector<double> data(2000), doubled(2000);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i] = normal(rng);
      doubled[i] = 2.0 * data[i];
    }
    auto rng_a = RandomStream(5), rng_b = RandomStream(5);
    const double se = bootstrap(mean_stat, data, 100, rng_a);
    const double se2 = bootstrap(mean_stat, doubled, 100, rng_b);
    CHECK(se2 == doctest::Approx(2.0 * se).epsilon(1e-12));
  }
}

TEST_CASE("digitizer gates order monotonically at every scan point") {
  ExperimentConfig cfg;
  cfg.scan_means = {6.3, 15.0};
  cfg.modes = 100.0;
  cfg.kernel = {1.0, 15.0, 1.0};
  cfg.window = {-100.0, 500.0};
  cfg.det_signal = sipm::SiPMConfig{};  // realistic defaults
  cfg.det_idler = sipm::SiPMConfig{};
  const double peak = cfg.kernel.peak_time();
  daq::DigitizerConfig d50, d100, d350;
  d50.gate_center = peak;
  d50.gate_width = 50.0;
  d100.gate_center = peak;
  d100.gate_width = 100.0;
  d350.gate_center = peak + 150.0;
  d350.gate_width = 350.0;
  cfg.chains = {daq::ChainConfig{d50}, daq::ChainConfig{d100},
                daq::ChainConfig{d350}};
  cfg.n_shots = 20000;
  cfg.master_seed = 31;
  const auto result = run_scan(cfg);
  for (const auto& point : result.points) {
    REQUIRE(point.rows.size() == 3);
    INFO("point ", point.point);
    CHECK(point.rows[0].r < point.rows[1].r);  // 50 < 100
    CHECK(point.rows[1].r < point.rows[2].r);  // 100 < 350
  }
}

TEST_CASE("event-cap violations abort the run cleanly") {
  ExperimentConfig cfg = realistic_config(8.0, 200);
  cfg.det_signal.dark_rate = 1e16;  // ~6e9 dark events per window
  cfg.threads = 4;
  CHECK_THROWS_AS(run_point(cfg, 0), CascadeOverflow);
}

TEST_CASE("experiment config validation") {
  ExperimentConfig cfg = ideal_config(0.5, 2.0, 500);
  SUBCASE("empty scan") {
    cfg.scan_means.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("too few shots") {
    cfg.n_shots = 50;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("no chains") {
    cfg.chains.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SUBCASE("gate outside window") {
    cfg.chains = {daq::ChainConfig{daq::BoxcarConfig{490.0, 50.0}}};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}
