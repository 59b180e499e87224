// twbsim command-line front end: scan, condition, analyze, calibrate.
//
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "twbsim/analysis.hpp"
#include "twbsim/config.hpp"
#include "twbsim/errors.hpp"
#include "twbsim/experiment.hpp"
#include "twbsim/photonstats.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace twbsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

/// Fixed-format double for CSV cells; bit-stable across identical runs.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

ordered_json json_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

ordered_json json_or_null(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const fs::path& path, const ordered_json& doc) {
  write_file(path, doc.dump(2) + "\n");
}

/// Command-line overrides shared by the config-driven subcommands.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> shots;
  std::optional<int> threads;
  std::optional<std::string> out_dir;

  void apply(config::RunConfig& cfg) const {
    if (seed) cfg.exp.master_seed = *seed;
    if (shots) cfg.exp.n_shots = *shots;
    if (threads) cfg.exp.threads = *threads;
    if (out_dir) cfg.out_dir = *out_dir;
    cfg.exp.validate();
  }
};

void add_override_options(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--seed", ov.seed, "override the master seed");
  cmd->add_option("--shots", ov.shots, "override the number of shots");
  cmd->add_option("--threads", ov.threads,
                  "worker threads (0 = hardware); results do not depend on it");
  cmd->add_option("--out-dir", ov.out_dir, "override the output directory");
}

/// Debug dumps shared by scan and condition: per-shot event lists and raw
/// chain outputs for the first few shots of one scan point.
void write_debug_dumps(const config::RunConfig& cfg, int point, int n_dump,
                       bool events_dump, bool raw_dump, bool trace_dump,
                       const fs::path& out_dir) {
  if (n_dump <= 0 || (!events_dump && !raw_dump && !trace_dump)) return;
  std::ostringstream events_csv, raw_csv, trace_csv;
  events_csv << "shot,arm,time_ns,weight,origin\n";
  raw_csv << "shot,arm,chain,gate_ns,raw,m\n";
  trace_csv << "shot,arm,chain,sample,t_ns,code\n";
  const int limit = std::min(n_dump, cfg.exp.n_shots);
  for (int shot = 0; shot < limit; ++shot) {
    const auto detail = experiment::debug_shot(cfg.exp, point, shot);
    for (int arm = 0; arm < 2; ++arm) {
      for (const auto& e : detail.events[arm].events)
        events_csv << shot << ',' << arm + 1 << ',' << fmt(e.time) << ','
                   << fmt(e.weight) << ',' << sipm::to_string(e.origin) << '\n';
      for (std::size_t c = 0; c < cfg.exp.chains.size(); ++c) {
        raw_csv << shot << ',' << arm + 1 << ','
                << daq::chain_label(cfg.exp.chains[c]) << ','
                << fmt(daq::chain_gate_ns(cfg.exp.chains[c])) << ','
                << fmt(detail.raw[c][arm]) << ',' << detail.m[c][arm] << '\n';
        const auto& trace = detail.traces[c][arm];
        if (trace_dump && trace) {
          for (std::size_t k = 0; k < trace->codes.size(); ++k)
            trace_csv << shot << ',' << arm + 1 << ','
                      << daq::chain_label(cfg.exp.chains[c]) << ',' << k << ','
                      << fmt(trace->t0 + static_cast<double>(k) * trace->dt)
                      << ',' << trace->codes[k] << '\n';
        }
      }
    }
  }
  if (events_dump) write_file(out_dir / "events.csv", events_csv.str());
  if (raw_dump) write_file(out_dir / "raw.csv", raw_csv.str());
  if (trace_dump) write_file(out_dir / "trace.csv", trace_csv.str());
}

int cmd_scan(const std::string& config_path, const Overrides& ov, int dump_n,
             bool dump_events, bool dump_raw, bool dump_trace) {
  config::RunConfig cfg = config::load_run_config(config_path);
  ov.apply(cfg);

  const auto result = experiment::run_scan(cfg.exp);

  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);

  std::ostringstream csv;
  csv << "point,chain,gate_ns,source_mean,mean_m1,mean_m2,r,r_err,r_theory,"
         "flag\n";
  for (const auto& row : result.sorted_rows())
    csv << row.point << ',' << row.chain << ',' << fmt(row.gate_ns) << ','
        << fmt(row.source_mean) << ',' << fmt(row.mean_m1) << ','
        << fmt(row.mean_m2) << ',' << fmt(row.r) << ',' << fmt(row.r_err)
        << ',' << fmt(row.r_theory) << ',' << row.flag << '\n';
  write_file(out_dir / "scan.csv", csv.str());

  ordered_json points = ordered_json::array();
  for (const auto& point : result.points) {
    ordered_json rows = ordered_json::array();
    for (const auto& row : point.rows)
      rows.push_back(ordered_json{{"chain", row.chain},
                                  {"gate_ns", row.gate_ns},
                                  {"mean_m1", row.mean_m1},
                                  {"mean_m2", row.mean_m2},
                                  {"r", json_or_null(row.r)},
                                  {"r_err", json_or_null(row.r_err)},
                                  {"r_theory", json_or_null(row.r_theory)},
                                  {"mu1_hat", json_or_null(row.mu1_hat)},
                                  {"mu2_hat", json_or_null(row.mu2_hat)},
                                  {"flag", row.flag}});
    points.push_back(ordered_json{
        {"point", point.point},
        {"source_mean", point.source_mean},
        {"eta_hat",
         point.eta_defined ? ordered_json(point.eta_hat) : ordered_json(nullptr)},
        {"best_chain", point.best_chain},
        {"chains", rows}});
  }
  write_json(out_dir / "scan_summary.json",
             ordered_json{{"schema_version", config::kSchemaVersion},
                          {"seed", cfg.exp.master_seed},
                          {"config", config::resolved_config_json(cfg)},
                          {"points", points}});

  write_debug_dumps(cfg, 0, dump_n, dump_events, dump_raw, dump_trace,
                    out_dir);

  std::cout << "wrote " << (out_dir / "scan.csv").string() << " and "
            << (out_dir / "scan_summary.json").string() << "\n";
  return kExitOk;
}

int cmd_condition(const std::string& config_path, const Overrides& ov,
                  std::vector<int> m_conds, bool dump_shots, int dump_n,
                  bool dump_events, bool dump_raw, bool dump_trace) {
  config::RunConfig cfg = config::load_run_config(config_path);
  ov.apply(cfg);
  if (m_conds.empty())
    throw ConfigError("condition: at least one --mcond value is required");
  for (int k : m_conds)
    if (k < 0) throw ConfigError("condition: --mcond must be >= 0");

  const int chain = cfg.conditioning.chain;
  const int cond_arm = cfg.conditioning.arm - 1;
  const int analysis_arm = 1 - cond_arm;
  const int point = cfg.conditioning.scan_index;

  const auto table = experiment::run_point(cfg.exp, point);
  const auto pairs_raw = table.chain_pairs(chain);
  // Orient pairs so that m1 is the conditioning arm, matching the dump.
  std::vector<std::pair<int, int>> pairs(pairs_raw.size());
  for (std::size_t i = 0; i < pairs_raw.size(); ++i)
    pairs[i] = cond_arm == 0
                   ? pairs_raw[i]
                   : std::pair<int, int>{pairs_raw[i].second, pairs_raw[i].first};

  auto nrf_rng = substream(cfg.exp.master_seed, {streams::kBootstrap, 0});
  photonstats::NrfEstimate nrf;
  bool nrf_defined = true;
  try {
    nrf = photonstats::empirical_nrf(pairs, nrf_rng, 200);
  } catch (const Error&) {
    nrf_defined = false;
  }

  // Theory overlays built the measured way: eta from the chain's own R,
  // mode number from the analysis arm's first two moments.
  std::optional<experiment::ConditionalTheoryInputs> theory;
  std::optional<double> mu_hat, eta_hat;
  const auto arm2_counts = table.arm_counts(chain, analysis_arm);
  const auto arm2_moments = photonstats::fano_factor(arm2_counts);
  try {
    mu_hat = photonstats::estimate_modes(arm2_moments);
    if (nrf_defined) eta_hat = photonstats::estimate_eta_from_nrf(nrf.value);
    if (mu_hat && eta_hat && *eta_hat > 0.0) {
      experiment::ConditionalTheoryInputs t;
      t.source.mean_photons = arm2_moments.mean / *eta_hat;
      t.source.modes = *mu_hat;
      t.det.eta_s = *eta_hat;
      t.det.eta_i = *eta_hat;
      t.mean_m2 = arm2_moments.mean;
      t.eta = *eta_hat;
      theory = t;
    }
  } catch (const Error&) {
    // leave the theory columns flagged
  }

  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);

  std::ostringstream cond_csv;
  cond_csv << "m_cond,n_selected,mean,fano,fano_err,theory_fano,flag\n";
  ordered_json results = ordered_json::array();
  bool any_insufficient = false;

  for (int k : m_conds) {
    const std::uint64_t boot_seed = derive_seed(
        cfg.exp.master_seed, {streams::kBootstrap, 1,
                              static_cast<std::uint64_t>(k)});
    try {
      const auto res = experiment::condition_on(table, chain, cond_arm, k,
                                                analysis_arm, theory, 200,
                                                boot_seed);
      cond_csv << k << ',' << res.n_selected << ',' << fmt(res.mean) << ','
               << fmt(res.fano) << ',' << fmt(res.fano_err) << ','
               << (res.theory_defined ? fmt(res.theory_fano) : "nan") << ','
               << (res.theory_defined ? "ok" : "theory_undefined") << '\n';

      std::ostringstream pnd;
      pnd << "m,empirical_p,theory_p\n";
      const std::size_t len =
          std::max(res.histogram.size(), res.theory_pmf.size());
      for (std::size_t m = 0; m < len; ++m) {
        const double p = m < res.histogram.size() ? res.histogram[m] : 0.0;
        const double q = m < res.theory_pmf.size() ? res.theory_pmf[m] : 0.0;
        pnd << m << ',' << fmt(p) << ',' << fmt(q) << '\n';
      }
      write_file(out_dir / ("pnd_" + std::to_string(k) + ".csv"), pnd.str());

      results.push_back(
          ordered_json{{"m_cond", k},
                       {"n_selected", res.n_selected},
                       {"mean", res.mean},
                       {"fano", res.fano},
                       {"fano_err", res.fano_err},
                       {"theory_fano", res.theory_defined
                                           ? ordered_json(res.theory_fano)
                                           : ordered_json(nullptr)},
                       {"fidelity", res.theory_defined
                                        ? ordered_json(res.fidelity)
                                        : ordered_json(nullptr)},
                       {"flag", res.theory_defined ? "ok" : "theory_undefined"}});
    } catch (const InsufficientData& e) {
      any_insufficient = true;
      std::int64_t n_selected = 0;
      for (int s = 0; s < table.n_shots; ++s)
        if (static_cast<int>(table.at(s, chain, cond_arm)) == k) ++n_selected;
      std::cerr << "warning: m_cond=" << k << ": " << e.what() << "\n";
      cond_csv << k << ',' << n_selected << ",nan,nan,nan,nan,"
               << "insufficient_statistics\n";
      results.push_back(ordered_json{{"m_cond", k},
                                     {"n_selected", n_selected},
                                     {"flag", "insufficient_statistics"}});
    }
  }
  write_file(out_dir / "conditional.csv", cond_csv.str());

  write_json(
      out_dir / "condition_summary.json",
      ordered_json{
          {"schema_version", config::kSchemaVersion},
          {"seed", cfg.exp.master_seed},
          {"config", config::resolved_config_json(cfg)},
          {"chain", daq::chain_label(cfg.exp.chains[chain])},
          {"conditioning_arm", cfg.conditioning.arm},
          {"scan_index", point},
          {"r", nrf_defined ? ordered_json(nrf.value) : ordered_json(nullptr)},
          {"r_err",
           nrf_defined ? ordered_json(nrf.std_error) : ordered_json(nullptr)},
          {"eta_hat", json_or_null(eta_hat)},
          {"mu_hat", json_or_null(mu_hat)},
          {"mean_m2", arm2_moments.mean},
          {"fano_m2", json_or_null(arm2_moments.fano)},
          {"conditional", results}});

  if (dump_shots) {
    std::ostringstream shots_csv;
    shots_csv << "shot,m1,m2\n";
    for (std::size_t s = 0; s < pairs.size(); ++s)
      shots_csv << s << ',' << pairs[s].first << ',' << pairs[s].second << '\n';
    write_file(out_dir / "shots.csv", shots_csv.str());
  }
  write_debug_dumps(cfg, point, dump_n, dump_events, dump_raw, dump_trace,
                    out_dir);

  std::cout << "wrote " << (out_dir / "conditional.csv").string() << " and "
            << (out_dir / "condition_summary.json").string() << "\n";
  if (any_insufficient)
    std::cout << "some conditioning values had insufficient statistics "
                 "(see flags)\n";
  return kExitOk;
}

int cmd_analyze(const std::string& csv_path, const std::string& out_dir_opt,
                int min_count, std::uint64_t seed) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open data file '" + csv_path + "'");
  const auto shots = analysis::parse_shot_csv(in);
  const auto result = analysis::analyze_shots(shots, min_count, 200, seed);

  const fs::path out_dir(out_dir_opt);
  fs::create_directories(out_dir);

  auto arm_json = [](const analysis::ArmStats& arm) {
    return ordered_json{{"mean", arm.mean},
                        {"variance", arm.variance},
                        {"fano", json_or_null(arm.fano)},
                        {"mu_hat", json_or_null(arm.mu_hat)}};
  };
  ordered_json conditional = ordered_json::array();
  for (const auto& row : result.conditional)
    conditional.push_back(ordered_json{{"m1", row.m1},
                                       {"n_selected", row.n_selected},
                                       {"mean", row.mean},
                                       {"fano", json_or_null(row.fano)},
                                       {"fano_err", row.fano_err}});

  write_json(out_dir / "analysis.json",
             ordered_json{{"schema_version", config::kSchemaVersion},
                          {"input", csv_path},
                          {"seed", seed},
                          {"min_count", min_count},
                          {"n_shots", result.n_shots},
                          {"r", result.r},
                          {"r_err", result.r_err},
                          {"eta_hat", json_or_null(result.eta_hat)},
                          {"arm1", arm_json(result.arm1)},
                          {"arm2", arm_json(result.arm2)},
                          {"conditional", conditional}});
  std::cout << "wrote " << (out_dir / "analysis.json").string() << "\n";
  return kExitOk;
}

int cmd_calibrate(const std::string& config_path, const Overrides& ov) {
  config::RunConfig cfg = config::load_run_config(config_path);
  ov.apply(cfg);

  const auto calib = experiment::chain_calibrations(cfg.exp);

  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);

  ordered_json chains = ordered_json::array();
  for (std::size_t c = 0; c < cfg.exp.chains.size(); ++c)
    chains.push_back(
        ordered_json{{"chain", daq::chain_label(cfg.exp.chains[c])},
                     {"kind", daq::to_string(daq::chain_kind(cfg.exp.chains[c]))},
                     {"gate_ns", daq::chain_gate_ns(cfg.exp.chains[c])},
                     {"q1", calib[c].q1}});
  write_json(out_dir / "calibration.json",
             ordered_json{
                 {"schema_version", config::kSchemaVersion},
                 {"seed", cfg.exp.master_seed},
                 {"config", config::resolved_config_json(cfg)},
                 {"kernel",
                  ordered_json{
                      {"peak_time_ns", cfg.exp.kernel.peak_time()},
                      {"single_cell_charge",
                       cfg.exp.kernel.single_cell_charge()}}},
                 {"chains", chains}});
  std::cout << "wrote " << (out_dir / "calibration.json").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "twbsim - Monte Carlo simulator of twin-beam correlation measurements "
      "with SiPM detectors and gated acquisition chains"};
  app.require_subcommand(1);

  std::string config_path, csv_path;
  Overrides ov;
  std::vector<int> m_conds;
  bool dump_shots = false, dump_events = false, dump_raw = false;
  bool dump_trace = false;
  int dump_n = 100;
  int min_count = 100;
  std::uint64_t analyze_seed = 1;
  std::string analyze_out = "out";

  auto* scan = app.add_subcommand(
      "scan", "noise reduction factor vs intensity for every chain");
  scan->add_option("config", config_path, "JSON run configuration")->required();
  add_override_options(scan, ov);
  scan->add_flag("--dump-events", dump_events,
                 "write events.csv for the first shots of point 0");
  scan->add_flag("--dump-raw", dump_raw,
                 "write raw.csv for the first shots of point 0");
  scan->add_flag("--dump-trace", dump_trace,
                 "write trace.csv with digitized samples for the first shots");
  scan->add_option("--dump-n", dump_n, "how many shots the dumps cover");

  auto* condition = app.add_subcommand(
      "condition", "conditional state preparation at chosen m_cond values");
  condition->add_option("config", config_path, "JSON run configuration")
      ->required();
  condition->add_option("--mcond", m_conds, "conditioning value (repeatable)")
      ->required();
  add_override_options(condition, ov);
  condition->add_flag("--dump-shots", dump_shots,
                      "write shots.csv (shot,m1,m2) for the conditioning chain");
  condition->add_flag("--dump-events", dump_events,
                      "write events.csv for the first shots");
  condition->add_flag("--dump-raw", dump_raw,
                      "write raw.csv for the first shots");
  condition->add_flag("--dump-trace", dump_trace,
                      "write trace.csv with digitized samples");
  condition->add_option("--dump-n", dump_n, "how many shots the dumps cover");

  auto* analyze = app.add_subcommand(
      "analyze", "estimator suite on an external shot,m1,m2 CSV");
  analyze->add_option("csv", csv_path, "per-shot count file")->required();
  analyze->add_option("--min-count", min_count,
                      "minimum shots per conditional row");
  analyze->add_option("--seed", analyze_seed, "bootstrap seed");
  analyze->add_option("--out-dir", analyze_out, "output directory");

  auto* calibrate = app.add_subcommand(
      "calibrate", "single-cell response of every configured chain");
  calibrate->add_option("config", config_path, "JSON run configuration")
      ->required();
  add_override_options(calibrate, ov);

  CLI11_PARSE(app, argc, argv);

  try {
    if (scan->parsed())
      return cmd_scan(config_path, ov, dump_n, dump_events, dump_raw,
                      dump_trace);
    if (condition->parsed())
      return cmd_condition(config_path, ov, m_conds, dump_shots, dump_n,
                           dump_events, dump_raw, dump_trace);
    if (analyze->parsed())
      return cmd_analyze(csv_path, analyze_out, min_count, analyze_seed);
    if (calibrate->parsed()) return cmd_calibrate(config_path, ov);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
