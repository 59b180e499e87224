// End-to-end tests of the command-line front end: exit codes, file contracts
// and reproducibility, driving the real binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "twbsim/config.hpp"
#include "twbsim/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string err;
};

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path err_file = dir / "stderr.txt";
  const std::string cmd = std::string(TWBSIM_CLI_PATH) + " " + args + " 2> " +
                          err_file.string();
  const int status = std::system(cmd.c_str());
  RunResult res;
  res.exit_code = WEXITSTATUS(status);
  std::ifstream err(err_file);
  std::stringstream ss;
  ss << err.rdbuf();
  res.err = ss.str();
  return res;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "twbsim_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Small ideal-chain configuration; fast and analytically anchored.
json mini_config(const fs::path& out_dir, int shots = 4000) {
  json detector{{"n_cells", 1000000}, {"pde", 0.25},
                {"dark_rate_hz", 0.0}, {"p_crosstalk", 0.0},
                {"p_afterpulse", 0.0}, {"baseline_noise_sigma", 0.0}};
  return json{
      {"schema_version", 1},
      {"seed", 99},
      {"shots", shots},
      {"out_dir", out_dir.string()},
      {"source", {{"mean_photons", {10.0}}, {"modes", 100.0}}},
      {"detectors", {{"signal", detector}, {"idler", detector}}},
      {"chains", json::array({json{{"type", "boxcar"}, {"gate_width_ns", 60.0}},
                              json{{"type", "peak_hold"}}})},
      {"conditioning", {{"arm", 1}, {"chain", 0}, {"scan_index", 0}}}};
}

fs::path write_config(const fs::path& dir, const json& cfg) {
  const fs::path path = dir / "config.json";
  std::ofstream out(path);
  out << cfg.dump(2);
  return path;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("missing config file fails with the config exit code") {
  const auto dir = fresh_dir("missing");
  const auto res = run_cli("scan /nonexistent/config.json", dir);
  CHECK(res.exit_code == 2);
  CHECK(res.err.find("cannot open") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "scan.csv"));
}

TEST_CASE("unknown config keys are rejected with diagnostics") {
  const auto dir = fresh_dir("unknown_key");
  json cfg = mini_config(dir / "out");
  cfg["detectors"]["signal"]["pde_typo"] = 0.3;
  const auto res = run_cli("scan " + write_config(dir, cfg).string(), dir);
  CHECK(res.exit_code == 2);
  CHECK(res.err.find("pde_typo") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "scan.csv"));
}

TEST_CASE("unsupported schema versions are rejected") {
  const auto dir = fresh_dir("schema");
  json cfg = mini_config(dir / "out");
  cfg["schema_version"] = 7;
  const auto res = run_cli("scan " + write_config(dir, cfg).string(), dir);
  CHECK(res.exit_code == 2);
  CHECK(res.err.find("version") != std::string::npos);
}

TEST_CASE("scan writes the table and the audit summary") {
  const auto dir = fresh_dir("scan");
  const auto cfg_path = write_config(dir, mini_config(dir / "out"));
  const auto res = run_cli("scan " + cfg_path.string(), dir);
  REQUIRE(res.exit_code == 0);

  const std::string csv = slurp(dir / "out" / "scan.csv");
  CHECK(csv.rfind("point,chain,gate_ns,source_mean,mean_m1,mean_m2,r,r_err,"
                  "r_theory,flag\n", 0) == 0);
  CHECK(count_lines(csv) == 3);  // header + 2 chains x 1 point

  const json summary = json::parse(slurp(dir / "out" / "scan_summary.json"));
  CHECK(summary.at("seed") == 99);
  CHECK(summary.at("config").at("shots") == 4000);
  CHECK(summary.at("points").size() == 1);
  // ideal chain at pde 0.25: R should sit near 0.75
  const double r = summary.at("points")[0].at("chains")[0].at("r");
  CHECK(r == doctest::Approx(0.75).epsilon(0.05));
  const double eta = summary.at("points")[0].at("eta_hat");
  CHECK(eta == doctest::Approx(0.25).epsilon(0.05));
}

TEST_CASE("identical config and seed reproduce byte-identical outputs") {
  const auto dir_a = fresh_dir("repro_a");
  const auto dir_b = fresh_dir("repro_b");
  json cfg = mini_config(dir_a / "out", 2000);
  const auto path_a = write_config(dir_a, cfg);
  REQUIRE(run_cli("scan " + path_a.string() + " --threads 1", dir_a)
              .exit_code == 0);
  cfg["out_dir"] = (dir_b / "out").string();
  const auto path_b = write_config(dir_b, cfg);
  REQUIRE(run_cli("scan " + path_b.string() + " --threads 4", dir_b)
              .exit_code == 0);
  CHECK(slurp(dir_a / "out" / "scan.csv") == slurp(dir_b / "out" / "scan.csv"));
  CHECK(slurp(dir_a / "out" / "scan_summary.json") ==
        slurp(dir_b / "out" / "scan_summary.json"));
}

TEST_CASE("condition emits per-value rows and distributions") {
  const auto dir = fresh_dir("condition");
  const auto cfg_path = write_config(dir, mini_config(dir / "out", 6000));
  const auto res = run_cli(
      "condition " + cfg_path.string() + " --mcond 2 --mcond 99", dir);
  REQUIRE(res.exit_code == 0);  // insufficient stats is a warning, not fatal
  CHECK(res.err.find("99") != std::string::npos);

  const std::string csv = slurp(dir / "out" / "conditional.csv");
  CHECK(csv.rfind("m_cond,n_selected,mean,fano,fano_err,theory_fano,flag\n",
                  0) == 0);
  CHECK(count_lines(csv) == 3);
  CHECK(csv.find("insufficient_statistics") != std::string::npos);
  CHECK(fs::exists(dir / "out" / "pnd_2.csv"));
  CHECK_FALSE(fs::exists(dir / "out" / "pnd_99.csv"));

  const std::string pnd = slurp(dir / "out" / "pnd_2.csv");
  CHECK(pnd.rfind("m,empirical_p,theory_p\n", 0) == 0);
}

TEST_CASE("analyze on exported shots reproduces the run summary exactly") {
  const auto dir = fresh_dir("roundtrip");
  json cfg = mini_config(dir / "out", 6000);
  const auto cfg_path = write_config(dir, cfg);
  REQUIRE(run_cli("condition " + cfg_path.string() +
                      " --mcond 2 --dump-shots",
                  dir)
              .exit_code == 0);
  REQUIRE(fs::exists(dir / "out" / "shots.csv"));

  REQUIRE(run_cli("analyze " + (dir / "out" / "shots.csv").string() +
                      " --seed 99 --min-count 10 --out-dir " +
                      (dir / "out2").string(),
                  dir)
              .exit_code == 0);

  const json summary = json::parse(slurp(dir / "out" / "condition_summary.json"));
  const json analysis = json::parse(slurp(dir / "out2" / "analysis.json"));
  // same counts, same estimator code, same bootstrap seed: exact matches
  CHECK(analysis.at("r").get<double>() == summary.at("r").get<double>());
  CHECK(analysis.at("r_err").get<double>() == summary.at("r_err").get<double>());
  CHECK(analysis.at("eta_hat").get<double>() ==
        summary.at("eta_hat").get<double>());
  CHECK(analysis.at("arm2").at("mean").get<double>() ==
        summary.at("mean_m2").get<double>());
  CHECK(analysis.at("arm2").at("fano").get<double>() ==
        summary.at("fano_m2").get<double>());
  CHECK(analysis.at("n_shots") == 6000);

  // conditional rows too, bootstrap errors included
  const json& cond_run = summary.at("conditional")[0];
  REQUIRE(cond_run.at("m_cond") == 2);
  bool matched = false;
  for (const auto& row : analysis.at("conditional")) {
    if (row.at("m1") != 2) continue;
    matched = true;
    CHECK(row.at("n_selected") == cond_run.at("n_selected"));
    CHECK(row.at("mean").get<double>() == cond_run.at("mean").get<double>());
    CHECK(row.at("fano").get<double>() == cond_run.at("fano").get<double>());
    CHECK(row.at("fano_err").get<double>() ==
          cond_run.at("fano_err").get<double>());
  }
  CHECK(matched);
}

TEST_CASE("analyze handles hand-written and degenerate files") {
  const auto dir = fresh_dir("analyze");
  SUBCASE("perfectly correlated pairs give R = 0, eta = 1") {
    const fs::path csv = dir / "pairs.csv";
    std::ofstream out(csv);
    out << "shot,m1,m2\n";
    for (int s = 0; s < 100; ++s) out << s << ',' << s % 4 << ',' << s % 4 << '\n';
    out.close();
    REQUIRE(run_cli("analyze " + csv.string() + " --out-dir " +
                        (dir / "out").string(),
                    dir)
                .exit_code == 0);
    const json analysis = json::parse(slurp(dir / "out" / "analysis.json"));
    CHECK(analysis.at("r").get<double>() == 0.0);
    CHECK(analysis.at("eta_hat").get<double>() == 1.0);
  }
  SUBCASE("malformed rows are reported with their line number") {
    const fs::path csv = dir / "bad.csv";
    std::ofstream out(csv);
    out << "shot,m1,m2\n0,1,1\n1,2,2\n2,oops,3\n";
    out.close();
    const auto res = run_cli("analyze " + csv.string(), dir);
    CHECK(res.exit_code == 3);
    CHECK(res.err.find("line 4") != std::string::npos);
  }
  SUBCASE("duplicate shot ids are data errors") {
    const fs::path csv = dir / "dup.csv";
    std::ofstream out(csv);
    out << "shot,m1,m2\n0,1,1\n0,2,2\n";
    out.close();
    const auto res = run_cli("analyze " + csv.string(), dir);
    CHECK(res.exit_code == 3);
    CHECK(res.err.find("duplicate") != std::string::npos);
  }
  SUBCASE("an all-zero conditioning arm flags the estimators, keeps R") {
    const fs::path csv = dir / "zero.csv";
    std::ofstream out(csv);
    out << "shot,m1,m2\n";
    for (int s = 0; s < 200; ++s) out << s << ",0," << s % 3 << '\n';
    out.close();
    REQUIRE(run_cli("analyze " + csv.string() + " --out-dir " +
                        (dir / "outz").string(),
                    dir)
                .exit_code == 0);
    const json analysis = json::parse(slurp(dir / "outz" / "analysis.json"));
    CHECK(analysis.at("arm1").at("mu_hat").is_null());
    CHECK(analysis.at("arm1").at("fano").is_null());
    CHECK(analysis.at("r").is_number());
  }
}

TEST_CASE("calibrate reports per-chain single-cell responses") {
  const auto dir = fresh_dir("calibrate");
  json cfg = mini_config(dir / "out");
  cfg["chains"] = json::array(
      {json{{"type", "boxcar"}, {"gate_width_ns", 10.0}},
       json{{"type", "boxcar"}, {"gate_width_ns", 50.0}},
       json{{"type", "peak_hold"}}});
  const auto cfg_path = write_config(dir, cfg);
  REQUIRE(run_cli("calibrate " + cfg_path.string(), dir).exit_code == 0);
  const json calib = json::parse(slurp(dir / "out" / "calibration.json"));
  const double q10 = calib.at("chains")[0].at("q1");
  const double q50 = calib.at("chains")[1].at("q1");
  const double qph = calib.at("chains")[2].at("q1");
  const double full = calib.at("kernel").at("single_cell_charge");
  CHECK(q10 < q50);
  CHECK(q50 < full);
  CHECK(q10 == doctest::Approx(6.68590544763735).epsilon(1e-9));
  CHECK(qph == doctest::Approx(1.0).epsilon(2e-3));
  CHECK(calib.at("kernel").at("peak_time_ns").get<double>() ==
        doctest::Approx(2.9014823583237965).epsilon(1e-12));
}

TEST_CASE("config loader rejects out-of-range references") {
  const auto dir = fresh_dir("config_refs");
  json cfg = mini_config(dir / "out");
  SUBCASE("conditioning chain out of range") {
    cfg["conditioning"]["chain"] = 5;
    const auto res = run_cli("scan " + write_config(dir, cfg).string(), dir);
    CHECK(res.exit_code == 2);
  }
  SUBCASE("conditioning arm must be 1 or 2") {
    cfg["conditioning"]["arm"] = 0;
    const auto res = run_cli("scan " + write_config(dir, cfg).string(), dir);
    CHECK(res.exit_code == 2);
  }
  SUBCASE("empty scan") {
    cfg["source"]["mean_photons"] = json::array();
    const auto res = run_cli("scan " + write_config(dir, cfg).string(), dir);
    CHECK(res.exit_code == 2);
  }
}

TEST_CASE("debug dumps cover events, raw outputs and digitized traces") {
  const auto dir = fresh_dir("dumps");
  json cfg = mini_config(dir / "out", 500);
  cfg["chains"].push_back(json{{"type", "digitizer"}, {"gate_width_ns", 50.0}});
  const auto cfg_path = write_config(dir, cfg);
  REQUIRE(run_cli("scan " + cfg_path.string() +
                      " --dump-events --dump-raw --dump-trace --dump-n 20",
                  dir)
              .exit_code == 0);
  const std::string events = slurp(dir / "out" / "events.csv");
  CHECK(events.rfind("shot,arm,time_ns,weight,origin\n", 0) == 0);
  CHECK(events.find("photon") != std::string::npos);
  const std::string raw = slurp(dir / "out" / "raw.csv");
  CHECK(raw.rfind("shot,arm,chain,gate_ns,raw,m\n", 0) == 0);
  CHECK(raw.find("boxcar-60ns") != std::string::npos);
  const std::string trace = slurp(dir / "out" / "trace.csv");
  CHECK(trace.rfind("shot,arm,chain,sample,t_ns,code\n", 0) == 0);
  CHECK(trace.find("digitizer-50ns") != std::string::npos);
  // 601 ns window at 250 MS/s: the dump holds full traces, 150 samples each
  CHECK(count_lines(trace) > 100);
}
