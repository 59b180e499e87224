#include "twbsim/config.hpp"

#include <fstream>
#include <set>
#include <vector>

#include "twbsim/errors.hpp"

namespace twbsim::config {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw ConfigError("config" + (path.empty() ? "" : " at " + path) + ": " +
                    message);
}

void require_keys(const json& obj, const std::string& path,
                  const std::set<std::string>& allowed) {
  if (!obj.is_object()) fail(path, "expected an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.contains(key)) fail(path, "unknown key '" + key + "'");
}

double get_number(const json& obj, const std::string& path, const char* key,
                  double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) fail(path + "." + key, "expected a number");
  return v.get<double>();
}

int get_int(const json& obj, const std::string& path, const char* key,
            int fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) fail(path + "." + key, "expected an integer");
  return v.get<int>();
}

bool get_bool(const json& obj, const std::string& path, const char* key,
              bool fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) fail(path + "." + key, "expected a boolean");
  return v.get<bool>();
}

sipm::Window parse_window(const json& obj, const std::string& path,
                          sipm::Window fallback) {
  require_keys(obj, path, {"t_min", "t_max"});
  sipm::Window w = fallback;
  w.t_min = get_number(obj, path, "t_min", fallback.t_min);
  w.t_max = get_number(obj, path, "t_max", fallback.t_max);
  return w;
}

sipm::SiPMConfig parse_detector(const json& obj, const std::string& path) {
  require_keys(obj, path,
               {"n_cells", "pde", "dark_rate_hz", "p_crosstalk",
                "f_delayed_crosstalk", "tau_delayed_crosstalk_ns",
                "p_afterpulse", "tau_afterpulse_ns", "baseline_noise_sigma"});
  sipm::SiPMConfig det;
  det.n_cells = get_int(obj, path, "n_cells", det.n_cells);
  det.pde = get_number(obj, path, "pde", det.pde);
  det.dark_rate = get_number(obj, path, "dark_rate_hz", det.dark_rate);
  det.p_crosstalk = get_number(obj, path, "p_crosstalk", det.p_crosstalk);
  det.f_delayed_ct =
      get_number(obj, path, "f_delayed_crosstalk", det.f_delayed_ct);
  det.tau_delayed_ct =
      get_number(obj, path, "tau_delayed_crosstalk_ns", det.tau_delayed_ct);
  det.p_afterpulse = get_number(obj, path, "p_afterpulse", det.p_afterpulse);
  det.tau_afterpulse =
      get_number(obj, path, "tau_afterpulse_ns", det.tau_afterpulse);
  det.baseline_noise_sigma =
      get_number(obj, path, "baseline_noise_sigma", det.baseline_noise_sigma);
  return det;
}

daq::ChainConfig parse_chain(const json& obj, const std::string& path,
                             const sipm::PulseKernel& kernel) {
  if (!obj.is_object()) fail(path, "expected an object");
  if (!obj.contains("type")) fail(path, "missing key 'type'");
  const std::string type = obj.at("type").get<std::string>();
  const double peak = kernel.peak_time();

  if (type == "boxcar") {
    require_keys(obj, path, {"type", "gate_width_ns", "gate_center_ns"});
    daq::BoxcarConfig c;
    c.gate_width = get_number(obj, path, "gate_width_ns", c.gate_width);
    c.gate_center = get_number(obj, path, "gate_center_ns", peak);
    return c;
  }
  if (type == "digitizer") {
    require_keys(obj, path,
                 {"type", "gate_width_ns", "gate_center_ns", "sample_rate_hz",
                  "bits", "full_scale", "baseline_offset", "phase_jitter"});
    daq::DigitizerConfig c;
    c.gate_width = get_number(obj, path, "gate_width_ns", c.gate_width);
    c.gate_center = get_number(obj, path, "gate_center_ns", peak);
    c.sample_rate = get_number(obj, path, "sample_rate_hz", c.sample_rate);
    c.bits = get_int(obj, path, "bits", c.bits);
    c.full_scale =
        get_number(obj, path, "full_scale", 40.95 * kernel.amplitude);
    c.baseline_offset = get_number(obj, path, "baseline_offset",
                                   4.0 * kernel.amplitude);
    c.phase_jitter = get_bool(obj, path, "phase_jitter", c.phase_jitter);
    return c;
  }
  if (type == "peak_hold") {
    require_keys(obj, path, {"type", "window_ns", "search_step_ns"});
    daq::PeakHoldConfig c;
    if (obj.contains("window_ns"))
      c.window = parse_window(obj.at("window_ns"), path + ".window_ns",
                              c.window);
    c.search_step = get_number(obj, path, "search_step_ns", c.search_step);
    return c;
  }
  fail(path + ".type",
       "unknown chain type '" + type +
           "' (expected boxcar, digitizer or peak_hold)");
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  const std::string root;
  require_keys(doc, root,
               {"schema_version", "seed", "shots", "threads", "out_dir",
                "source", "window_ns", "kernel", "detectors", "chains",
                "conditioning"});

  if (!doc.contains("schema_version"))
    fail(root, "missing required key 'schema_version'");
  const int version = get_int(doc, root, "schema_version", -1);
  if (version != kSchemaVersion)
    fail("schema_version", "unsupported version " + std::to_string(version) +
                               " (this build reads version " +
                               std::to_string(kSchemaVersion) + ")");

  RunConfig cfg;
  auto& exp = cfg.exp;

  if (doc.contains("seed")) {
    const auto& v = doc.at("seed");
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
      fail("seed", "expected a nonnegative integer");
    exp.master_seed = v.get<std::uint64_t>();
  }
  exp.n_shots = get_int(doc, root, "shots", exp.n_shots);
  exp.threads = get_int(doc, root, "threads", exp.threads);
  if (doc.contains("out_dir")) {
    if (!doc.at("out_dir").is_string()) fail("out_dir", "expected a string");
    cfg.out_dir = doc.at("out_dir").get<std::string>();
  }

  if (!doc.contains("source")) fail(root, "missing required key 'source'");
  {
    const auto& src = doc.at("source");
    require_keys(src, "source", {"mean_photons", "modes"});
    if (!src.contains("mean_photons"))
      fail("source", "missing required key 'mean_photons'");
    const auto& means = src.at("mean_photons");
    if (!means.is_array() || means.empty())
      fail("source.mean_photons", "expected a nonempty array of numbers");
    for (const auto& m : means) {
      if (!m.is_number()) fail("source.mean_photons", "expected numbers");
      exp.scan_means.push_back(m.get<double>());
    }
    exp.modes = get_number(src, "source", "modes", exp.modes);
  }

  if (doc.contains("window_ns"))
    exp.window = parse_window(doc.at("window_ns"), "window_ns", exp.window);

  if (doc.contains("kernel")) {
    const auto& k = doc.at("kernel");
    require_keys(k, "kernel", {"rise_tau_ns", "decay_tau_ns", "amplitude"});
    exp.kernel.rise_tau = get_number(k, "kernel", "rise_tau_ns",
                                     exp.kernel.rise_tau);
    exp.kernel.decay_tau = get_number(k, "kernel", "decay_tau_ns",
                                      exp.kernel.decay_tau);
    exp.kernel.amplitude = get_number(k, "kernel", "amplitude",
                                      exp.kernel.amplitude);
  }

  if (doc.contains("detectors")) {
    const auto& dets = doc.at("detectors");
    require_keys(dets, "detectors", {"signal", "idler"});
    if (dets.contains("signal"))
      exp.det_signal = parse_detector(dets.at("signal"), "detectors.signal");
    if (dets.contains("idler"))
      exp.det_idler = parse_detector(dets.at("idler"), "detectors.idler");
  }

  if (!doc.contains("chains")) fail(root, "missing required key 'chains'");
  {
    const auto& chains = doc.at("chains");
    if (!chains.is_array() || chains.empty())
      fail("chains", "expected a nonempty array");
    for (std::size_t i = 0; i < chains.size(); ++i)
      exp.chains.push_back(parse_chain(
          chains.at(i), "chains[" + std::to_string(i) + "]", exp.kernel));
  }

  if (doc.contains("conditioning")) {
    const auto& cond = doc.at("conditioning");
    require_keys(cond, "conditioning", {"arm", "chain", "scan_index"});
    cfg.conditioning.arm = get_int(cond, "conditioning", "arm", 1);
    cfg.conditioning.chain = get_int(cond, "conditioning", "chain", 0);
    cfg.conditioning.scan_index =
        get_int(cond, "conditioning", "scan_index", 0);
    if (cfg.conditioning.arm != 1 && cfg.conditioning.arm != 2)
      fail("conditioning.arm", "expected 1 or 2");
    if (cfg.conditioning.chain < 0 ||
        cfg.conditioning.chain >= static_cast<int>(exp.chains.size()))
      fail("conditioning.chain", "chain index out of range");
    if (cfg.conditioning.scan_index < 0 ||
        cfg.conditioning.scan_index >= static_cast<int>(exp.scan_means.size()))
      fail("conditioning.scan_index", "scan point index out of range");
  }

  try {
    exp.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

nlohmann::ordered_json resolved_config_json(const RunConfig& cfg) {
  using ordered = nlohmann::ordered_json;
  const auto& exp = cfg.exp;

  auto detector_json = [](const sipm::SiPMConfig& det) {
    return ordered{{"n_cells", det.n_cells},
                   {"pde", det.pde},
                   {"dark_rate_hz", det.dark_rate},
                   {"p_crosstalk", det.p_crosstalk},
                   {"f_delayed_crosstalk", det.f_delayed_ct},
                   {"tau_delayed_crosstalk_ns", det.tau_delayed_ct},
                   {"p_afterpulse", det.p_afterpulse},
                   {"tau_afterpulse_ns", det.tau_afterpulse},
                   {"baseline_noise_sigma", det.baseline_noise_sigma}};
  };

  ordered chains = ordered::array();
  for (const auto& chain : exp.chains) {
    if (const auto* b = std::get_if<daq::BoxcarConfig>(&chain)) {
      chains.push_back(ordered{{"type", "boxcar"},
                               {"gate_width_ns", b->gate_width},
                               {"gate_center_ns", b->gate_center}});
    } else if (const auto* d = std::get_if<daq::DigitizerConfig>(&chain)) {
      chains.push_back(ordered{{"type", "digitizer"},
                               {"gate_width_ns", d->gate_width},
                               {"gate_center_ns", d->gate_center},
                               {"sample_rate_hz", d->sample_rate},
                               {"bits", d->bits},
                               {"full_scale", d->full_scale},
                               {"baseline_offset", d->baseline_offset},
                               {"phase_jitter", d->phase_jitter}});
    } else {
      const auto& p = std::get<daq::PeakHoldConfig>(chain);
      chains.push_back(ordered{
          {"type", "peak_hold"},
          {"window_ns",
           ordered{{"t_min", p.window.t_min}, {"t_max", p.window.t_max}}},
          {"search_step_ns", p.search_step}});
    }
  }

  // threads and out_dir are runtime knobs, not part of the experiment
  // identity; leaving them out keeps outputs byte-identical across
  // parallelism settings and output locations.
  return ordered{
      {"schema_version", kSchemaVersion},
      {"seed", exp.master_seed},
      {"shots", exp.n_shots},
      {"source",
       ordered{{"mean_photons", exp.scan_means}, {"modes", exp.modes}}},
      {"window_ns",
       ordered{{"t_min", exp.window.t_min}, {"t_max", exp.window.t_max}}},
      {"kernel", ordered{{"rise_tau_ns", exp.kernel.rise_tau},
                         {"decay_tau_ns", exp.kernel.decay_tau},
                         {"amplitude", exp.kernel.amplitude}}},
      {"detectors", ordered{{"signal", detector_json(exp.det_signal)},
                            {"idler", detector_json(exp.det_idler)}}},
      {"chains", chains},
      {"conditioning", ordered{{"arm", cfg.conditioning.arm},
                               {"chain", cfg.conditioning.chain},
                               {"scan_index", cfg.conditioning.scan_index}}}};
}

}  // namespace twbsim::config
