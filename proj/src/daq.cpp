#include "twbsim/daq.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "twbsim/errors.hpp"

namespace twbsim::daq {

namespace {

char* append_gate(char* buf, std::size_t n, const char* name, double gate) {
  std::snprintf(buf, n, "%s-%gns", name, gate);
  return buf;
}

}  // namespace

const char* to_string(ChainKind kind) {
  switch (kind) {
    case ChainKind::boxcar: return "boxcar";
    case ChainKind::digitizer: return "digitizer";
    case ChainKind::peakhold: return "peakhold";
  }
  return "unknown";
}

void BoxcarConfig::validate(const sipm::Window& window) const {
  if (!(gate_width > 0.0)) throw ConfigError("boxcar gate width must be > 0");
  if (gate_center - gate_width / 2.0 < window.t_min ||
      gate_center + gate_width / 2.0 > window.t_max)
    throw ConfigError("boxcar gate extends outside the shot window");
}

void DigitizerConfig::validate(const sipm::Window& window) const {
  if (!(sample_rate > 0.0)) throw ConfigError("sample rate must be > 0");
  if (bits < 1 || bits > 24) throw ConfigError("bits must lie in [1,24]");
  if (!(full_scale > 0.0)) throw ConfigError("full scale must be > 0");
  if (!(baseline_offset >= 0.0) || baseline_offset >= full_scale)
    throw ConfigError("baseline offset must lie in [0, full_scale)");
  if (!(gate_width > 0.0)) throw ConfigError("gate width must be > 0");
  if (gate_center - gate_width / 2.0 < window.t_min ||
      gate_center + gate_width / 2.0 > window.t_max)
    throw ConfigError("digitizer gate extends outside the shot window");
  if (gate_width * sample_rate * 1e-9 < 2.0)
    throw ConfigError(
        "digitizer gate too short: need at least 2 samples per gate");
}

void PeakHoldConfig::validate(const sipm::Window& shot_window) const {
  window.validate();
  if (!(search_step > 0.0)) throw ConfigError("search step must be > 0");
  if (window.t_min < shot_window.t_min || window.t_max > shot_window.t_max)
    throw ConfigError("peak-hold window extends outside the shot window");
}

ChainKind chain_kind(const ChainConfig& chain) {
  if (std::holds_alternative<BoxcarConfig>(chain)) return ChainKind::boxcar;
  if (std::holds_alternative<DigitizerConfig>(chain))
    return ChainKind::digitizer;
  return ChainKind::peakhold;
}

double chain_gate_ns(const ChainConfig& chain) {
  if (const auto* b = std::get_if<BoxcarConfig>(&chain)) return b->gate_width;
  if (const auto* d = std::get_if<DigitizerConfig>(&chain))
    return d->gate_width;
  return std::get<PeakHoldConfig>(chain).window.width();
}

std::string chain_label(const ChainConfig& chain) {
  char buf[64];
  if (const auto* b = std::get_if<BoxcarConfig>(&chain))
    return append_gate(buf, sizeof buf, "boxcar", b->gate_width);
  if (const auto* d = std::get_if<DigitizerConfig>(&chain))
    return append_gate(buf, sizeof buf, "digitizer", d->gate_width);
  return "peakhold";
}

ChainOutput boxcar_integrate(const sipm::EventList& ev,
                             const sipm::PulseKernel& kernel,
                             const BoxcarConfig& cfg, double noise_sigma,
                             RandomStream& rng) {
  cfg.validate(ev.window);
  const double g0 = cfg.gate_center - cfg.gate_width / 2.0;
  const double g1 = cfg.gate_center + cfg.gate_width / 2.0;
  double charge = 0.0;
  for (const auto& e : ev.events)
    charge +=
        e.weight * (kernel.integral(g1 - e.time) - kernel.integral(g0 - e.time));
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> noise(
        0.0, noise_sigma * std::sqrt(cfg.gate_width));
    charge += noise(rng);
  }
  return ChainOutput{charge, ChainKind::boxcar};
}

SampleRecord digitize(const sipm::EventList& ev,
                      const sipm::PulseKernel& kernel,
                      const DigitizerConfig& cfg, double noise_sigma,
                      RandomStream& rng) {
  cfg.validate(ev.window);
  SampleRecord rec;
  rec.dt = cfg.sample_period_ns();
  // Sample clock free-running relative to the trigger: phase uniform over one
  // period, then the grid anchored at the first sample inside the window.
  const double phase = cfg.phase_jitter ? rng.uniform() * rec.dt : 0.0;
  rec.t0 = phase + std::ceil((ev.window.t_min - phase) / rec.dt) * rec.dt;
  const int n = static_cast<int>(
                    std::floor((ev.window.t_max - rec.t0) / rec.dt)) + 1;

  auto grid = sipm::evaluate_waveform_grid(ev, kernel, rec.t0, rec.dt, n);
  const int max_code = cfg.max_code();
  rec.codes.resize(grid.size());
  std::normal_distribution<double> noise(0.0, noise_sigma);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double v = grid[i] + cfg.baseline_offset;
    if (noise_sigma > 0.0) v += noise(rng);
    long code = std::lround(v / cfg.full_scale * max_code);
    if (code > max_code) {
      code = max_code;
      ++rec.n_clipped;
    }
    if (code < 0) code = 0;
    rec.codes[i] = static_cast<int>(code);
  }
  return rec;
}

int DigitizerConfig::pedestal_code() const {
  return static_cast<int>(
      std::lround(baseline_offset / full_scale * max_code()));
}

ChainOutput gated_sum(const SampleRecord& samples, const DigitizerConfig& cfg) {
  const double g0 = cfg.gate_center - cfg.gate_width / 2.0;
  const double g1 = cfg.gate_center + cfg.gate_width / 2.0;
  const double lsb = cfg.full_scale / cfg.max_code();
  const long pedestal = cfg.pedestal_code();
  long sum = 0;
  int in_gate = 0;
  for (std::size_t i = 0; i < samples.codes.size(); ++i) {
    const double t = samples.t0 + static_cast<double>(i) * samples.dt;
    if (t < g0 || t > g1) continue;
    sum += samples.codes[i] - pedestal;
    ++in_gate;
  }
  if (in_gate < 2)
    throw ConfigError("digitizer gate holds fewer than 2 samples");
  return ChainOutput{static_cast<double>(sum) * lsb * samples.dt,
                     ChainKind::digitizer};
}

ChainOutput peak_hold(const sipm::EventList& ev,
                      const sipm::PulseKernel& kernel,
                      const PeakHoldConfig& cfg, double noise_sigma,
                      RandomStream& rng) {
  cfg.validate(ev.window);
  const int n = static_cast<int>(
                    std::floor(cfg.window.width() / cfg.search_step)) + 1;
  auto grid = sipm::evaluate_waveform_grid(ev, kernel, cfg.window.t_min,
                                           cfg.search_step, n);
  double peak = 0.0;
  for (double v : grid) peak = std::max(peak, v);
  // Amplitude-domain readout: the held value carries the full baseline noise
  // at one instant, with no 1/sqrt(tau) averaging to suppress it.
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    peak += noise(rng);
  }
  return ChainOutput{peak, ChainKind::peakhold};
}

ChainOutput run_chain(const sipm::EventList& ev,
                      const sipm::PulseKernel& kernel, const ChainConfig& chain,
                      double noise_sigma, RandomStream& rng) {
  if (const auto* b = std::get_if<BoxcarConfig>(&chain))
    return boxcar_integrate(ev, kernel, *b, noise_sigma, rng);
  if (const auto* d = std::get_if<DigitizerConfig>(&chain))
    return gated_sum(digitize(ev, kernel, *d, noise_sigma, rng), *d);
  return peak_hold(ev, kernel, std::get<PeakHoldConfig>(chain), noise_sigma,
                   rng);
}

CalibConstant calibrate_single_photon(const ChainConfig& chain,
                                      const sipm::PulseKernel& kernel,
                                      const sipm::Window& window) {
  kernel.validate();
  sipm::EventList single;
  single.window = window;
  single.events.push_back(
      sipm::CellEvent{0.0, 1.0, sipm::EventOrigin::photon});

  RandomStream unused(0);
  double q1 = 0.0;
  if (const auto* dig = std::get_if<DigitizerConfig>(&chain)) {
    if (dig->phase_jitter) {
      // A free-running sampling clock sweeps every phase during a
      // calibration run, so the single-cell response is the phase average
      // of the zero-noise gated sum.
      constexpr int kPhases = 64;
      const double dt = dig->sample_period_ns();
      for (int i = 0; i < kPhases; ++i) {
        // a clock phase of +phi equals shifting pulse and gate by -phi
        const double phi = static_cast<double>(i) / kPhases * dt;
        DigitizerConfig fixed = *dig;
        fixed.phase_jitter = false;
        fixed.gate_center -= phi;
        sipm::EventList shifted = single;
        shifted.events[0].time = -phi;
        q1 += gated_sum(digitize(shifted, kernel, fixed, 0.0, unused), fixed)
                  .raw;
      }
      q1 /= kPhases;
    } else {
      q1 = gated_sum(digitize(single, kernel, *dig, 0.0, unused), *dig).raw;
    }
  } else {
    q1 = run_chain(single, kernel, chain, 0.0, unused).raw;
  }
  if (!(q1 > 0.0))
    throw ConfigError("calibration failed: single-cell response " +
                      std::to_string(q1) + " is not positive for " +
                      chain_label(chain));
  return CalibConstant{q1};
}

int charge_to_photons(const ChainOutput& out, const CalibConstant& cal) {
  if (!(cal.q1 > 0.0)) throw ConfigError("calibration constant must be > 0");
  const long m = std::lround(out.raw / cal.q1);
  return m < 0 ? 0 : static_cast<int>(m);
}

}  // namespace twbsim::daq
