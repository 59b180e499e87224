#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "twbsim/random.hpp"
#include "twbsim/sipm.hpp"

namespace twbsim::daq {

enum class ChainKind : std::uint8_t { boxcar, digitizer, peakhold };

const char* to_string(ChainKind kind);

/// Analog gated integrator: exact integral of the superposed pulses over the
/// gate (closed-form antiderivative per event).
struct BoxcarConfig {
  double gate_center = 0.0;  ///< ns; typically the pulse peak time
  double gate_width = 50.0;  ///< ns

  void validate(const sipm::Window& window) const;
};

/// Waveform digitizer: finite-rate sampling, quantization, off-line gated sum.
/// The input sits on a baseline pedestal so that noise is not truncated by
/// the code floor; the off-line sum subtracts the pedestal code.
struct DigitizerConfig {
  double sample_rate = 2.5e8;   ///< samples per second
  int bits = 12;
  double full_scale = 40.95;    ///< amplitude units (LSB = 0.01 at 12 bits)
  double baseline_offset = 4.0; ///< pedestal, amplitude units
  double gate_center = 0.0;     ///< ns
  double gate_width = 50.0;     ///< ns
  bool phase_jitter = true;     ///< random sampling phase per shot

  void validate(const sipm::Window& window) const;
  double sample_period_ns() const { return 1e9 / sample_rate; }
  int max_code() const { return (1 << bits) - 1; }
  int pedestal_code() const;
};

/// Peak detector: maximum of the (noisy) waveform over a search grid.
struct PeakHoldConfig {
  sipm::Window window{-10.0, 20.0};
  double search_step = 0.05;  ///< ns

  void validate(const sipm::Window& shot_window) const;
};

using ChainConfig = std::variant<BoxcarConfig, DigitizerConfig, PeakHoldConfig>;

ChainKind chain_kind(const ChainConfig& chain);

/// Gate width for integrating chains, window width for peak-hold (used only
/// for labels and reports).
double chain_gate_ns(const ChainConfig& chain);

/// Short label such as "boxcar-50ns" or "peakhold".
std::string chain_label(const ChainConfig& chain);

/// Raw chain output: gated charge for integrating chains, peak amplitude for
/// the peak-hold.
struct ChainOutput {
  double raw = 0.0;
  ChainKind chain_id = ChainKind::boxcar;
};

/// Digitized trace: quantized codes on a uniform sample grid.
struct SampleRecord {
  double t0 = 0.0;  ///< time of the first sample, ns
  double dt = 4.0;  ///< sample period, ns
  std::vector<int> codes;
  int n_clipped = 0;  ///< samples clipped at full scale
};

/// Single-cell response of a chain, the unit used to calibrate raw outputs
/// into photon numbers.
struct CalibConstant {
  double q1 = 1.0;
};

ChainOutput boxcar_integrate(const sipm::EventList& ev,
                             const sipm::PulseKernel& kernel,
                             const BoxcarConfig& cfg, double noise_sigma,
                             RandomStream& rng);

/// Samples the waveform at t = t0 + k/sample_rate with t0 uniform over one
/// sample period when phase_jitter is set, adds per-sample Gaussian noise,
/// and quantizes to the configured bit depth. Clipping is counted, not an
/// error.
SampleRecord digitize(const sipm::EventList& ev,
                      const sipm::PulseKernel& kernel,
                      const DigitizerConfig& cfg, double noise_sigma,
                      RandomStream& rng);

/// Off-line gated sum of a digitized trace: sum of code * LSB * dt over the
/// samples inside the gate. Requires at least 2 samples in the gate.
ChainOutput gated_sum(const SampleRecord& samples, const DigitizerConfig& cfg);

ChainOutput peak_hold(const sipm::EventList& ev,
                      const sipm::PulseKernel& kernel,
                      const PeakHoldConfig& cfg, double noise_sigma,
                      RandomStream& rng);

/// Runs whichever chain the variant holds. Digitizer chains digitize and
/// gate-sum in one step; use digitize() + gated_sum() directly to share one
/// trace between several gates.
ChainOutput run_chain(const sipm::EventList& ev,
                      const sipm::PulseKernel& kernel, const ChainConfig& chain,
                      double noise_sigma, RandomStream& rng);

/// Chain response to one standard event at t = 0 with zero noise and
/// deterministic sampling phase. Partial charge in short gates is absorbed
/// here, which is what makes short-gate calibration self-consistent.
CalibConstant calibrate_single_photon(const ChainConfig& chain,
                                      const sipm::PulseKernel& kernel,
                                      const sipm::Window& window);

/// Calibrated photon number: max(0, round(raw / q1)).
int charge_to_photons(const ChainOutput& out, const CalibConstant& cal);

}  // namespace twbsim::daq
