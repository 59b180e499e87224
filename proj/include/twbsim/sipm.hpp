#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "twbsim/random.hpp"

namespace twbsim::sipm {

/// Standard single-cell pulse: normalized double exponential
///   k(t) = amplitude * (exp(-t/decay_tau) - exp(-t/rise_tau)) / norm,  t >= 0
/// with norm chosen so the peak value equals `amplitude`.
struct PulseKernel {
  double rise_tau = 1.0;   ///< ns
  double decay_tau = 15.0; ///< ns
  double amplitude = 1.0;  ///< peak height, arbitrary units

  void validate() const;

  /// Time of the pulse maximum after the event.
  double peak_time() const;

  /// Pulse value at time t after the event (0 for t < 0).
  double value(double t) const;

  /// Integral of the pulse from 0 to x (0 for x <= 0); the antiderivative
  /// used by the analytic boxcar.
  double integral(double x) const;

  /// Total single-cell charge Q1 = integral over all time.
  double single_cell_charge() const;

  /// Normalization denominator exp(-tp/decay) - exp(-tp/rise).
  double norm() const;
};

/// Detector microphysics parameters.
struct SiPMConfig {
  int n_cells = 667;
  double pde = 0.4;                    ///< photon detection efficiency
  double dark_rate = 1.0e5;            ///< dark events per second
  double p_crosstalk = 0.03;           ///< mean cross-talk offspring per event
  double f_delayed_ct = 0.5;           ///< fraction of cross-talk delayed
  double tau_delayed_ct = 30.0;        ///< ns
  double p_afterpulse = 0.01;          ///< mean afterpulse offspring per event
  double tau_afterpulse = 50.0;        ///< ns
  double baseline_noise_sigma = 0.25;  ///< amplitude units

  void validate() const;
};

enum class EventOrigin : std::uint8_t { photon, dark, crosstalk, afterpulse };

const char* to_string(EventOrigin origin);

/// One cell firing. `weight` is the pulse height in units of the standard
/// single-cell amplitude: 1.0 except for afterpulses, whose amplitude is
/// reduced by the cell recharge factor 1 - exp(-dt/decay_tau).
struct CellEvent {
  double time = 0.0;  ///< ns relative to the light-pulse trigger
  double weight = 1.0;
  EventOrigin origin = EventOrigin::photon;
};

/// Acquisition window around the trigger.
struct Window {
  double t_min = -100.0;
  double t_max = 500.0;

  void validate() const;
  double width() const { return t_max - t_min; }
  bool contains(double t) const { return t >= t_min && t <= t_max; }
};

/// Timestamped cell firings of one shot on one detector, sorted by time.
struct EventList {
  std::vector<CellEvent> events;
  Window window;
};

/// Hard cap on the per-shot event count; exceeding it throws CascadeOverflow.
inline constexpr std::size_t kMaxEventsPerShot = 1'000'000;

/// Number of distinct cells hit when k photoelectrons land uniformly on
/// n_cells cells (the saturation model).
int occupancy_fired(int k, int n_cells, RandomStream& rng);

/// Fired cells from n incident photons: binomial thinning at the PDE followed
/// by the cell occupancy model.
int primary_detections(int n_photons, const SiPMConfig& cfg, RandomStream& rng);

/// Dark counts: Poisson number with mean dark_rate * window width, times
/// i.i.d. uniform over the window.
std::vector<CellEvent> add_dark_counts(const Window& window, double dark_rate,
                                       RandomStream& rng);

/// Cross-talk cascade: every event, including generated offspring, spawns a
/// Poisson(p_crosstalk) number of children, so the total cascade size per
/// ancestor is Borel distributed with mean 1/(1 - p_crosstalk). A child is
/// prompt (same timestamp) with probability 1 - f_delayed_ct, otherwise
/// delayed by an Exponential(tau_delayed_ct) interval. Returns the offspring
/// only. `budget` limits the total cascade size.
std::vector<CellEvent> add_crosstalk(std::span<const CellEvent> parents,
                                     const SiPMConfig& cfg, RandomStream& rng,
                                     std::size_t budget = kMaxEventsPerShot);

/// Afterpulse cascade: Poisson(p_afterpulse) offspring per event, delayed by
/// Exponential(tau_afterpulse), with amplitude reduced by the recharge factor
/// 1 - exp(-dt/recovery_tau). Returns the offspring only.
std::vector<CellEvent> add_afterpulses(std::span<const CellEvent> parents,
                                       const SiPMConfig& cfg,
                                       double recovery_tau, RandomStream& rng,
                                       std::size_t budget = kMaxEventsPerShot);

/// Full per-shot event list: photon detections at t = 0, dark counts, then
/// cross-talk applied to all events and afterpulses applied to all events.
/// Events past the window end are dropped; the list is sorted by time.
/// Deterministic for a fixed random stream.
EventList build_event_list(int n_photons, const SiPMConfig& cfg,
                           const PulseKernel& kernel, const Window& window,
                           RandomStream& rng);

/// Analog output at time t: superposition of standard pulses,
/// v(t) = sum_j weight_j k(t - time_j). Exact, no grid.
double evaluate_waveform(const EventList& ev, const PulseKernel& kernel,
                         double t);

/// Waveform on the uniform grid t0, t0+dt, ..., t0+(n-1)dt. Uses the exact
/// two-exponential state recurrence, so it equals pointwise evaluation up to
/// rounding but costs O(n + events) instead of O(n * events).
std::vector<double> evaluate_waveform_grid(const EventList& ev,
                                           const PulseKernel& kernel,
                                           double t0, double dt, int n);

}  // namespace twbsim::sipm
