#include "twbsim/sipm.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "twbsim/errors.hpp"

namespace twbsim::sipm {

void PulseKernel::validate() const {
  if (!(rise_tau > 0.0)) throw ConfigError("kernel rise_tau must be > 0");
  if (!(decay_tau > rise_tau))
    throw ConfigError("kernel decay_tau must exceed rise_tau");
  if (!(amplitude > 0.0)) throw ConfigError("kernel amplitude must be > 0");
}

double PulseKernel::peak_time() const {
  return std::log(decay_tau / rise_tau) * rise_tau * decay_tau /
         (decay_tau - rise_tau);
}

double PulseKernel::norm() const {
  const double tp = peak_time();
  return std::exp(-tp / decay_tau) - std::exp(-tp / rise_tau);
}

double PulseKernel::value(double t) const {
  if (t <= 0.0) return 0.0;
  return amplitude * (std::exp(-t / decay_tau) - std::exp(-t / rise_tau)) /
         norm();
}

double PulseKernel::integral(double x) const {
  if (x <= 0.0) return 0.0;
  return amplitude *
         (decay_tau * -std::expm1(-x / decay_tau) -
          rise_tau * -std::expm1(-x / rise_tau)) /
         norm();
}

double PulseKernel::single_cell_charge() const {
  return amplitude * (decay_tau - rise_tau) / norm();
}

void SiPMConfig::validate() const {
  if (n_cells < 1) throw ConfigError("n_cells must be >= 1");
  if (!(pde >= 0.0 && pde <= 1.0)) throw ConfigError("pde must lie in [0,1]");
  if (!(dark_rate >= 0.0)) throw ConfigError("dark_rate must be >= 0");
  if (!(p_crosstalk >= 0.0 && p_crosstalk < 1.0))
    throw ConfigError("p_crosstalk must lie in [0,1)");
  if (!(f_delayed_ct >= 0.0 && f_delayed_ct <= 1.0))
    throw ConfigError("f_delayed_ct must lie in [0,1]");
  if (!(tau_delayed_ct > 0.0)) throw ConfigError("tau_delayed_ct must be > 0");
  if (!(p_afterpulse >= 0.0 && p_afterpulse < 1.0))
    throw ConfigError("p_afterpulse must lie in [0,1)");
  if (!(tau_afterpulse > 0.0)) throw ConfigError("tau_afterpulse must be > 0");
  if (!(baseline_noise_sigma >= 0.0))
    throw ConfigError("baseline_noise_sigma must be >= 0");
}

void Window::validate() const {
  if (!(t_max > t_min)) throw ConfigError("window t_max must exceed t_min");
}

const char* to_string(EventOrigin origin) {
  switch (origin) {
    case EventOrigin::photon: return "photon";
    case EventOrigin::dark: return "dark";
    case EventOrigin::crosstalk: return "crosstalk";
    case EventOrigin::afterpulse: return "afterpulse";
  }
  return "unknown";
}

int occupancy_fired(int k, int n_cells, RandomStream& rng) {
  if (k <= 0) return 0;
  if (n_cells == 1) return 1;
  // Distinct cells among k uniform throws. k is small in practice, so a
  // sort-and-count over the hit list beats a full occupancy array.
  std::vector<std::uint32_t> hits(static_cast<std::size_t>(k));
  const std::uint64_t cells = static_cast<std::uint64_t>(n_cells);
  for (auto& h : hits)
    h = static_cast<std::uint32_t>(
        (static_cast<unsigned __int128>(rng()) * cells) >> 64);
  std::sort(hits.begin(), hits.end());
  int fired = 1;
  for (std::size_t i = 1; i < hits.size(); ++i)
    if (hits[i] != hits[i - 1]) ++fired;
  return fired;
}

int primary_detections(int n_photons, const SiPMConfig& cfg,
                       RandomStream& rng) {
  if (n_photons < 0) throw DomainError("negative photon number");
  if (n_photons == 0 || cfg.pde == 0.0) return 0;
  int k = n_photons;
  if (cfg.pde < 1.0) {
    std::binomial_distribution<int> thin(n_photons, cfg.pde);
    k = thin(rng);
  }
  return occupancy_fired(k, cfg.n_cells, rng);
}

std::vector<CellEvent> add_dark_counts(const Window& window, double dark_rate,
                                       RandomStream& rng) {
  window.validate();
  if (dark_rate < 0.0) throw DomainError("negative dark rate");
  std::vector<CellEvent> out;
  if (dark_rate == 0.0) return out;
  const double mean = dark_rate * window.width() * 1e-9;  // rate in 1/s, ns grid
  if (mean > static_cast<double>(kMaxEventsPerShot))
    throw CascadeOverflow("dark counts exceed the per-shot event cap of " +
                          std::to_string(kMaxEventsPerShot));
  std::poisson_distribution<int> count_dist(mean);
  const int count = count_dist(rng);
  if (static_cast<std::size_t>(count) > kMaxEventsPerShot)
    throw CascadeOverflow("dark counts exceed the per-shot event cap of " +
                          std::to_string(kMaxEventsPerShot));
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double t = window.t_min + rng.uniform() * window.width();
    out.push_back(CellEvent{t, 1.0, EventOrigin::dark});
  }
  return out;
}

namespace {

/// Shared branching cascade: breadth-first over parents and their offspring.
/// Offspring per node is Poisson(p), which makes the total progeny per
/// ancestor Borel(p): finite almost surely for p < 1, mean 1/(1-p).
template <class MakeChild>
std::vector<CellEvent> branch_cascade(std::span<const CellEvent> parents,
                                      double p, std::size_t budget,
                                      RandomStream& rng,
                                      MakeChild&& make_child) {
  std::vector<CellEvent> children;
  if (p <= 0.0 || parents.empty()) return children;
  std::poisson_distribution<int> offspring(p);
  std::size_t next = 0;
  while (true) {
    // copy: push_back below may reallocate the children vector
    CellEvent parent;
    if (next < parents.size()) {
      parent = parents[next];
    } else if (next - parents.size() < children.size()) {
      parent = children[next - parents.size()];
    } else {
      break;
    }
    ++next;
    const int n_children = offspring(rng);
    for (int c = 0; c < n_children; ++c) {
      if (parents.size() + children.size() >= budget)
        throw CascadeOverflow(
            "event cascade exceeded the per-shot cap of " +
            std::to_string(budget) + " events");
      children.push_back(make_child(parent, rng));
    }
  }
  return children;
}

}  // namespace

std::vector<CellEvent> add_crosstalk(std::span<const CellEvent> parents,
                                     const SiPMConfig& cfg, RandomStream& rng,
                                     std::size_t budget) {
  cfg.validate();
  return branch_cascade(
      parents, cfg.p_crosstalk, budget, rng,
      [&cfg](const CellEvent& parent, RandomStream& r) {
        double t = parent.time;
        if (cfg.f_delayed_ct > 0.0 && r.uniform() < cfg.f_delayed_ct) {
          std::exponential_distribution<double> delay(1.0 / cfg.tau_delayed_ct);
          t += delay(r);
        }
        return CellEvent{t, 1.0, EventOrigin::crosstalk};
      });
}

std::vector<CellEvent> add_afterpulses(std::span<const CellEvent> parents,
                                       const SiPMConfig& cfg,
                                       double recovery_tau, RandomStream& rng,
                                       std::size_t budget) {
  cfg.validate();
  if (!(recovery_tau > 0.0)) throw DomainError("recovery_tau must be > 0");
  return branch_cascade(
      parents, cfg.p_afterpulse, budget, rng,
      [&cfg, recovery_tau](const CellEvent& parent, RandomStream& r) {
        std::exponential_distribution<double> delay(1.0 / cfg.tau_afterpulse);
        const double dt = delay(r);
        const double weight = -std::expm1(-dt / recovery_tau);
        return CellEvent{parent.time + dt, weight, EventOrigin::afterpulse};
      });
}

EventList build_event_list(int n_photons, const SiPMConfig& cfg,
                           const PulseKernel& kernel, const Window& window,
                           RandomStream& rng) {
  cfg.validate();
  kernel.validate();
  window.validate();

  EventList out;
  out.window = window;
  auto& events = out.events;

  const int fired = primary_detections(n_photons, cfg, rng);
  events.resize(static_cast<std::size_t>(fired),
                CellEvent{0.0, 1.0, EventOrigin::photon});

  auto dark = add_dark_counts(window, cfg.dark_rate, rng);
  events.insert(events.end(), dark.begin(), dark.end());
  if (events.size() > kMaxEventsPerShot)
    throw CascadeOverflow("event list exceeds the per-shot cap of " +
                          std::to_string(kMaxEventsPerShot));

  auto ct = add_crosstalk(events, cfg, rng,
                          kMaxEventsPerShot - events.size());
  events.insert(events.end(), ct.begin(), ct.end());

  auto ap = add_afterpulses(events, cfg, kernel.decay_tau, rng,
                            kMaxEventsPerShot - events.size());
  events.insert(events.end(), ap.begin(), ap.end());

  // Delayed offspring can land past the acquisition end.
  std::erase_if(events,
                [&window](const CellEvent& e) { return e.time > window.t_max; });

  std::stable_sort(events.begin(), events.end(),
                   [](const CellEvent& a, const CellEvent& b) {
                     return a.time < b.time;
                   });
  return out;
}

double evaluate_waveform(const EventList& ev, const PulseKernel& kernel,
                         double t) {
  double v = 0.0;
  for (const auto& e : ev.events) v += e.weight * kernel.value(t - e.time);
  return v;
}

std::vector<double> evaluate_waveform_grid(const EventList& ev,
                                           const PulseKernel& kernel,
                                           double t0, double dt, int n) {
  if (n < 0) throw DomainError("grid size must be >= 0");
  if (!(dt > 0.0)) throw DomainError("grid step must be > 0");
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  if (n == 0) return out;

  // Each sample is A/norm * (D - R) where D and R are the superposed decay
  // and rise exponentials. Both obey x(t + dt) = x(t) * exp(-dt/tau), with
  // events folded in at the first sample at or after their start time.
  const double decay_step = std::exp(-dt / kernel.decay_tau);
  const double rise_step = std::exp(-dt / kernel.rise_tau);
  const double scale = kernel.amplitude / kernel.norm();

  double d_acc = 0.0, r_acc = 0.0;
  std::size_t next_event = 0;
  const auto& events = ev.events;
  // Events strictly before the first sample seed the accumulators.
  while (next_event < events.size() && events[next_event].time < t0) {
    const auto& e = events[next_event];
    d_acc += e.weight * std::exp(-(t0 - e.time) / kernel.decay_tau);
    r_acc += e.weight * std::exp(-(t0 - e.time) / kernel.rise_tau);
    ++next_event;
  }
  out[0] = scale * (d_acc - r_acc);

  double t_prev = t0;
  for (int i = 1; i < n; ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    d_acc *= decay_step;
    r_acc *= rise_step;
    while (next_event < events.size() && events[next_event].time < t) {
      const auto& e = events[next_event];
      if (e.time >= t_prev) {
        d_acc += e.weight * std::exp(-(t - e.time) / kernel.decay_tau);
        r_acc += e.weight * std::exp(-(t - e.time) / kernel.rise_tau);
      }
      ++next_event;
    }
    out[static_cast<std::size_t>(i)] = scale * (d_acc - r_acc);
    t_prev = t;
  }
  return out;
}

}  // namespace twbsim::sipm
