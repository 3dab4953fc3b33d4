#pragma once

// Continuous-time Markov jump simulation of the charge/optical cycle over the
// piecewise-constant rates of a pulse sequence, and the master-equation
// propagator used as its oracle.
//
// Two engine modes:
//   Full     - all three states; every BrightExcited -> BrightGround jump emits
//              a photon (ZPL with probability zpl_branching, PSB otherwise).
//   Reduced  - BrightExcited adiabatically eliminated. The bright manifold is
//              reported as BrightGround and emits PSB photons as a Poisson
//              process at pi_e * gamma_rad * (1 - zpl) * prethinning.
//
// Segment boundaries: the pending exponential wait is truncated at the
// boundary and redrawn under the next segment's rates (memorylessness makes
// this exact).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "sivsim/generator.hpp"
#include "sivsim/model.hpp"
#include "sivsim/random.hpp"
#include "sivsim/sequence.hpp"

namespace sivsim {

enum class EngineMode : std::uint8_t { Full, Reduced };

constexpr std::string_view to_string(EngineMode m) {
  return m == EngineMode::Full ? "full" : "reduced";
}

inline EngineMode parse_engine_mode(std::string_view s) {
  if (s == "full") return EngineMode::Full;
  if (s == "reduced") return EngineMode::Reduced;
  throw std::invalid_argument("unknown engine mode '" + std::string(s) + "'");
}

enum class EmissionBand : std::uint8_t { ZPL, PSB };

struct Jump {
  double time_ns;
  ChargeState state;
};

struct Emission {
  double time_ns;
  EmissionBand band;
};

struct Trajectory {
  ChargeState initial_state = ChargeState::Dark;
  std::vector<Jump> jumps;
  std::vector<Emission> emissions;
  /// Fraction of PSB photons already kept by the engine (Reduced mode folds
  /// the detector efficiency in); 1 in Full mode.
  double psb_prethinning = 1.0;

  /// State occupied at time t (right-continuous).
  ChargeState state_at(double time_ns) const {
    auto it = std::upper_bound(jumps.begin(), jumps.end(), time_ns,
                               [](double t, const Jump& j) { return t < j.time_ns; });
    return it == jumps.begin() ? initial_state : std::prev(it)->state;
  }

  ChargeState final_state() const { return jumps.empty() ? initial_state : jumps.back().state; }
};

struct EngineOptions {
  EngineMode mode = EngineMode::Reduced;
  /// Reduced mode only: keep each PSB photon with this probability at the
  /// source (set to the detector efficiency by the measurement layer).
  double prethinning = 1.0;
  bool record_emissions = true;
};

/// Per-segment rates, precomputed once per (sequence, params).
struct CompiledSegment {
  double start_ns = 0.0;
  double end_ns = 0.0;
  RateSet rates;
  ReducedRates reduced;
  bool illuminated = false;
};

struct CompiledSequence {
  std::vector<CompiledSegment> segments;
  double period_ns = 0.0;
  double zpl_branching = 0.0;
};

inline CompiledSequence compile(const PulseSequence& seq, const ChargeModelParams& params) {
  require_valid(seq);
  CompiledSequence out;
  out.zpl_branching = params.zpl_branching;
  double t = 0.0;
  for (const auto& s : seq.segments) {
    CompiledSegment c;
    c.start_ns = t;
    t += static_cast<double>(s.duration.count());
    c.end_ns = t;
    c.rates = build_rates(s.channels, s.voltage_v, params);
    c.reduced = reduce(c.rates, params);
    c.illuminated = any_illumination(s.channels);
    out.segments.push_back(c);
  }
  out.period_ns = t;
  return out;
}

namespace detail {

// One competing event out of the current state.
struct Channel {
  double rate_per_ns;
  ChargeState to;
  bool emits;  // photon event (Full: decay jump; Reduced: self-loop)
};

struct StateChannels {
  std::array<Channel, 3> items{};
  int count = 0;
  double total = 0.0;

  void add(double rate_hz, ChargeState to, bool emits) {
    if (!(rate_hz > 0.0)) return;
    items[static_cast<std::size_t>(count++)] = {rate_hz * 1e-9, to, emits};
    total += rate_hz * 1e-9;
  }
};

inline std::array<StateChannels, kNumStates> channels_for(const CompiledSegment& seg,
                                                          const EngineOptions& opt) {
  using S = ChargeState;
  std::array<StateChannels, kNumStates> out{};
  const auto& r = seg.rates;
  if (opt.mode == EngineMode::Full) {
    out[index(S::BrightGround)].add(r.excitation, S::BrightExcited, false);
    out[index(S::BrightGround)].add(r.field_ionization, S::Dark, false);
    out[index(S::BrightExcited)].add(r.decay, S::BrightGround, true);
    out[index(S::BrightExcited)].add(r.photoionization, S::Dark, false);
    out[index(S::Dark)].add(r.capture, S::BrightGround, false);
  } else {
    out[index(S::BrightGround)].add(seg.reduced.bright_to_dark, S::Dark, false);
    if (opt.record_emissions) {
      out[index(S::BrightGround)].add(seg.reduced.psb_emission * opt.prethinning,
                                      S::BrightGround, true);
    }
    out[index(S::Dark)].add(seg.reduced.dark_to_bright, S::BrightGround, false);
  }
  return out;
}

}  // namespace detail

/// Core jump loop. The observer receives on_jump(t_ns, from, to) and
/// on_emission(t_ns, band); it is the only side effect.
template <class Observer>
ChargeState run_jump_process(const CompiledSequence& cs, ChargeState initial, Rng& rng,
                             const EngineOptions& opt, Observer& observer) {
  ChargeState state = initial;
  if (opt.mode == EngineMode::Reduced && state == ChargeState::BrightExcited) {
    state = ChargeState::BrightGround;
  }
  for (const auto& seg : cs.segments) {
    const auto table = detail::channels_for(seg, opt);
    double t = seg.start_ns;
    for (;;) {
      const auto& out = table[index(state)];
      if (out.count == 0) break;
      const double wait = rng.exponential(out.total);
      if (t + wait >= seg.end_ns) break;
      t += wait;
      double pick = rng.uniform() * out.total;
      const detail::Channel* chosen = &out.items[static_cast<std::size_t>(out.count - 1)];
      for (int k = 0; k < out.count; ++k) {
        const auto& item = out.items[static_cast<std::size_t>(k)];
        if (pick < item.rate_per_ns) {
          chosen = &item;
          break;
        }
        pick -= item.rate_per_ns;
      }
      if (chosen->emits) {
        EmissionBand band = EmissionBand::PSB;
        if (opt.mode == EngineMode::Full && rng.uniform() < cs.zpl_branching) {
          band = EmissionBand::ZPL;
        }
        observer.on_emission(t, band);
      }
      if (chosen->to != state) {
        observer.on_jump(t, state, chosen->to);
        state = chosen->to;
      }
    }
  }
  return state;
}

namespace detail {

struct RecordingObserver {
  Trajectory* traj;
  bool keep_emissions;
  void on_jump(double t, ChargeState, ChargeState to) { traj->jumps.push_back({t, to}); }
  void on_emission(double t, EmissionBand band) {
    if (keep_emissions) traj->emissions.push_back({t, band});
  }
};

}  // namespace detail

inline Trajectory simulate_trajectory(const CompiledSequence& cs, ChargeState initial,
                                      std::uint64_t seed, const EngineOptions& opt = {}) {
  Trajectory traj;
  traj.initial_state = initial;
  if (opt.mode == EngineMode::Reduced) {
    if (!(opt.prethinning >= 0.0 && opt.prethinning <= 1.0)) {
      throw std::invalid_argument("prethinning must lie in [0, 1]");
    }
    traj.psb_prethinning = opt.prethinning;
    if (initial == ChargeState::BrightExcited) traj.initial_state = ChargeState::BrightGround;
  }
  Rng rng(seed);
  detail::RecordingObserver obs{&traj, opt.record_emissions};
  run_jump_process(cs, initial, rng, opt, obs);
  return traj;
}

inline Trajectory simulate_trajectory(const PulseSequence& seq, const ChargeModelParams& params,
                                      ChargeState initial, std::uint64_t seed,
                                      const EngineOptions& opt = {}) {
  return simulate_trajectory(compile(seq, params), initial, seed, opt);
}

/// Records the state at sorted checkpoint times without storing the path.
struct CheckpointObserver {
  std::span<const double> times_ns;
  std::vector<ChargeState> states;
  ChargeState current;
  std::size_t next = 0;

  CheckpointObserver(std::span<const double> times, ChargeState initial)
      : times_ns(times), current(initial) {
    states.reserve(times.size());
  }
  void on_jump(double t, ChargeState, ChargeState to) {
    while (next < times_ns.size() && times_ns[next] < t) {
      states.push_back(current);
      ++next;
    }
    current = to;
  }
  void on_emission(double, EmissionBand) {}
  void finish() {
    while (next < times_ns.size()) {
      states.push_back(current);
      ++next;
    }
  }
};

// --- Master-equation oracle -------------------------------------------------

struct PopulationVector {
  Vec3 p{};

  static PopulationVector pure(ChargeState s) {
    PopulationVector v;
    v.p[index(s)] = 1.0;
    return v;
  }
  double operator[](ChargeState s) const { return p[index(s)]; }
  double bright() const { return p[index(ChargeState::BrightGround)] + p[index(ChargeState::BrightExcited)]; }
  double sum() const { return p[0] + p[1] + p[2]; }
};

struct PopulationSample {
  double time_ns;
  PopulationVector populations;
};

namespace detail {

inline void require_normalized(const PopulationVector& v) {
  for (double x : v.p) {
    if (!(x >= 0.0 && x <= 1.0)) {
      throw std::invalid_argument("population entries must lie in [0, 1]");
    }
  }
  if (std::abs(v.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("initial population vector is not normalized");
  }
}

}  // namespace detail

/// Populations at arbitrary sorted times in [0, period], by exact per-segment
/// matrix exponentials.
inline std::vector<PopulationSample> populations_at(const CompiledSequence& cs,
                                                    const PopulationVector& initial,
                                                    std::span<const double> times_ns) {
  detail::require_normalized(initial);
  if (!std::is_sorted(times_ns.begin(), times_ns.end())) {
    throw std::invalid_argument("checkpoint times must be sorted");
  }
  std::vector<PopulationSample> out;
  out.reserve(times_ns.size());
  Vec3 p = initial.p;
  double now = 0.0;
  std::size_t next = 0;
  while (next < times_ns.size() && times_ns[next] <= 0.0) {
    out.push_back({times_ns[next++], {p}});
  }
  for (const auto& seg : cs.segments) {
    const Mat3 q = generator(seg.rates);
    double cached_dt = -1.0;
    Mat3 cached{};
    while (next < times_ns.size() && times_ns[next] <= seg.end_ns) {
      const double dt = times_ns[next] - now;
      if (dt != cached_dt) {
        cached = transition_matrix(q, dt * 1e-9);
        cached_dt = dt;
      }
      p = propagate(p, cached);
      now = times_ns[next];
      out.push_back({times_ns[next++], {p}});
    }
    if (seg.end_ns > now) {
      p = propagate(p, transition_matrix(q, (seg.end_ns - now) * 1e-9));
      now = seg.end_ns;
    }
  }
  for (; next < times_ns.size(); ++next) out.push_back({times_ns[next], {p}});
  return out;
}

/// Populations sampled every grid_ns from 0 through the period.
inline std::vector<PopulationSample> propagate_populations(const PulseSequence& seq,
                                                           const ChargeModelParams& params,
                                                           const PopulationVector& initial,
                                                           Duration grid) {
  if (grid <= Duration::zero()) throw std::invalid_argument("grid step must be > 0");
  detail::require_normalized(initial);
  const auto cs = compile(seq, params);
  std::vector<double> times;
  const auto period = seq.period().count();
  for (std::int64_t t = 0; t <= period; t += grid.count()) times.push_back(static_cast<double>(t));
  return populations_at(cs, initial, times);
}

/// Stationary distribution of constant rates (uniform over an absorbing set
/// is not defined; returns the limit from the given start instead).
inline PopulationVector steady_state(const RateSet& r, const PopulationVector& start) {
  // Long-time limit: propagate well past the slowest relaxation.
  double slowest = std::numeric_limits<double>::infinity();
  for (double rate : {r.excitation, r.decay, r.photoionization, r.field_ionization, r.capture}) {
    if (rate > 0.0) slowest = std::min(slowest, rate);
  }
  if (!std::isfinite(slowest)) return start;
  const auto m = transition_matrix(generator(r), 200.0 / slowest);
  return {propagate(start.p, m)};
}

}  // namespace sivsim
