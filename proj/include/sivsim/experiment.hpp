#pragma once

// Repetition-level drivers: synthetic TCSPC histograms and Monte Carlo state
// occupancy. Repetition r always uses the seeds derived from (seed, r), and
// work is split into fixed-size chunks, so results are independent of the
// worker count.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "sivsim/engine.hpp"
#include "sivsim/parallel.hpp"
#include "sivsim/photonics.hpp"

namespace sivsim {

inline constexpr std::int64_t kRepetitionChunk = 512;

struct Measurement {
  PulseSequence sequence;
  ChargeModelParams params;
  DetectorParams detector;
  EngineMode mode = EngineMode::Reduced;
  ChargeState initial_state = ChargeState::Dark;
  std::int64_t repetitions = 1;
  std::uint64_t seed = 0;
  std::int64_t bin_width_ns = 100'000;
};

inline EngineOptions engine_options_for(const Measurement& m) {
  EngineOptions opt;
  opt.mode = m.mode;
  opt.prethinning = m.mode == EngineMode::Reduced ? m.detector.efficiency : 1.0;
  return opt;
}

inline Histogram simulate_histogram(const Measurement& m, unsigned workers = 1) {
  if (m.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  if (auto errs = m.params.validate(); !errs.empty()) throw std::invalid_argument("invalid model parameters: " + errs.front());
  if (auto errs = m.detector.validate(); !errs.empty()) throw std::invalid_argument("invalid detector: " + errs.front());
  const auto cs = compile(m.sequence, m.params);
  const auto period = m.sequence.period().count();
  const auto opt = engine_options_for(m);
  const auto n_chunks = static_cast<std::size_t>((m.repetitions + kRepetitionChunk - 1) / kRepetitionChunk);
  std::vector<Histogram> partial(n_chunks, Histogram(period, m.bin_width_ns));
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    const auto first = static_cast<std::int64_t>(c) * kRepetitionChunk;
    const auto last = std::min(first + kRepetitionChunk, m.repetitions);
    std::vector<std::int64_t> tags;
    for (auto r = first; r < last; ++r) {
      const auto rep = static_cast<std::uint64_t>(r);
      const auto traj = simulate_trajectory(cs, m.initial_state, derive_seed(m.seed, StreamDomain::Trajectory, rep), opt);
      detect_into(traj, m.detector, period, derive_seed(m.seed, StreamDomain::Detection, rep), tags);
      partial[c].add_repetition(tags);
    }
  });
  Histogram total(period, m.bin_width_ns);
  for (const auto& h : partial) total.merge(h);
  return total;
}

/// Number of trajectories found in the bright manifold at each checkpoint.
inline std::vector<std::uint64_t> bright_counts(const CompiledSequence& cs, ChargeState initial,
                                                std::span<const double> checkpoints_ns, std::int64_t trajectories,
                                                std::uint64_t seed, EngineMode mode, unsigned workers = 1) {
  EngineOptions opt;
  opt.mode = mode;
  opt.record_emissions = false;
  const auto n_chunks = static_cast<std::size_t>((trajectories + kRepetitionChunk - 1) / kRepetitionChunk);
  std::vector<std::vector<std::uint64_t>> partial(n_chunks, std::vector<std::uint64_t>(checkpoints_ns.size(), 0));
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    const auto first = static_cast<std::int64_t>(c) * kRepetitionChunk;
    const auto last = std::min(first + kRepetitionChunk, trajectories);
    for (auto r = first; r < last; ++r) {
      Rng rng(derive_seed(seed, StreamDomain::Trajectory, static_cast<std::uint64_t>(r)));
      CheckpointObserver obs(checkpoints_ns, initial);
      run_jump_process(cs, initial, rng, opt, obs);
      obs.finish();
      for (std::size_t k = 0; k < obs.states.size(); ++k) {
        if (is_bright(obs.states[k])) ++partial[c][k];
      }
    }
  });
  std::vector<std::uint64_t> total(checkpoints_ns.size(), 0);
  for (const auto& p : partial) {
    for (std::size_t k = 0; k < p.size(); ++k) total[k] += p[k];
  }
  return total;
}

}  // namespace sivsim
