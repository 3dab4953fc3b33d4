#pragma once

// Detector model and sequence-synchronized TCSPC histograms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sivsim/engine.hpp"
#include "sivsim/random.hpp"
#include "sivsim/sequence.hpp"

namespace sivsim {

struct DetectorParams {
  /// Collection x filter x quantum efficiency for PSB photons.
  double efficiency = 0.045;
  double dark_rate_hz = 700.0;
  double dead_time_ns = 0.0;

  bool operator==(const DetectorParams&) const = default;

  std::vector<std::string> validate() const {
    std::vector<std::string> errors;
    if (!(efficiency >= 0.0 && efficiency <= 1.0)) errors.emplace_back("efficiency must lie in [0, 1]");
    if (!(std::isfinite(dark_rate_hz) && dark_rate_hz >= 0.0)) errors.emplace_back("dark_rate_hz must be >= 0");
    if (!(std::isfinite(dead_time_ns) && dead_time_ns >= 0.0)) errors.emplace_back("dead_time_ns must be >= 0");
    return errors;
  }
};

/// Expected detected rate for a population vector under constant channels.
/// Only the PSB band reaches the detector.
inline double expected_count_rate(const PopulationVector& p, const RateSet& rates,
                                  const ChargeModelParams& params, const DetectorParams& det) {
  return det.efficiency * rates.decay * (1.0 - params.zpl_branching) *
             p[ChargeState::BrightExcited] +
         det.dark_rate_hz;
}

inline double expected_count_rate(const PopulationVector& p, std::span<const LaserChannel> channels,
                                  double voltage_v, const ChargeModelParams& params,
                                  const DetectorParams& det) {
  return expected_count_rate(p, build_rates(channels, voltage_v, params), params, det);
}

struct TimeTag {
  std::int64_t time_ns;
  std::int64_t repetition;
};

struct TimeTagStream {
  std::vector<TimeTag> tags;
  std::int64_t period_ns = 0;
  std::int64_t total_repetitions = 0;
};

/// Tags of one repetition, sorted. Writes into `out` (cleared first) so hot
/// loops can reuse the allocation.
inline void detect_into(const Trajectory& traj, const DetectorParams& det, std::int64_t period_ns,
                        std::uint64_t seed, std::vector<std::int64_t>& out) {
  out.clear();
  if (period_ns <= 0) throw std::invalid_argument("detect: period must be > 0");
  double accept = det.efficiency;
  if (traj.psb_prethinning < 1.0) {
    if (traj.psb_prethinning <= 0.0) {
      accept = 0.0;
    } else {
      accept = det.efficiency / traj.psb_prethinning;
    }
    if (accept > 1.0 + 1e-12) {
      throw std::invalid_argument(
          "detect: detector efficiency exceeds the trajectory's PSB pre-thinning");
    }
  }
  Rng rng(seed);
  const double period = static_cast<double>(period_ns);
  for (const auto& e : traj.emissions) {
    if (e.band != EmissionBand::PSB) continue;
    if (accept < 1.0 && !(rng.uniform() < accept)) continue;
    if (e.time_ns < 0.0 || e.time_ns >= period) continue;
    out.push_back(static_cast<std::int64_t>(std::floor(e.time_ns)));
  }
  const auto n_signal = out.size();
  if (det.dark_rate_hz > 0.0) {
    const double rate_per_ns = det.dark_rate_hz * 1e-9;
    for (double t = rng.exponential(rate_per_ns); t < period; t += rng.exponential(rate_per_ns)) {
      out.push_back(static_cast<std::int64_t>(std::floor(t)));
    }
  }
  // Signal tags are already ordered; merge in the (ordered) dark tags.
  std::inplace_merge(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n_signal), out.end());
  if (det.dead_time_ns > 0.0 && !out.empty()) {
    std::size_t kept = 1;
    std::int64_t last = out[0];
    for (std::size_t i = 1; i < out.size(); ++i) {
      if (static_cast<double>(out[i] - last) >= det.dead_time_ns) {
        out[kept++] = out[i];
        last = out[i];
      }
    }
    out.resize(kept);
  }
}

inline TimeTagStream detect(const Trajectory& traj, const DetectorParams& det,
                            std::int64_t period_ns, std::uint64_t seed,
                            std::int64_t repetition = 0) {
  std::vector<std::int64_t> times;
  detect_into(traj, det, period_ns, seed, times);
  TimeTagStream s;
  s.period_ns = period_ns;
  s.total_repetitions = 1;
  s.tags.reserve(times.size());
  for (auto t : times) s.tags.push_back({t, repetition});
  return s;
}

class Histogram {
 public:
  Histogram() = default;
  Histogram(std::int64_t period_ns, std::int64_t bin_width_ns)
      : period_ns_(period_ns), bin_width_ns_(bin_width_ns) {
    if (period_ns <= 0) throw std::invalid_argument("histogram period must be > 0");
    if (bin_width_ns <= 0) throw std::invalid_argument("histogram bin width must be > 0");
    counts_.assign(static_cast<std::size_t>((period_ns + bin_width_ns - 1) / bin_width_ns), 0);
  }

  std::int64_t period_ns() const { return period_ns_; }
  std::int64_t bin_width_ns() const { return bin_width_ns_; }
  std::int64_t repetitions() const { return repetitions_; }
  std::size_t size() const { return counts_.size(); }
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  std::uint64_t count(std::size_t b) const { return counts_[b]; }

  std::int64_t bin_start(std::size_t b) const { return static_cast<std::int64_t>(b) * bin_width_ns_; }
  std::int64_t bin_end(std::size_t b) const { return std::min(bin_start(b) + bin_width_ns_, period_ns_); }
  std::int64_t bin_length(std::size_t b) const { return bin_end(b) - bin_start(b); }

  void add_tag(std::int64_t t_ns) {
    if (t_ns < 0 || t_ns >= period_ns_) throw std::out_of_range("tag outside the histogram period");
    ++counts_[static_cast<std::size_t>(t_ns / bin_width_ns_)];
  }
  void add_repetitions(std::int64_t n) { repetitions_ += n; }
  void add_count(std::size_t b, std::uint64_t n) { counts_.at(b) += n; }

  /// Adds one repetition's tags.
  void add_repetition(std::span<const std::int64_t> tags) {
    for (auto t : tags) add_tag(t);
    ++repetitions_;
  }

  void merge(const Histogram& other) {
    if (other.period_ns_ != period_ns_ || other.bin_width_ns_ != bin_width_ns_) {
      throw std::invalid_argument("cannot merge histograms with different period or binning");
    }
    for (std::size_t b = 0; b < counts_.size(); ++b) counts_[b] += other.counts_[b];
    repetitions_ += other.repetitions_;
  }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }

  /// Mean detected rate in bin b, Hz.
  double rate(std::size_t b) const { return static_cast<double>(counts_[b]) / exposure_s(b); }
  double rate_error(std::size_t b) const { return std::sqrt(static_cast<double>(counts_[b])) / exposure_s(b); }
  double bin_center_ms(std::size_t b) const {
    return 0.5 * static_cast<double>(bin_start(b) + bin_end(b)) * 1e-6;
  }

  /// Merges groups of `factor` adjacent bins.
  Histogram rebin(std::int64_t factor) const {
    if (factor < 1) throw std::invalid_argument("rebin factor must be >= 1");
    Histogram out(period_ns_, bin_width_ns_ * factor);
    for (std::size_t b = 0; b < counts_.size(); ++b) {
      out.counts_[b / static_cast<std::size_t>(factor)] += counts_[b];
    }
    out.repetitions_ = repetitions_;
    return out;
  }

  bool operator==(const Histogram&) const = default;

 private:
  double exposure_s(std::size_t b) const {
    if (repetitions_ <= 0) throw std::logic_error("histogram has no repetitions");
    return static_cast<double>(repetitions_) * static_cast<double>(bin_length(b)) * 1e-9;
  }

  std::int64_t period_ns_ = 0;
  std::int64_t bin_width_ns_ = 0;
  std::int64_t repetitions_ = 0;
  std::vector<std::uint64_t> counts_;
};

/// Histogram of independent repetitions. Each stream must share the period.
inline Histogram accumulate(std::span<const TimeTagStream> streams, std::int64_t bin_width_ns) {
  if (streams.empty()) throw std::invalid_argument("accumulate: no streams");
  const auto period = streams.front().period_ns;
  Histogram h(period, bin_width_ns);
  for (const auto& s : streams) {
    if (s.period_ns != period) throw std::invalid_argument("accumulate: mismatched sequence periods");
    for (const auto& tag : s.tags) h.add_tag(tag.time_ns);
    h.add_repetitions(s.total_repetitions);
  }
  return h;
}

struct RateEstimate {
  double rate_hz = 0.0;
  double error_hz = 0.0;
};

/// Mean raw rate over [start, stop); partial bins count by overlap fraction.
inline RateEstimate window_intensity(const Histogram& h, std::int64_t start_ns, std::int64_t stop_ns) {
  if (start_ns < 0 || stop_ns > h.period_ns()) throw std::out_of_range("window outside the period");
  if (stop_ns <= start_ns) throw std::invalid_argument("empty intensity window");
  if (h.repetitions() <= 0) throw std::invalid_argument("histogram has no repetitions");
  double n = 0.0;
  double var = 0.0;
  const auto first = static_cast<std::size_t>(start_ns / h.bin_width_ns());
  for (std::size_t b = first; b < h.size() && h.bin_start(b) < stop_ns; ++b) {
    const auto lo = std::max(start_ns, h.bin_start(b));
    const auto hi = std::min(stop_ns, h.bin_end(b));
    if (hi <= lo) continue;
    const double w = static_cast<double>(hi - lo) / static_cast<double>(h.bin_length(b));
    const double c = static_cast<double>(h.count(b));
    n += w * c;
    var += w * w * c;
  }
  const double exposure = static_cast<double>(h.repetitions()) * static_cast<double>(stop_ns - start_ns) * 1e-9;
  return {n / exposure, std::sqrt(var) / exposure};
}

}  // namespace sivsim
