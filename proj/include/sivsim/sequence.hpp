#pragma once

// Multi-channel pulse sequences: laser gating and bias voltage against time,
// in integer nanoseconds, plus the built-in measurement protocols.

#include <chrono>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sivsim/model.hpp"

namespace sivsim {

using Duration = std::chrono::nanoseconds;
using namespace std::chrono_literals;

/// Segment tags the analysis layer keys its windows on.
namespace tags {
inline constexpr const char* kInit = "init";
inline constexpr const char* kProbe = "probe";
inline constexpr const char* kGap = "gap";
inline constexpr const char* kReadout = "readout";
inline constexpr const char* kPulse1 = "pulse1";
inline constexpr const char* kDelay = "delay";
inline constexpr const char* kPulse2 = "pulse2";
inline constexpr const char* kDwell = "dwell";
inline constexpr const char* kRepetitionGap = "repetition_gap";
}  // namespace tags

struct Segment {
  Duration duration{0};
  std::vector<LaserChannel> channels;
  double voltage_v = 0.0;
  std::string tag;

  const LaserChannel* channel(LaserColor color) const {
    for (const auto& ch : channels) {
      if (ch.color == color) return &ch;
    }
    return nullptr;
  }

  bool operator==(const Segment&) const = default;
};

struct PulseSequence {
  std::vector<Segment> segments;
  std::int64_t repetitions = 1;
  std::string label;
  /// Allows the bias to change between segments.
  bool voltage_stepped = false;

  Duration period() const {
    Duration total{0};
    for (const auto& s : segments) total += s.duration;
    return total;
  }

  /// Start time of segment i relative to the sequence start.
  Duration segment_start(std::size_t i) const {
    Duration t{0};
    for (std::size_t k = 0; k < i && k < segments.size(); ++k) t += segments[k].duration;
    return t;
  }

  /// Index of the first segment carrying the tag, or -1.
  std::ptrdiff_t find_tag(std::string_view tag) const {
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (segments[i].tag == tag) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
  }

  bool operator==(const PulseSequence&) const = default;
};

/// Returns every invariant violation of the sequence; empty means valid.
inline std::vector<std::string> validate(const PulseSequence& seq) {
  std::vector<std::string> errors;
  if (seq.segments.empty()) errors.emplace_back("sequence has no segments");
  if (seq.repetitions < 1) errors.emplace_back("repetitions must be >= 1");
  for (std::size_t i = 0; i < seq.segments.size(); ++i) {
    const auto& s = seq.segments[i];
    const std::string where = "segment " + std::to_string(i) + ": ";
    if (s.duration <= Duration::zero()) errors.push_back(where + "non-positive duration");
    if (!std::isfinite(s.voltage_v)) errors.push_back(where + "non-finite voltage");
    std::set<LaserColor> seen;
    for (const auto& ch : s.channels) {
      if (!seen.insert(ch.color).second) {
        errors.push_back(where + "duplicate color " + std::string(to_string(ch.color)));
      }
      if (!std::isfinite(ch.power_uw) || ch.power_uw < 0.0) {
        errors.push_back(where + "negative or non-finite power on " +
                         std::string(to_string(ch.color)));
      }
      if (!std::isfinite(ch.detuning_mhz)) {
        errors.push_back(where + "non-finite detuning on " + std::string(to_string(ch.color)));
      }
    }
    if (!seq.voltage_stepped && i > 0 && s.voltage_v != seq.segments[0].voltage_v) {
      errors.push_back(where + "voltage step in a sequence not marked voltage_stepped");
    }
  }
  if (seq.period() <= Duration::zero() && !seq.segments.empty()) {
    errors.emplace_back("period must be > 0");
  }
  return errors;
}

class InvalidSequence : public std::invalid_argument {
 public:
  explicit InvalidSequence(const std::vector<std::string>& errors)
      : std::invalid_argument(join(errors)), errors_(errors) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errors) {
    std::string out = "invalid pulse sequence";
    for (const auto& e : errors) out += "; " + e;
    return out;
  }
  std::vector<std::string> errors_;
};

inline void require_valid(const PulseSequence& seq) {
  auto errors = validate(seq);
  if (!errors.empty()) throw InvalidSequence(errors);
}

// --- Built-in protocols -----------------------------------------------------

/// Green initialization (5 ms, 1 ms resonant probe centered in it), 2 ms dark
/// gap, 38 ms resonant readout. The readout uses the probe power.
inline PulseSequence protocol_fig1(double probe_power_uw, double green_power_uw,
                                   double voltage_v = 0.0) {
  if (probe_power_uw < 0.0 || green_power_uw < 0.0) {
    throw std::invalid_argument("protocol_fig1: powers must be >= 0");
  }
  const auto green = LaserChannel::green(green_power_uw);
  const auto probe = LaserChannel::resonant(probe_power_uw);
  PulseSequence seq;
  seq.label = "fig1";
  seq.segments = {
      {2ms, {green}, voltage_v, tags::kInit},
      {1ms, {green, probe}, voltage_v, tags::kProbe},
      {2ms, {green}, voltage_v, tags::kInit},
      {2ms, {}, voltage_v, tags::kGap},
      {38ms, {probe}, voltage_v, tags::kReadout},
  };
  return seq;
}

struct Fig3Powers {
  double resonant_uw = 13.0;
  double green_uw = 300.0;
  /// Near-resonant power when switched on; the protocol uses the resonant power.
  double near_resonant_uw = 13.0;
  double near_resonant_detuning_mhz = kNearResonantDetuningMHz;
};

/// Green 5 ms, dark tau1 = 2 ms, resonant 10 ms, delay tau2, resonant 10 ms.
/// The near-resonant laser, when on, runs through every segment. A zero tau2
/// drops the delay segment so the two pulses abut.
inline PulseSequence protocol_fig3(Duration tau2, bool near_resonant_on, double voltage_v,
                                   const Fig3Powers& powers = {}) {
  if (tau2 < Duration::zero()) throw std::invalid_argument("protocol_fig3: tau2 must be >= 0");
  const auto nr = LaserChannel::near_resonant(near_resonant_on ? powers.near_resonant_uw : 0.0,
                                              powers.near_resonant_detuning_mhz);
  auto with_nr = [&](std::vector<LaserChannel> chs) {
    chs.push_back(nr);
    return chs;
  };
  const auto green = LaserChannel::green(powers.green_uw);
  const auto res = LaserChannel::resonant(powers.resonant_uw);
  PulseSequence seq;
  seq.label = near_resonant_on ? "fig3_nr_on" : "fig3_nr_off";
  seq.segments.push_back({5ms, with_nr({green}), voltage_v, tags::kInit});
  seq.segments.push_back({2ms, with_nr({}), voltage_v, tags::kGap});
  seq.segments.push_back({10ms, with_nr({res}), voltage_v, tags::kPulse1});
  if (tau2 > Duration::zero()) {
    seq.segments.push_back({tau2, with_nr({}), voltage_v, tags::kDelay});
  }
  seq.segments.push_back({10ms, with_nr({res}), voltage_v, tags::kPulse2});
  return seq;
}

/// One point of a PLE scan: green and a detuned resonant laser together, CW.
inline PulseSequence protocol_ple_point(double resonant_power_uw, double detuning_mhz,
                                        double green_power_uw, double voltage_v, Duration dwell) {
  PulseSequence seq;
  seq.label = "ple";
  seq.segments = {{dwell,
                   {LaserChannel::green(green_power_uw),
                    LaserChannel::resonant(resonant_power_uw, detuning_mhz)},
                   voltage_v,
                   tags::kDwell}};
  return seq;
}

/// Appends a no-laser segment between repetitions.
inline void append_repetition_gap(PulseSequence& seq, Duration gap) {
  if (gap <= Duration::zero() || seq.segments.empty()) return;
  seq.segments.push_back({gap, {}, seq.segments.back().voltage_v, tags::kRepetitionGap});
}

}  // namespace sivsim
