#pragma once

// Charge-state rate model of a single silicon-vacancy center: three states
// (SiV- ground manifold, SiV- excited manifold, dark SiV2-) and the five
// transition rates as functions of laser channels and bias voltage.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sivsim {

enum class ChargeState : std::uint8_t { BrightGround = 0, BrightExcited = 1, Dark = 2 };

inline constexpr std::size_t kNumStates = 3;
inline constexpr std::array<ChargeState, kNumStates> kAllStates{
    ChargeState::BrightGround, ChargeState::BrightExcited, ChargeState::Dark};

constexpr std::size_t index(ChargeState s) { return static_cast<std::size_t>(s); }
constexpr bool is_bright(ChargeState s) { return s != ChargeState::Dark; }

constexpr std::string_view to_string(ChargeState s) {
  switch (s) {
    case ChargeState::BrightGround: return "BrightGround";
    case ChargeState::BrightExcited: return "BrightExcited";
    case ChargeState::Dark: return "Dark";
  }
  return "?";
}

inline ChargeState parse_charge_state(std::string_view name) {
  for (auto s : kAllStates) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown charge state '" + std::string(name) + "'");
}

enum class LaserColor : std::uint8_t { Green = 0, Resonant = 1, NearResonant = 2 };

inline constexpr std::array<LaserColor, 3> kAllColors{
    LaserColor::Green, LaserColor::Resonant, LaserColor::NearResonant};

constexpr std::string_view to_string(LaserColor c) {
  switch (c) {
    case LaserColor::Green: return "green";
    case LaserColor::Resonant: return "resonant";
    case LaserColor::NearResonant: return "near_resonant";
  }
  return "?";
}

inline LaserColor parse_laser_color(std::string_view name) {
  for (auto c : kAllColors) {
    if (to_string(c) == name) return c;
  }
  throw std::invalid_argument("unknown laser color '" + std::string(name) + "'");
}

/// 4.6 meV expressed as an optical frequency offset in MHz.
inline constexpr double kNearResonantDetuningMHz = 4.6e-3 / 4.135667696e-15 * 1e-6;

struct LaserChannel {
  LaserColor color = LaserColor::Resonant;
  double power_uw = 0.0;
  /// Offset from the zero-phonon transition. Ignored for Green.
  double detuning_mhz = 0.0;

  static LaserChannel green(double power_uw) { return {LaserColor::Green, power_uw, 0.0}; }
  static LaserChannel resonant(double power_uw, double detuning_mhz = 0.0) {
    return {LaserColor::Resonant, power_uw, detuning_mhz};
  }
  static LaserChannel near_resonant(double power_uw,
                                    double detuning_mhz = kNearResonantDetuningMHz) {
    return {LaserColor::NearResonant, power_uw, detuning_mhz};
  }

  bool operator==(const LaserChannel&) const = default;
};

/// Hole-generation yield per microwatt for each laser color.
struct HoleYield {
  double green = 0.0;
  double resonant = 0.0;
  double near_resonant = 0.0;

  double operator[](LaserColor c) const {
    switch (c) {
      case LaserColor::Green: return green;
      case LaserColor::Resonant: return resonant;
      case LaserColor::NearResonant: return near_resonant;
    }
    return 0.0;
  }
  double& operator[](LaserColor c) {
    if (c == LaserColor::Green) return green;
    if (c == LaserColor::Resonant) return resonant;
    return near_resonant;
  }

  bool operator==(const HoleYield&) const = default;
};

/// All physical rates of one emitter. Defaults are the calibrated
/// "emitter_a" profile (see configs/profiles.yaml).
struct ChargeModelParams {
  double gamma_rad_hz = 1.0 / 1.7e-9;
  double zpl_branching = 0.7;
  double gamma0_mhz = 220.0;
  double p_sat_uw = 60.0;
  double r_max_hz = 1.2e7;
  double k_ion_hz = 1.4e5;
  /// Relative increase of photoionization per unit of normalized field overdrive
  /// max(0, V - v_field_ion) / v_field_ion.
  double k_ion_field_gain = 5.0;
  double green_exc_hz_per_uw = 1000.0;
  HoleYield hole_gen{1000.0, 2.45e-3, 3.1e-4};
  double c_capture_hz = 1.0;
  double v_half_v = 3.0;
  double f_max = 1.0e5;
  double v_field_ion_v = 120.0;
  double k_field_ion_hz = 400.0;

  bool operator==(const ChargeModelParams&) const = default;

  /// Complete list of invariant violations; empty when valid.
  std::vector<std::string> validate() const {
    std::vector<std::string> errors;
    auto check = [&](bool ok, const char* what) {
      if (!ok) errors.emplace_back(what);
    };
    auto nonneg = [](double x) { return std::isfinite(x) && x >= 0.0; };
    check(nonneg(gamma_rad_hz), "gamma_rad_hz must be >= 0");
    check(std::isfinite(zpl_branching) && zpl_branching >= 0.0 && zpl_branching <= 1.0,
          "zpl_branching must lie in [0, 1]");
    check(std::isfinite(gamma0_mhz) && gamma0_mhz > 0.0, "gamma0_mhz must be > 0");
    check(std::isfinite(p_sat_uw) && p_sat_uw > 0.0, "p_sat_uw must be > 0");
    check(nonneg(r_max_hz), "r_max_hz must be >= 0");
    check(nonneg(k_ion_hz), "k_ion_hz must be >= 0");
    check(nonneg(k_ion_field_gain), "k_ion_field_gain must be >= 0");
    check(nonneg(green_exc_hz_per_uw), "green_exc_hz_per_uw must be >= 0");
    check(nonneg(hole_gen.green) && nonneg(hole_gen.resonant) &&
              nonneg(hole_gen.near_resonant),
          "hole_gen yields must be >= 0");
    check(nonneg(c_capture_hz), "c_capture_hz must be >= 0");
    check(std::isfinite(v_half_v) && v_half_v > 0.0, "v_half_v must be > 0");
    check(std::isfinite(f_max) && f_max >= 1.0, "f_max must be >= 1");
    check(std::isfinite(v_field_ion_v) && v_field_ion_v > 0.0, "v_field_ion_v must be > 0");
    check(nonneg(k_field_ion_hz), "k_field_ion_hz must be >= 0");
    return errors;
  }
};

/// Rates of the five allowed transitions, in Hz.
struct RateSet {
  double excitation = 0.0;       // BrightGround -> BrightExcited
  double decay = 0.0;            // BrightExcited -> BrightGround, emits a photon
  double photoionization = 0.0;  // BrightExcited -> Dark
  double field_ionization = 0.0; // BrightGround -> Dark
  double capture = 0.0;          // Dark -> BrightGround

  double rate(ChargeState from, ChargeState to) const {
    using S = ChargeState;
    if (from == S::BrightGround && to == S::BrightExcited) return excitation;
    if (from == S::BrightExcited && to == S::BrightGround) return decay;
    if (from == S::BrightExcited && to == S::Dark) return photoionization;
    if (from == S::BrightGround && to == S::Dark) return field_ionization;
    if (from == S::Dark && to == S::BrightGround) return capture;
    return 0.0;
  }

  double exit_rate(ChargeState from) const {
    double total = 0.0;
    for (auto to : kAllStates) {
      if (to != from) total += rate(from, to);
    }
    return total;
  }

  bool all_zero() const {
    return excitation == 0.0 && decay == 0.0 && photoionization == 0.0 &&
           field_ionization == 0.0 && capture == 0.0;
  }

  bool operator==(const RateSet&) const = default;
};

/// Saturated, power-broadened Lorentzian excitation rate of a narrow-band laser.
inline double excitation_rate(double power_uw, double detuning_mhz, const ChargeModelParams& p) {
  if (power_uw <= 0.0) return 0.0;
  const double s = power_uw / p.p_sat_uw;
  const double x = 2.0 * detuning_mhz / p.gamma0_mhz;
  return p.r_max_hz * s / (1.0 + s + x * x);
}

/// Power-broadened FWHM of the excitation line, Gamma0 * sqrt(1 + s).
inline double broadened_linewidth_mhz(double power_uw, const ChargeModelParams& p) {
  return p.gamma0_mhz * std::sqrt(1.0 + std::max(power_uw, 0.0) / p.p_sat_uw);
}

/// Drift enhancement of the hole flux: 1 for V <= 0, saturating at f_max.
inline double drift_factor(double voltage_v, const ChargeModelParams& p) {
  const double v = std::max(voltage_v, 0.0);
  return 1.0 + (p.f_max - 1.0) * v / (v + p.v_half_v);
}

/// Normalized overdrive above the field-ionization onset.
inline double field_overdrive(double voltage_v, const ChargeModelParams& p) {
  return std::max(0.0, voltage_v - p.v_field_ion_v) / p.v_field_ion_v;
}

inline double hole_flux(std::span<const LaserChannel> channels, double voltage_v,
                        const ChargeModelParams& p) {
  double generated = 0.0;
  for (const auto& ch : channels) {
    if (ch.power_uw > 0.0) generated += p.hole_gen[ch.color] * ch.power_uw;
  }
  if (generated == 0.0) return 0.0;
  return drift_factor(voltage_v, p) * generated;
}

inline bool any_illumination(std::span<const LaserChannel> channels) {
  return std::any_of(channels.begin(), channels.end(),
                     [](const LaserChannel& ch) { return ch.power_uw > 0.0; });
}

/// Assembles the transition rates for one set of active channels at one bias.
/// The optical cycle (radiative decay and photoionization out of
/// BrightExcited) only runs while some channel illuminates the emitter; in the
/// dark only field ionization can act.
inline RateSet build_rates(std::span<const LaserChannel> channels, double voltage_v,
                           const ChargeModelParams& p) {
  RateSet r;
  for (const auto& ch : channels) {
    if (ch.power_uw <= 0.0) continue;
    if (ch.color == LaserColor::Green) {
      r.excitation += p.green_exc_hz_per_uw * ch.power_uw;
    } else {
      r.excitation += excitation_rate(ch.power_uw, ch.detuning_mhz, p);
    }
  }
  const double overdrive = field_overdrive(voltage_v, p);
  if (any_illumination(channels)) {
    r.decay = p.gamma_rad_hz;
    r.photoionization = p.k_ion_hz * (1.0 + p.k_ion_field_gain * overdrive);
  }
  r.field_ionization = p.k_field_ion_hz * overdrive;
  r.capture = p.c_capture_hz * hole_flux(channels, voltage_v, p);
  return r;
}

/// Quasi-steady fraction of the bright manifold sitting in BrightExcited.
inline double excited_fraction(const RateSet& r) {
  const double denom = r.excitation + r.decay + r.photoionization;
  return denom > 0.0 ? r.excitation / denom : 0.0;
}

/// Bright -> dark rate under resonant-only illumination with capture switched off.
inline double effective_bright_to_dark_rate(const ChargeModelParams& p, double resonant_power_uw,
                                            double detuning_mhz = 0.0) {
  const double excitation = excitation_rate(resonant_power_uw, detuning_mhz, p);
  if (excitation == 0.0) return 0.0;
  const double pi_e = excitation / (excitation + p.gamma_rad_hz + p.k_ion_hz);
  return p.k_ion_hz * pi_e;
}

/// Two-state (bright/dark) rates with BrightExcited adiabatically eliminated.
struct ReducedRates {
  double bright_to_dark = 0.0;
  double dark_to_bright = 0.0;
  double excited_fraction = 0.0;
  /// Emission rate of PSB photons from the bright manifold, before detection.
  double psb_emission = 0.0;
};

inline ReducedRates reduce(const RateSet& r, const ChargeModelParams& p) {
  ReducedRates out;
  out.excited_fraction = excited_fraction(r);
  const double pi_e = out.excited_fraction;
  out.bright_to_dark = r.photoionization * pi_e + r.field_ionization * (1.0 - pi_e);
  out.dark_to_bright = r.capture;
  out.psb_emission = pi_e * r.decay * (1.0 - p.zpl_branching);
  return out;
}

}  // namespace sivsim
