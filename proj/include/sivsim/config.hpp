#pragma once

// Experiment configuration files (YAML) and model profiles.
//
//   label: fig1_decay
//   seed: 1234
//   repetitions: 20000
//   profile: emitter_a
//   model: { hole_gen.resonant: 0 }
//   protocol: { builtin: fig1, probe_power_uw: 13, green_power_uw: 300 }
//   sweep: { resonant_power_uw: [1.3, 2.6, 5.2] }
//
// Durations are strings with a unit ("5 ms", "100 us", "250 ns", "1.5 s")
// converted exactly to integer nanoseconds.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "sivsim/engine.hpp"
#include "sivsim/io.hpp"
#include "sivsim/model.hpp"
#include "sivsim/photonics.hpp"
#include "sivsim/sequence.hpp"

namespace sivsim {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// --- Durations ------------------------------------------------------------------

inline Duration parse_duration(std::string_view text) {
  auto trim = [](std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  };
  const std::string_view s = trim(text);
  std::size_t i = 0;
  while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.')) ++i;
  const std::string_view number = s.substr(0, i);
  const std::string_view unit = trim(s.substr(i));
  std::int64_t scale;
  if (unit == "s") {
    scale = 1'000'000'000;
  } else if (unit == "ms") {
    scale = 1'000'000;
  } else if (unit == "us" || unit == "\xC2\xB5s") {
    scale = 1'000;
  } else if (unit == "ns") {
    scale = 1;
  } else {
    throw std::invalid_argument("duration '" + std::string(text) + "' needs a unit (s, ms, us, ns)");
  }
  const auto dot = number.find('.');
  const std::string_view whole = number.substr(0, dot);
  const std::string_view frac = dot == std::string_view::npos ? std::string_view{} : number.substr(dot + 1);
  if ((whole.empty() && frac.empty()) || frac.find('.') != std::string_view::npos) {
    throw std::invalid_argument("malformed duration '" + std::string(text) + "'");
  }
  constexpr std::int64_t kMax = std::numeric_limits<std::int64_t>::max() / 10;
  std::int64_t value = 0;
  for (char c : whole) {
    if (value > kMax) throw std::invalid_argument("duration '" + std::string(text) + "' is too large");
    value = value * 10 + (c - '0');
  }
  if (value > std::numeric_limits<std::int64_t>::max() / scale) {
    throw std::invalid_argument("duration '" + std::string(text) + "' is too large");
  }
  std::int64_t ns = value * scale;
  std::int64_t place = scale;
  for (char c : frac) {
    const int digit = c - '0';
    if (place % 10 != 0) {
      if (digit != 0) throw std::invalid_argument("duration '" + std::string(text) + "' is not a whole number of ns");
      continue;
    }
    place /= 10;
    ns += digit * place;
  }
  return Duration{ns};
}

inline std::string format_duration(Duration d) {
  const auto ns = d.count();
  if (ns != 0 && ns % 1'000'000 == 0) return std::to_string(ns / 1'000'000) + " ms";
  if (ns != 0 && ns % 1'000 == 0) return std::to_string(ns / 1'000) + " us";
  if (ns == 0) return "0 ms";
  return std::to_string(ns) + " ns";
}

// --- Model parameters by name -------------------------------------------------------

namespace detail {

struct ParamField {
  const char* name;
  double ChargeModelParams::*scalar;
  LaserColor hole_color;
};

inline const std::vector<ParamField>& param_fields() {
  static const std::vector<ParamField> fields = {
      {"gamma_rad_hz", &ChargeModelParams::gamma_rad_hz, LaserColor::Green},
      {"zpl_branching", &ChargeModelParams::zpl_branching, LaserColor::Green},
      {"gamma0_mhz", &ChargeModelParams::gamma0_mhz, LaserColor::Green},
      {"p_sat_uw", &ChargeModelParams::p_sat_uw, LaserColor::Green},
      {"r_max_hz", &ChargeModelParams::r_max_hz, LaserColor::Green},
      {"k_ion_hz", &ChargeModelParams::k_ion_hz, LaserColor::Green},
      {"k_ion_field_gain", &ChargeModelParams::k_ion_field_gain, LaserColor::Green},
      {"green_exc_hz_per_uw", &ChargeModelParams::green_exc_hz_per_uw, LaserColor::Green},
      {"hole_gen.green", nullptr, LaserColor::Green},
      {"hole_gen.resonant", nullptr, LaserColor::Resonant},
      {"hole_gen.near_resonant", nullptr, LaserColor::NearResonant},
      {"c_capture_hz", &ChargeModelParams::c_capture_hz, LaserColor::Green},
      {"v_half_v", &ChargeModelParams::v_half_v, LaserColor::Green},
      {"f_max", &ChargeModelParams::f_max, LaserColor::Green},
      {"v_field_ion_v", &ChargeModelParams::v_field_ion_v, LaserColor::Green},
      {"k_field_ion_hz", &ChargeModelParams::k_field_ion_hz, LaserColor::Green},
  };
  return fields;
}

}  // namespace detail

inline std::vector<std::string> param_names() {
  std::vector<std::string> names;
  for (const auto& f : detail::param_fields()) names.emplace_back(f.name);
  return names;
}

inline double& param_ref(ChargeModelParams& p, std::string_view name) {
  for (const auto& f : detail::param_fields()) {
    if (name != f.name) continue;
    return f.scalar ? p.*(f.scalar) : p.hole_gen[f.hole_color];
  }
  throw std::invalid_argument("unknown model parameter '" + std::string(name) + "'");
}

inline double param_value(const ChargeModelParams& p, std::string_view name) {
  return param_ref(const_cast<ChargeModelParams&>(p), name);
}

// --- YAML helpers ---------------------------------------------------------------

namespace detail {

inline int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : 0; }

template <class T>
T scalar_as(const YAML::Node& n, const char* what) {
  if (!n.IsScalar()) throw ConfigError(std::string(what) + " must be a scalar", line_of(n));
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(std::string(what) + ": cannot parse '" + n.Scalar() + "'", line_of(n));
  }
}

inline double as_double(const YAML::Node& n, const char* what) { return scalar_as<double>(n, what); }
inline bool as_bool(const YAML::Node& n, const char* what) { return scalar_as<bool>(n, what); }
inline std::string as_string(const YAML::Node& n, const char* what) { return scalar_as<std::string>(n, what); }

inline std::int64_t as_int(const YAML::Node& n, const char* what) {
  return scalar_as<std::int64_t>(n, what);
}

inline Duration as_duration(const YAML::Node& n, const char* what) {
  const auto text = as_string(n, what);
  try {
    return parse_duration(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(what) + ": " + e.what(), line_of(n));
  }
}

inline void require_map(const YAML::Node& n, const char* what) {
  if (!n.IsMap()) throw ConfigError(std::string(what) + " must be a mapping", line_of(n));
}

inline void reject_unknown_keys(const YAML::Node& map, std::initializer_list<std::string_view> allowed,
                                const char* where) {
  for (const auto& kv : map) {
    const auto key = kv.first.Scalar();
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where, line_of(kv.first));
  }
}

template <class T, class Conv>
std::vector<T> as_list(const YAML::Node& n, const char* what, Conv conv) {
  if (!n.IsSequence()) throw ConfigError(std::string(what) + " must be a list", line_of(n));
  if (n.size() == 0) throw ConfigError(std::string(what) + ": sweep axis must not be empty", line_of(n));
  std::vector<T> out;
  for (const auto& item : n) out.push_back(conv(item, what));
  return out;
}

}  // namespace detail

// --- Config structure -------------------------------------------------------------

enum class BuiltinProtocol : std::uint8_t { None, Fig1, Fig3, Ple };

inline std::string_view to_string(BuiltinProtocol b) {
  switch (b) {
    case BuiltinProtocol::Fig1: return "fig1";
    case BuiltinProtocol::Fig3: return "fig3";
    case BuiltinProtocol::Ple: return "ple";
    case BuiltinProtocol::None: break;
  }
  return "";
}

struct ProtocolSpec {
  BuiltinProtocol builtin = BuiltinProtocol::Fig1;
  double voltage_v = 0.0;
  double green_power_uw = 300.0;
  // fig1
  double probe_power_uw = 13.0;
  // fig3 and ple
  double resonant_power_uw = 13.0;
  // fig3
  Duration tau2 = Duration{10'000'000};
  bool near_resonant_on = true;
  double near_resonant_power_uw = 13.0;
  double near_resonant_detuning_mhz = kNearResonantDetuningMHz;
  // ple
  double detuning_mhz = 0.0;
  Duration dwell = Duration{10'000'000};
  // explicit segment list (builtin == None)
  std::vector<Segment> segments;
  bool voltage_stepped = false;

  bool operator==(const ProtocolSpec&) const = default;
};

struct SweepAxes {
  std::optional<std::vector<bool>> near_resonant;
  std::optional<std::vector<double>> voltage_v;
  std::optional<std::vector<double>> resonant_power_uw;
  std::optional<std::vector<Duration>> tau2;

  bool operator==(const SweepAxes&) const = default;
};

struct PleScan {
  std::vector<double> resonant_power_uw;
  std::int64_t points = 41;
  /// Half-span of the scan in units of the expected broadened FWHM.
  double span_fwhm = 3.0;

  bool operator==(const PleScan&) const = default;
};

struct ExperimentConfig {
  std::string label;
  std::string profile = "emitter_a";
  /// Resolved relative to the config file; empty selects the built-in profiles.
  std::string profiles_file;
  std::vector<std::pair<std::string, double>> model_overrides;
  DetectorParams detector;
  ProtocolSpec protocol;
  SweepAxes sweep;
  std::optional<PleScan> ple;
  std::int64_t repetitions = 1000;
  std::optional<std::uint64_t> seed;
  EngineMode engine = EngineMode::Reduced;
  ChargeState initial_state = ChargeState::Dark;
  Duration bin_width = Duration{100'000};
  Duration repetition_gap = Duration{0};
  unsigned workers = 0;
  std::string output;

  bool operator==(const ExperimentConfig&) const = default;
};

// --- Profiles --------------------------------------------------------------------------

inline std::map<std::string, ChargeModelParams> builtin_profiles() { return {{"emitter_a", ChargeModelParams{}}}; }

inline ChargeModelParams parse_profile(const YAML::Node& n, const std::string& name) {
  detail::require_map(n, ("profile " + name).c_str());
  ChargeModelParams p;
  for (const auto& kv : n) {
    const auto key = kv.first.Scalar();
    if (key == "hole_gen") {
      detail::require_map(kv.second, "hole_gen");
      for (const auto& hk : kv.second) {
        const auto color = hk.first.Scalar();
        try {
          param_ref(p, "hole_gen." + color) = detail::as_double(hk.second, "hole_gen");
        } catch (const std::invalid_argument&) {
          throw ConfigError("unknown laser color '" + color + "' in hole_gen", detail::line_of(hk.first));
        }
      }
      continue;
    }
    try {
      param_ref(p, key) = detail::as_double(kv.second, key.c_str());
    } catch (const std::invalid_argument&) {
      throw ConfigError("unknown model parameter '" + key + "' in profile " + name, detail::line_of(kv.first));
    }
  }
  if (auto errs = p.validate(); !errs.empty()) {
    throw ConfigError("profile " + name + ": " + errs.front(), detail::line_of(n));
  }
  return p;
}

inline std::map<std::string, ChargeModelParams> load_profiles(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read profiles file " + path.string());
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path.string() + ": " + e.msg, e.mark.line + 1);
  }
  detail::require_map(root, "profiles file");
  if (!root["version"] || detail::as_int(root["version"], "version") != 1) {
    throw ConfigError("profiles file must declare version: 1", detail::line_of(root));
  }
  const auto profiles = root["profiles"];
  if (!profiles) throw ConfigError("profiles file has no 'profiles' mapping", detail::line_of(root));
  detail::require_map(profiles, "profiles");
  std::map<std::string, ChargeModelParams> out;
  for (const auto& kv : profiles) out[kv.first.Scalar()] = parse_profile(kv.second, kv.first.Scalar());
  return out;
}

inline std::string profiles_yaml(const std::map<std::string, ChargeModelParams>& profiles) {
  YAML::Emitter e;
  e << YAML::BeginMap << YAML::Key << "version" << YAML::Value << 1;
  e << YAML::Key << "profiles" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, p] : profiles) {
    e << YAML::Key << name << YAML::Value << YAML::BeginMap;
    for (const auto& f : detail::param_fields()) {
      const std::string key = f.name;
      if (key.rfind("hole_gen.", 0) == 0) continue;
      e << YAML::Key << key << YAML::Value << format_double(param_value(p, key));
    }
    e << YAML::Key << "hole_gen" << YAML::Value << YAML::Flow << YAML::BeginMap;
    for (auto c : kAllColors) e << YAML::Key << std::string(to_string(c)) << YAML::Value << format_double(p.hole_gen[c]);
    e << YAML::EndMap << YAML::EndMap;
  }
  e << YAML::EndMap << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

// --- Parsing ------------------------------------------------------------------------------

namespace detail {

inline LaserChannel parse_channel(const YAML::Node& n) {
  require_map(n, "channel");
  reject_unknown_keys(n, {"color", "power_uw", "detuning_mhz"}, "channel");
  if (!n["color"]) throw ConfigError("channel needs a color", line_of(n));
  LaserChannel ch;
  try {
    ch.color = parse_laser_color(as_string(n["color"], "color"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what(), line_of(n["color"]));
  }
  ch.power_uw = n["power_uw"] ? as_double(n["power_uw"], "power_uw") : 0.0;
  if (n["detuning_mhz"]) {
    ch.detuning_mhz = as_double(n["detuning_mhz"], "detuning_mhz");
  } else if (ch.color == LaserColor::NearResonant) {
    ch.detuning_mhz = kNearResonantDetuningMHz;
  }
  return ch;
}

inline ProtocolSpec parse_protocol(const YAML::Node& n) {
  require_map(n, "protocol");
  ProtocolSpec p;
  const bool has_builtin = static_cast<bool>(n["builtin"]);
  const bool has_segments = static_cast<bool>(n["segments"]);
  if (has_builtin == has_segments) {
    throw ConfigError("protocol needs exactly one of 'builtin' or 'segments'", line_of(n));
  }
  auto num = [&](const char* key, double& field) {
    if (n[key]) field = as_double(n[key], key);
  };
  if (has_segments) {
    p.builtin = BuiltinProtocol::None;
    reject_unknown_keys(n, {"segments", "voltage_stepped"}, "protocol");
    if (n["voltage_stepped"]) p.voltage_stepped = as_bool(n["voltage_stepped"], "voltage_stepped");
    const auto segs = n["segments"];
    if (!segs.IsSequence() || segs.size() == 0) throw ConfigError("segments must be a non-empty list", line_of(segs));
    for (const auto& s : segs) {
      require_map(s, "segment");
      reject_unknown_keys(s, {"duration", "channels", "voltage_v", "tag"}, "segment");
      Segment seg;
      if (!s["duration"]) throw ConfigError("segment needs a duration", line_of(s));
      seg.duration = as_duration(s["duration"], "duration");
      if (seg.duration <= Duration::zero()) throw ConfigError("segment: non-positive duration", line_of(s["duration"]));
      if (s["voltage_v"]) seg.voltage_v = as_double(s["voltage_v"], "voltage_v");
      if (s["tag"]) seg.tag = as_string(s["tag"], "tag");
      if (s["channels"]) {
        if (!s["channels"].IsSequence()) throw ConfigError("channels must be a list", line_of(s["channels"]));
        for (const auto& c : s["channels"]) {
          auto ch = parse_channel(c);
          if (seg.channel(ch.color)) {
            throw ConfigError("segment: duplicate color " + std::string(to_string(ch.color)), line_of(c));
          }
          seg.channels.push_back(ch);
        }
      }
      p.segments.push_back(std::move(seg));
    }
    return p;
  }
  const auto name = as_string(n["builtin"], "builtin");
  if (name == "fig1") {
    p.builtin = BuiltinProtocol::Fig1;
    reject_unknown_keys(n, {"builtin", "probe_power_uw", "green_power_uw", "voltage_v"}, "fig1 protocol");
    num("probe_power_uw", p.probe_power_uw);
  } else if (name == "fig3") {
    p.builtin = BuiltinProtocol::Fig3;
    reject_unknown_keys(n,
                        {"builtin", "tau2", "near_resonant_on", "resonant_power_uw", "green_power_uw",
                         "near_resonant_power_uw", "near_resonant_detuning_mhz", "voltage_v"},
                        "fig3 protocol");
    if (n["tau2"]) p.tau2 = as_duration(n["tau2"], "tau2");
    if (p.tau2 < Duration::zero()) throw ConfigError("tau2 must be >= 0", line_of(n["tau2"]));
    if (n["near_resonant_on"]) p.near_resonant_on = as_bool(n["near_resonant_on"], "near_resonant_on");
    num("resonant_power_uw", p.resonant_power_uw);
    num("near_resonant_power_uw", p.near_resonant_power_uw);
    num("near_resonant_detuning_mhz", p.near_resonant_detuning_mhz);
  } else if (name == "ple") {
    p.builtin = BuiltinProtocol::Ple;
    reject_unknown_keys(n, {"builtin", "resonant_power_uw", "detuning_mhz", "green_power_uw", "voltage_v", "dwell"},
                        "ple protocol");
    num("resonant_power_uw", p.resonant_power_uw);
    num("detuning_mhz", p.detuning_mhz);
    if (n["dwell"]) p.dwell = as_duration(n["dwell"], "dwell");
    if (p.dwell <= Duration::zero()) throw ConfigError("dwell must be > 0", line_of(n["dwell"]));
  } else {
    throw ConfigError("unknown builtin protocol '" + name + "' (fig1, fig3, ple)", line_of(n["builtin"]));
  }
  num("green_power_uw", p.green_power_uw);
  num("voltage_v", p.voltage_v);
  for (const char* key : {"probe_power_uw", "green_power_uw", "resonant_power_uw", "near_resonant_power_uw"}) {
    if (n[key] && as_double(n[key], key) < 0.0) throw ConfigError(std::string(key) + " must be >= 0", line_of(n[key]));
  }
  return p;
}

inline SweepAxes parse_sweep(const YAML::Node& n, const ProtocolSpec& protocol) {
  require_map(n, "sweep");
  reject_unknown_keys(n, {"near_resonant", "voltage_v", "resonant_power_uw", "tau2"}, "sweep");
  SweepAxes s;
  if (n["near_resonant"]) {
    if (protocol.builtin != BuiltinProtocol::Fig3) {
      throw ConfigError("near_resonant axis applies only to the fig3 protocol", line_of(n["near_resonant"]));
    }
    s.near_resonant = as_list<bool>(n["near_resonant"], "near_resonant", as_bool);
  }
  if (n["voltage_v"]) {
    if (protocol.builtin == BuiltinProtocol::None && protocol.voltage_stepped) {
      throw ConfigError("voltage_v axis cannot override a voltage-stepped sequence", line_of(n["voltage_v"]));
    }
    s.voltage_v = as_list<double>(n["voltage_v"], "voltage_v", as_double);
  }
  if (n["resonant_power_uw"]) {
    if (protocol.builtin == BuiltinProtocol::None) {
      throw ConfigError("resonant_power_uw axis needs a builtin protocol", line_of(n["resonant_power_uw"]));
    }
    s.resonant_power_uw = as_list<double>(n["resonant_power_uw"], "resonant_power_uw", as_double);
    for (const auto& item : n["resonant_power_uw"]) {
      if (as_double(item, "resonant_power_uw") < 0.0) throw ConfigError("powers must be >= 0", line_of(item));
    }
  }
  if (n["tau2"]) {
    if (protocol.builtin != BuiltinProtocol::Fig3) {
      throw ConfigError("tau2 axis applies only to the fig3 protocol", line_of(n["tau2"]));
    }
    s.tau2 = as_list<Duration>(n["tau2"], "tau2", as_duration);
    for (const auto& item : n["tau2"]) {
      if (as_duration(item, "tau2") < Duration::zero()) throw ConfigError("tau2 must be >= 0", line_of(item));
    }
  }
  return s;
}

}  // namespace detail

inline ExperimentConfig parse_config(const YAML::Node& root) {
  using namespace detail;
  if (!root.IsMap()) throw ConfigError("config must be a mapping", line_of(root));
  reject_unknown_keys(root,
                      {"label", "profile", "profiles_file", "model", "detector", "protocol", "sweep", "ple",
                       "repetitions", "seed", "engine", "initial_state", "bin_width", "repetition_gap", "workers",
                       "output"},
                      "config");
  ExperimentConfig c;
  if (root["label"]) c.label = as_string(root["label"], "label");
  if (root["profile"]) c.profile = as_string(root["profile"], "profile");
  if (root["profiles_file"]) c.profiles_file = as_string(root["profiles_file"], "profiles_file");
  if (root["model"]) {
    require_map(root["model"], "model");
    for (const auto& kv : root["model"]) {
      const auto key = kv.first.Scalar();
      ChargeModelParams probe;
      try {
        param_ref(probe, key);
      } catch (const std::invalid_argument&) {
        throw ConfigError("unknown model parameter '" + key + "'", line_of(kv.first));
      }
      c.model_overrides.emplace_back(key, as_double(kv.second, key.c_str()));
    }
  }
  if (root["detector"]) {
    const auto d = root["detector"];
    require_map(d, "detector");
    reject_unknown_keys(d, {"efficiency", "dark_rate_hz", "dead_time_ns"}, "detector");
    if (d["efficiency"]) c.detector.efficiency = as_double(d["efficiency"], "efficiency");
    if (d["dark_rate_hz"]) c.detector.dark_rate_hz = as_double(d["dark_rate_hz"], "dark_rate_hz");
    if (d["dead_time_ns"]) c.detector.dead_time_ns = as_double(d["dead_time_ns"], "dead_time_ns");
    if (auto errs = c.detector.validate(); !errs.empty()) throw ConfigError("detector: " + errs.front(), line_of(d));
  }
  if (!root["protocol"]) throw ConfigError("config needs a protocol", line_of(root));
  c.protocol = parse_protocol(root["protocol"]);
  if (root["sweep"]) c.sweep = parse_sweep(root["sweep"], c.protocol);
  if (root["ple"]) {
    const auto n = root["ple"];
    require_map(n, "ple");
    reject_unknown_keys(n, {"resonant_power_uw", "points", "span_fwhm"}, "ple");
    if (c.protocol.builtin != BuiltinProtocol::Ple) throw ConfigError("ple scan needs the ple protocol", line_of(n));
    PleScan scan;
    if (!n["resonant_power_uw"]) throw ConfigError("ple scan needs resonant_power_uw", line_of(n));
    scan.resonant_power_uw = as_list<double>(n["resonant_power_uw"], "resonant_power_uw", as_double);
    if (n["points"]) scan.points = as_int(n["points"], "points");
    if (scan.points < 7) throw ConfigError("ple scan needs at least 7 points", line_of(n));
    if (n["span_fwhm"]) scan.span_fwhm = as_double(n["span_fwhm"], "span_fwhm");
    if (!(scan.span_fwhm >= 1.0)) throw ConfigError("span_fwhm must be >= 1", line_of(n));
    c.ple = scan;
  }
  if (root["repetitions"]) c.repetitions = as_int(root["repetitions"], "repetitions");
  if (c.repetitions < 1) throw ConfigError("repetitions must be >= 1", line_of(root["repetitions"]));
  if (root["seed"]) c.seed = scalar_as<std::uint64_t>(root["seed"], "seed");
  if (root["engine"]) {
    try {
      c.engine = parse_engine_mode(as_string(root["engine"], "engine"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), line_of(root["engine"]));
    }
  }
  if (root["initial_state"]) {
    try {
      c.initial_state = parse_charge_state(as_string(root["initial_state"], "initial_state"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), line_of(root["initial_state"]));
    }
  }
  if (root["bin_width"]) c.bin_width = as_duration(root["bin_width"], "bin_width");
  if (c.bin_width <= Duration::zero()) throw ConfigError("bin_width must be > 0", line_of(root["bin_width"]));
  if (root["repetition_gap"]) c.repetition_gap = as_duration(root["repetition_gap"], "repetition_gap");
  if (c.repetition_gap < Duration::zero()) throw ConfigError("repetition_gap must be >= 0", line_of(root["repetition_gap"]));
  if (root["workers"]) {
    const auto w = as_int(root["workers"], "workers");
    if (w < 0) throw ConfigError("workers must be >= 0", line_of(root["workers"]));
    c.workers = static_cast<unsigned>(w);
  }
  if (root["output"]) c.output = as_string(root["output"], "output");
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(e.msg, e.mark.line + 1);
  }
  return parse_config(root);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  try {
    return parse_config_text(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.filename().string() + ": " + e.what());
  }
}

// --- Serialization -------------------------------------------------------------------------

inline std::string serialize_config(const ExperimentConfig& c) {
  YAML::Emitter e;
  auto num = [&](const char* key, double v) { e << YAML::Key << key << YAML::Value << format_double(v); };
  e << YAML::BeginMap;
  e << YAML::Key << "label" << YAML::Value << YAML::DoubleQuoted << c.label;
  e << YAML::Key << "profile" << YAML::Value << c.profile;
  if (!c.profiles_file.empty()) e << YAML::Key << "profiles_file" << YAML::Value << c.profiles_file;
  if (!c.model_overrides.empty()) {
    e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : c.model_overrides) num(k.c_str(), v);
    e << YAML::EndMap;
  }
  e << YAML::Key << "detector" << YAML::Value << YAML::BeginMap;
  num("efficiency", c.detector.efficiency);
  num("dark_rate_hz", c.detector.dark_rate_hz);
  num("dead_time_ns", c.detector.dead_time_ns);
  e << YAML::EndMap;

  const auto& p = c.protocol;
  e << YAML::Key << "protocol" << YAML::Value << YAML::BeginMap;
  if (p.builtin == BuiltinProtocol::None) {
    e << YAML::Key << "voltage_stepped" << YAML::Value << YAML::TrueFalseBool << p.voltage_stepped;
    e << YAML::Key << "segments" << YAML::Value << YAML::BeginSeq;
    for (const auto& s : p.segments) {
      e << YAML::BeginMap;
      e << YAML::Key << "duration" << YAML::Value << format_duration(s.duration);
      num("voltage_v", s.voltage_v);
      e << YAML::Key << "tag" << YAML::Value << YAML::DoubleQuoted << s.tag;
      e << YAML::Key << "channels" << YAML::Value << YAML::BeginSeq;
      for (const auto& ch : s.channels) {
        e << YAML::Flow << YAML::BeginMap;
        e << YAML::Key << "color" << YAML::Value << std::string(to_string(ch.color));
        num("power_uw", ch.power_uw);
        num("detuning_mhz", ch.detuning_mhz);
        e << YAML::EndMap;
      }
      e << YAML::EndSeq << YAML::EndMap;
    }
    e << YAML::EndSeq;
  } else {
    e << YAML::Key << "builtin" << YAML::Value << std::string(to_string(p.builtin));
    if (p.builtin == BuiltinProtocol::Fig1) {
      num("probe_power_uw", p.probe_power_uw);
    } else if (p.builtin == BuiltinProtocol::Fig3) {
      e << YAML::Key << "tau2" << YAML::Value << format_duration(p.tau2);
      e << YAML::Key << "near_resonant_on" << YAML::Value << YAML::TrueFalseBool << p.near_resonant_on;
      num("resonant_power_uw", p.resonant_power_uw);
      num("near_resonant_power_uw", p.near_resonant_power_uw);
      num("near_resonant_detuning_mhz", p.near_resonant_detuning_mhz);
    } else {
      num("resonant_power_uw", p.resonant_power_uw);
      num("detuning_mhz", p.detuning_mhz);
      e << YAML::Key << "dwell" << YAML::Value << format_duration(p.dwell);
    }
    num("green_power_uw", p.green_power_uw);
    num("voltage_v", p.voltage_v);
  }
  e << YAML::EndMap;

  const auto& s = c.sweep;
  if (s.near_resonant || s.voltage_v || s.resonant_power_uw || s.tau2) {
    e << YAML::Key << "sweep" << YAML::Value << YAML::BeginMap;
    if (s.near_resonant) {
      e << YAML::Key << "near_resonant" << YAML::Value << YAML::Flow << YAML::BeginSeq;
      for (bool b : *s.near_resonant) e << YAML::TrueFalseBool << b;
      e << YAML::EndSeq;
    }
    auto doubles = [&](const char* key, const std::vector<double>& v) {
      e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
      for (double x : v) e << format_double(x);
      e << YAML::EndSeq;
    };
    if (s.voltage_v) doubles("voltage_v", *s.voltage_v);
    if (s.resonant_power_uw) doubles("resonant_power_uw", *s.resonant_power_uw);
    if (s.tau2) {
      e << YAML::Key << "tau2" << YAML::Value << YAML::Flow << YAML::BeginSeq;
      for (auto d : *s.tau2) e << format_duration(d);
      e << YAML::EndSeq;
    }
    e << YAML::EndMap;
  }
  if (c.ple) {
    e << YAML::Key << "ple" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "resonant_power_uw" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (double x : c.ple->resonant_power_uw) e << format_double(x);
    e << YAML::EndSeq;
    e << YAML::Key << "points" << YAML::Value << c.ple->points;
    num("span_fwhm", c.ple->span_fwhm);
    e << YAML::EndMap;
  }
  e << YAML::Key << "repetitions" << YAML::Value << c.repetitions;
  if (c.seed) e << YAML::Key << "seed" << YAML::Value << *c.seed;
  e << YAML::Key << "engine" << YAML::Value << std::string(to_string(c.engine));
  e << YAML::Key << "initial_state" << YAML::Value << std::string(to_string(c.initial_state));
  e << YAML::Key << "bin_width" << YAML::Value << format_duration(c.bin_width);
  e << YAML::Key << "repetition_gap" << YAML::Value << format_duration(c.repetition_gap);
  if (c.workers > 0) e << YAML::Key << "workers" << YAML::Value << c.workers;
  if (!c.output.empty()) e << YAML::Key << "output" << YAML::Value << YAML::DoubleQuoted << c.output;
  e << YAML::EndMap;
  if (!e.good()) throw std::runtime_error("config serialization failed: " + e.GetLastError());
  return std::string(e.c_str()) + "\n";
}

// --- Resolution -----------------------------------------------------------------------------

/// Profile (from the profiles file or the built-in set) with the overrides applied.
inline ChargeModelParams resolve_model(const ExperimentConfig& c, const std::filesystem::path& config_dir = {}) {
  std::map<std::string, ChargeModelParams> profiles;
  if (c.profiles_file.empty()) {
    profiles = builtin_profiles();
  } else {
    std::filesystem::path path = c.profiles_file;
    if (path.is_relative()) path = config_dir / path;
    profiles = load_profiles(path);
  }
  const auto it = profiles.find(c.profile);
  if (it == profiles.end()) throw ConfigError("unknown profile '" + c.profile + "'");
  ChargeModelParams p = it->second;
  for (const auto& [k, v] : c.model_overrides) param_ref(p, k) = v;
  if (auto errs = p.validate(); !errs.empty()) throw ConfigError("model: " + errs.front());
  return p;
}

/// One point of the cartesian sweep.
struct RunPoint {
  std::size_t index = 0;
  std::optional<bool> near_resonant;
  std::optional<double> voltage_v;
  std::optional<double> resonant_power_uw;
  std::optional<Duration> tau2;
};

/// Sweep points in axis order near_resonant, voltage_v, resonant_power_uw, tau2
/// (last axis varies fastest). An absent axis contributes a single point.
inline std::vector<RunPoint> sweep_points(const ExperimentConfig& c) {
  std::vector<RunPoint> points{RunPoint{}};
  auto expand = [&](auto const& axis, auto setter) {
    if (!axis) return;
    std::vector<RunPoint> next;
    for (const auto& p : points) {
      for (const auto& v : *axis) {
        RunPoint q = p;
        setter(q, v);
        next.push_back(q);
      }
    }
    points = std::move(next);
  };
  expand(c.sweep.near_resonant, [](RunPoint& p, bool v) { p.near_resonant = v; });
  expand(c.sweep.voltage_v, [](RunPoint& p, double v) { p.voltage_v = v; });
  expand(c.sweep.resonant_power_uw, [](RunPoint& p, double v) { p.resonant_power_uw = v; });
  expand(c.sweep.tau2, [](RunPoint& p, Duration v) { p.tau2 = v; });
  for (std::size_t i = 0; i < points.size(); ++i) points[i].index = i;
  return points;
}

/// Pulse sequence of one sweep point, with the repetition gap appended.
inline PulseSequence build_sequence(const ExperimentConfig& c, const RunPoint& point) {
  const auto& p = c.protocol;
  const double voltage = point.voltage_v.value_or(p.voltage_v);
  PulseSequence seq;
  switch (p.builtin) {
    case BuiltinProtocol::Fig1:
      seq = protocol_fig1(point.resonant_power_uw.value_or(p.probe_power_uw), p.green_power_uw, voltage);
      break;
    case BuiltinProtocol::Fig3: {
      Fig3Powers powers;
      powers.resonant_uw = point.resonant_power_uw.value_or(p.resonant_power_uw);
      powers.green_uw = p.green_power_uw;
      powers.near_resonant_uw = p.near_resonant_power_uw;
      powers.near_resonant_detuning_mhz = p.near_resonant_detuning_mhz;
      seq = protocol_fig3(point.tau2.value_or(p.tau2), point.near_resonant.value_or(p.near_resonant_on), voltage,
                          powers);
      break;
    }
    case BuiltinProtocol::Ple:
      seq = protocol_ple_point(point.resonant_power_uw.value_or(p.resonant_power_uw), p.detuning_mhz,
                               p.green_power_uw, voltage, p.dwell);
      break;
    case BuiltinProtocol::None:
      seq.label = c.label;
      seq.segments = p.segments;
      seq.voltage_stepped = p.voltage_stepped;
      if (point.voltage_v) {
        for (auto& s : seq.segments) s.voltage_v = *point.voltage_v;
      }
      break;
  }
  seq.repetitions = c.repetitions;
  append_repetition_gap(seq, c.repetition_gap);
  return seq;
}

/// Every problem that would stop a run, without simulating.
inline std::vector<std::string> validate_config(const ExperimentConfig& c, const std::filesystem::path& config_dir = {}) {
  std::vector<std::string> errors;
  if (!c.seed) errors.emplace_back("seed is required for stochastic runs");
  try {
    resolve_model(c, config_dir);
  } catch (const ConfigError& e) {
    errors.emplace_back(e.what());
  }
  if (auto d = c.detector.validate(); !d.empty()) errors.insert(errors.end(), d.begin(), d.end());
  for (const auto& point : sweep_points(c)) {
    try {
      const auto seq = build_sequence(c, point);
      for (const auto& e : validate(seq)) errors.push_back("run " + std::to_string(point.index) + ": " + e);
    } catch (const std::exception& e) {
      errors.push_back("run " + std::to_string(point.index) + ": " + e.what());
    }
  }
  return errors;
}

}  // namespace sivsim
