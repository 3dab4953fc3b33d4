#pragma once

// Deterministic text output: shortest round-trip doubles, FNV-1a hashes,
// histogram CSV + JSON sidecar.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "sivsim/model.hpp"
#include "sivsim/photonics.hpp"

namespace sivsim {

using Json = nlohmann::ordered_json;

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return {buf, end};
}

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline Json params_to_json(const ChargeModelParams& p) {
  Json j;
  j["gamma_rad_hz"] = p.gamma_rad_hz;
  j["zpl_branching"] = p.zpl_branching;
  j["gamma0_mhz"] = p.gamma0_mhz;
  j["p_sat_uw"] = p.p_sat_uw;
  j["r_max_hz"] = p.r_max_hz;
  j["k_ion_hz"] = p.k_ion_hz;
  j["k_ion_field_gain"] = p.k_ion_field_gain;
  j["green_exc_hz_per_uw"] = p.green_exc_hz_per_uw;
  j["hole_gen"] = {{"green", p.hole_gen.green},
                   {"resonant", p.hole_gen.resonant},
                   {"near_resonant", p.hole_gen.near_resonant}};
  j["c_capture_hz"] = p.c_capture_hz;
  j["v_half_v"] = p.v_half_v;
  j["f_max"] = p.f_max;
  j["v_field_ion_v"] = p.v_field_ion_v;
  j["k_field_ion_hz"] = p.k_field_ion_hz;
  return j;
}

inline Json detector_to_json(const DetectorParams& d) {
  return {{"efficiency", d.efficiency}, {"dark_rate_hz", d.dark_rate_hz}, {"dead_time_ns", d.dead_time_ns}};
}

/// Stable fingerprint of a parameter set.
inline std::string parameter_hash(const ChargeModelParams& p, const DetectorParams& d) {
  Json j{{"model", params_to_json(p)}, {"detector", detector_to_json(d)}};
  return hex64(fnv1a64(j.dump()));
}

inline std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_start_ns,counts,rate_hz,rate_err_hz\n";
  for (std::size_t b = 0; b < h.size(); ++b) {
    out += std::to_string(h.bin_start(b));
    out += ',';
    out += std::to_string(h.count(b));
    out += ',';
    out += format_double(h.rate(b));
    out += ',';
    out += format_double(h.rate_error(b));
    out += '\n';
  }
  return out;
}

struct HistogramMeta {
  std::string label;
  std::uint64_t seed = 0;
  std::string parameter_hash;
};

inline Json histogram_sidecar(const Histogram& h, const HistogramMeta& meta) {
  Json j;
  j["label"] = meta.label;
  j["repetitions"] = h.repetitions();
  j["bin_width_ns"] = h.bin_width_ns();
  j["period_ns"] = h.period_ns();
  j["seed"] = meta.seed;
  j["parameter_hash"] = meta.parameter_hash;
  j["total_counts"] = h.total();
  return j;
}

/// Parses a histogram CSV written by histogram_csv back into counts.
inline Histogram parse_histogram_csv(std::string_view csv, std::int64_t period_ns, std::int64_t bin_width_ns,
                                     std::int64_t repetitions) {
  Histogram h(period_ns, bin_width_ns);
  std::istringstream in{std::string(csv)};
  std::string line;
  std::getline(in, line);
  if (line != "bin_start_ns,counts,rate_hz,rate_err_hz") throw std::runtime_error("not a histogram CSV");
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw std::runtime_error("malformed histogram row");
    const auto start = std::stoll(line.substr(0, c1));
    const auto count = std::stoull(line.substr(c1 + 1, c2 - c1 - 1));
    if (row >= h.size() || start != h.bin_start(row)) throw std::runtime_error("histogram rows do not tile the period");
    h.add_count(row, count);
    ++row;
  }
  h.add_repetitions(repetitions);
  return h;
}

}  // namespace sivsim
