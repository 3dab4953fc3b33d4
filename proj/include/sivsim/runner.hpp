#pragma once

// Config-driven execution: sweeps, PLE scans, artifacts, manifests, replay.
//
// Artifact layout (paths relative to the output directory):
//   runs/<id>/histogram.csv, runs/<id>/histogram.json, runs/<id>/fit.json
//   summary.csv, histograms_long.csv, summary.json, manifest.json
// PLE scans write ple_scan.csv, ple_fits.csv, manifest.json.
//
// Every artifact is a pure function of (canonical config, resolved model,
// master seed, tool version); manifest.json records a hash of each one.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sivsim/analysis.hpp"
#include "sivsim/config.hpp"
#include "sivsim/experiment.hpp"
#include "sivsim/io.hpp"

#ifndef SIVSIM_VERSION
#define SIVSIM_VERSION "0.0.0"
#endif

namespace sivsim {

inline constexpr const char* kToolName = "sivsim";
inline constexpr const char* kToolVersion = SIVSIM_VERSION;

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunOptions {
  unsigned workers = 0;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> profile_override;
  /// Base for a relative profiles_file.
  std::filesystem::path config_dir;
  /// Skips profile resolution (used by replay, which carries the resolved model).
  std::optional<ChargeModelParams> model;
};

struct RunReport {
  std::filesystem::path out_dir;
  Json manifest;
  std::size_t failed_runs = 0;
};

namespace detail {

inline std::string run_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "r%03zu", index);
  return buf;
}

inline std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline Json axes_json(const RunPoint& p) {
  Json j = Json::object();
  if (p.near_resonant) j["near_resonant"] = *p.near_resonant;
  if (p.voltage_v) j["voltage_v"] = *p.voltage_v;
  if (p.resonant_power_uw) j["resonant_power_uw"] = *p.resonant_power_uw;
  if (p.tau2) j["tau2_ns"] = p.tau2->count();
  return j;
}

inline std::string axes_cells(const RunPoint& p) {
  std::string s;
  s += p.near_resonant ? (*p.near_resonant ? "on" : "off") : "";
  s += ',' + opt_cell(p.voltage_v);
  s += ',' + opt_cell(p.resonant_power_uw);
  s += ',' + (p.tau2 ? format_double(static_cast<double>(p.tau2->count()) * 1e-6) : std::string());
  return s;
}

inline Json fit_json(const FitResult& f) {
  Json j;
  j["model"] = f.model;
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["reduced_chi2"] = f.reduced_chi2;
  Json params = Json::object();
  for (const auto& p : f.parameters) {
    Json e{{"value", p.value}};
    e["error"] = p.error ? Json(*p.error) : Json(nullptr);
    params[p.name] = e;
  }
  j["parameters"] = params;
  return j;
}

inline Json rate_json(const RateEstimate& r) { return {{"rate_hz", r.rate_hz}, {"error_hz", r.error_hz}}; }

inline void rate_cells(std::string& out, const std::optional<RateEstimate>& r) {
  out += ',' + (r ? format_double(r->rate_hz) : std::string());
  out += ',' + (r ? format_double(r->error_hz) : std::string());
}

/// Writes an artifact and records its hash.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path root) : root_(std::move(root)) {}

  std::string write(const std::string& rel, const std::string& content) {
    write_file(root_ / rel, content);
    const auto h = hex64(fnv1a64(content));
    hashes_[rel] = h;
    return h;
  }
  const Json& hashes() const { return hashes_; }

 private:
  std::filesystem::path root_;
  Json hashes_ = Json::object();
};

inline Json manifest_header(const ExperimentConfig& cfg, const ChargeModelParams& model, std::string_view kind) {
  const auto canonical = serialize_config(cfg);
  Json m;
  m["tool"] = kToolName;
  m["version"] = kToolVersion;
  m["kind"] = kind;
  m["label"] = cfg.label;
  m["seed"] = *cfg.seed;
  m["config"] = canonical;
  m["config_hash"] = hex64(fnv1a64(canonical));
  m["model"] = params_to_json(model);
  m["parameter_hash"] = parameter_hash(model, cfg.detector);
  return m;
}

inline ExperimentConfig prepare(ExperimentConfig cfg, const RunOptions& opt, ChargeModelParams& model) {
  if (opt.seed_override) cfg.seed = opt.seed_override;
  if (opt.profile_override) cfg.profile = *opt.profile_override;
  if (!cfg.seed) throw ConfigError("seed is required for stochastic runs");
  model = opt.model ? *opt.model : resolve_model(cfg, opt.config_dir);
  return cfg;
}

}  // namespace detail

inline RunReport run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                                const RunOptions& opt = {}) {
  ChargeModelParams model;
  const auto cfg = detail::prepare(config, opt, model);
  const auto points = sweep_points(cfg);
  std::vector<PulseSequence> sequences;
  for (const auto& p : points) {
    auto seq = build_sequence(cfg, p);
    require_valid(seq);
    sequences.push_back(std::move(seq));
  }
  const unsigned workers = opt.workers > 0 ? opt.workers : cfg.workers;
  const auto phash = parameter_hash(model, cfg.detector);
  detail::ArtifactWriter out(out_dir);
  Json manifest = detail::manifest_header(cfg, model, "sweep");
  Json runs = Json::array();

  std::string summary =
      "run_id,near_resonant,voltage_v,resonant_power_uw,tau2_ms,background_hz,background_err_hz,stabilized_hz,"
      "stabilized_err_hz,initial_hz,initial_err_hz,final_hz,final_err_hz,second_initial_hz,second_initial_err_hz,"
      "tau_ms,tau_err_ms,recovery,recovery_err,status,note\n";
  std::string long_csv = "run_id,near_resonant,voltage_v,resonant_power_uw,tau2_ms,bin_start_ns,rate_hz,rate_err_hz\n";
  std::size_t failed = 0;
  // (group key, power, decay rate) for the rate-vs-power regression.
  std::map<std::string, std::vector<std::pair<double, double>>> rate_vs_power;

  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& point = points[i];
    const auto id = detail::run_id(i);
    const auto run_seed = derive_seed(*cfg.seed, StreamDomain::Run, i);
    Json rec;
    rec["id"] = id;
    rec["axes"] = detail::axes_json(point);
    rec["seed"] = run_seed;
    try {
      Measurement m;
      m.sequence = sequences[i];
      m.params = model;
      m.detector = cfg.detector;
      m.mode = cfg.engine;
      m.initial_state = cfg.initial_state;
      m.repetitions = cfg.repetitions;
      m.seed = run_seed;
      m.bin_width_ns = cfg.bin_width.count();
      const auto h = simulate_histogram(m, workers);

      out.write("runs/" + id + "/histogram.csv", histogram_csv(h));
      out.write("runs/" + id + "/histogram.json",
                histogram_sidecar(h, {m.sequence.label, run_seed, phash}).dump(2) + "\n");
      const auto cells = detail::axes_cells(point);
      for (std::size_t b = 0; b < h.size(); ++b) {
        long_csv += id + ',' + cells + ',' + std::to_string(h.bin_start(b)) + ',' + format_double(h.rate(b)) + ',' +
                    format_double(h.rate_error(b)) + '\n';
      }

      Json fit = Json::object();
      std::string row = id + ',' + cells;
      if (m.sequence.find_tag(tags::kGap) >= 0) {
        const auto r = summarize_run(0.0, m.sequence, h);
        detail::rate_cells(row, r.background);
        detail::rate_cells(row, r.stabilized);
        detail::rate_cells(row, r.initial);
        detail::rate_cells(row, r.final);
        detail::rate_cells(row, r.second_initial);
        row += ',' + detail::opt_cell(r.tau_ms) + ',' + detail::opt_cell(r.tau_error_ms);
        row += ',' + detail::opt_cell(r.recovery) + ',' + detail::opt_cell(r.recovery_error);
        row += ",ok," + r.note;
        fit["background"] = detail::rate_json(r.background);
        if (r.stabilized) fit["stabilized"] = detail::rate_json(*r.stabilized);
        fit["initial"] = detail::rate_json(r.initial);
        fit["final"] = detail::rate_json(r.final);
        if (r.second_initial) fit["second_initial"] = detail::rate_json(*r.second_initial);
        if (const auto ro = m.sequence.find_tag(tags::kReadout); ro >= 0) {
          const auto start = m.sequence.segment_start(static_cast<std::size_t>(ro)).count();
          const auto stop = start + m.sequence.segments[static_cast<std::size_t>(ro)].duration.count();
          try {
            fit["exponential"] = detail::fit_json(fit_exponential(h, start, stop));
          } catch (const AnalysisError& e) {
            fit["exponential"] = {{"error", e.what()}};
          }
          if (r.tau_ms && point.resonant_power_uw) {
            std::string key = detail::axes_cells(RunPoint{0, point.near_resonant, point.voltage_v, std::nullopt, point.tau2});
            rate_vs_power[key].emplace_back(*point.resonant_power_uw, 1e3 / *r.tau_ms);
          }
        }
        if (r.recovery) {
          fit["recovery"] = {{"value", *r.recovery}, {"error", *r.recovery_error}};
        }
        if (!r.note.empty()) fit["note"] = r.note;
      } else {
        const auto whole = window_intensity(h, 0, h.period_ns());
        fit["mean_rate"] = detail::rate_json(whole);
        row += ",,,,,,,,,,,,,,,ok,no dark gap to summarize";
      }
      summary += row + '\n';
      out.write("runs/" + id + "/fit.json", fit.dump(2) + "\n");
      rec["status"] = "ok";
    } catch (const std::exception& e) {
      ++failed;
      rec["status"] = "failed";
      rec["error"] = e.what();
      summary += id + ',' + detail::axes_cells(point) + ",,,,,,,,,,,,,,,failed," + e.what() + '\n';
    }
    runs.push_back(rec);
  }
  out.write("summary.csv", summary);
  out.write("histograms_long.csv", long_csv);

  Json summary_json = Json::object();
  Json regressions = Json::array();
  for (const auto& [key, pts] : rate_vs_power) {
    if (pts.size() < 2) continue;
    std::vector<double> x, y;
    for (const auto& [p, r] : pts) {
      x.push_back(p);
      y.push_back(r);
    }
    try {
      const auto lf = linear_regression(x, y);
      regressions.push_back({{"group", key}, {"slope_hz_per_uw", lf.slope}, {"intercept_hz", lf.intercept},
                             {"r_squared", lf.r_squared}});
    } catch (const std::invalid_argument&) {
    }
  }
  summary_json["decay_rate_vs_power"] = regressions;
  summary_json["runs"] = points.size();
  summary_json["failed_runs"] = failed;
  out.write("summary.json", summary_json.dump(2) + "\n");

  manifest["runs"] = runs;
  manifest["outputs"] = out.hashes();
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return {out_dir, manifest, failed};
}

// --- PLE ----------------------------------------------------------------------------

struct PleFit {
  double resonant_power_uw = 0.0;
  double saturation = 0.0;
  FitResult fit;
};

inline std::vector<double> ple_detunings(const ChargeModelParams& model, double power_uw, const PleScan& scan) {
  const double half_span = scan.span_fwhm * broadened_linewidth_mhz(power_uw, model);
  std::vector<double> d;
  for (std::int64_t k = 0; k < scan.points; ++k) {
    d.push_back(-half_span + 2.0 * half_span * static_cast<double>(k) / static_cast<double>(scan.points - 1));
  }
  return d;
}

/// Simulates one detuning scan per power and fits each line.
inline std::vector<std::vector<ScanPoint>> simulate_ple(const ExperimentConfig& cfg, const ChargeModelParams& model,
                                                        unsigned workers) {
  if (!cfg.ple) throw ConfigError("config has no ple scan section");
  if (cfg.protocol.builtin != BuiltinProtocol::Ple) throw ConfigError("ple needs the ple protocol");
  const auto& scan = *cfg.ple;
  struct Task {
    std::size_t power_index;
    std::size_t point_index;
    double detuning;
  };
  std::vector<Task> tasks;
  std::vector<std::vector<ScanPoint>> scans(scan.resonant_power_uw.size());
  for (std::size_t pi = 0; pi < scan.resonant_power_uw.size(); ++pi) {
    const auto d = ple_detunings(model, scan.resonant_power_uw[pi], scan);
    scans[pi].resize(d.size());
    for (std::size_t k = 0; k < d.size(); ++k) tasks.push_back({pi, k, d[k]});
  }
  parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const auto& task = tasks[t];
    Measurement m;
    m.sequence = protocol_ple_point(scan.resonant_power_uw[task.power_index], task.detuning,
                                    cfg.protocol.green_power_uw, cfg.protocol.voltage_v, cfg.protocol.dwell);
    append_repetition_gap(m.sequence, cfg.repetition_gap);
    m.params = model;
    m.detector = cfg.detector;
    m.mode = cfg.engine;
    m.initial_state = cfg.initial_state;
    m.repetitions = cfg.repetitions;
    m.seed = derive_seed(*cfg.seed, StreamDomain::Scan, t);
    m.bin_width_ns = cfg.protocol.dwell.count();
    const auto h = simulate_histogram(m, 1);
    const auto r = window_intensity(h, 0, cfg.protocol.dwell.count());
    scans[task.power_index][task.point_index] = {task.detuning, r.rate_hz, std::max(r.error_hz, 1e-9)};
  });
  return scans;
}

inline RunReport run_ple(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                         const RunOptions& opt = {}) {
  ChargeModelParams model;
  const auto cfg = detail::prepare(config, opt, model);
  const unsigned workers = opt.workers > 0 ? opt.workers : cfg.workers;
  const auto scans = simulate_ple(cfg, model, workers);
  detail::ArtifactWriter out(out_dir);
  std::string scan_csv = "resonant_power_uw,detuning_mhz,rate_hz,rate_err_hz\n";
  std::string fit_csv =
      "resonant_power_uw,saturation,fwhm_mhz,fwhm_err_mhz,center_mhz,fwhm_over_gamma0,expected_ratio,converged,note\n";
  std::size_t failed = 0;
  Json fits = Json::array();
  for (std::size_t pi = 0; pi < scans.size(); ++pi) {
    const double power = cfg.ple->resonant_power_uw[pi];
    const double s = power / model.p_sat_uw;
    for (const auto& p : scans[pi]) {
      scan_csv += format_double(power) + ',' + format_double(p.detuning_mhz) + ',' + format_double(p.rate_hz) + ',' +
                  format_double(p.error_hz) + '\n';
    }
    try {
      const auto f = fit_lorentzian(scans[pi]);
      const auto& w = f.at("fwhm_mhz");
      fit_csv += format_double(power) + ',' + format_double(s) + ',' + format_double(w.value) + ',' +
                 (w.error ? format_double(*w.error) : std::string()) + ',' + format_double(f.value("center_mhz")) +
                 ',' + format_double(w.value / model.gamma0_mhz) + ',' + format_double(std::sqrt(1.0 + s)) + ',' +
                 (f.converged ? "true" : "false") + ",\n";
      Json j = detail::fit_json(f);
      j["resonant_power_uw"] = power;
      fits.push_back(j);
    } catch (const AnalysisError& e) {
      ++failed;
      fit_csv += format_double(power) + ',' + format_double(s) + ",,,,," + format_double(std::sqrt(1.0 + s)) +
                 ",false," + e.what() + '\n';
      fits.push_back({{"resonant_power_uw", power}, {"error", e.what()}});
    }
  }
  out.write("ple_scan.csv", scan_csv);
  out.write("ple_fits.csv", fit_csv);
  out.write("ple_fits.json", fits.dump(2) + "\n");
  Json manifest = detail::manifest_header(cfg, model, "ple");
  manifest["outputs"] = out.hashes();
  manifest["failed_fits"] = failed;
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return {out_dir, manifest, failed};
}

// --- Replay -----------------------------------------------------------------------------

struct ReplayReport {
  std::filesystem::path out_dir;
  std::vector<std::string> divergences;
  bool identical() const { return divergences.empty(); }
};

inline ChargeModelParams params_from_json(const Json& j) {
  ChargeModelParams p;
  for (const auto& name : param_names()) {
    const auto dot = name.find('.');
    const Json& v = dot == std::string::npos ? j.at(name) : j.at(name.substr(0, dot)).at(name.substr(dot + 1));
    param_ref(p, name) = v.get<double>();
  }
  return p;
}

/// Re-executes the manifest's experiment into out_dir and compares every
/// artifact hash.
inline ReplayReport replay(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir,
                           unsigned workers = 0) {
  Json m;
  try {
    m = Json::parse(read_file(manifest_path));
  } catch (const Json::exception& e) {
    throw ReplayError(std::string("unreadable manifest: ") + e.what());
  }
  if (m.value("tool", "") != kToolName) throw ReplayError("not a " + std::string(kToolName) + " manifest");
  const auto version = m.value("version", "");
  if (version != kToolVersion) {
    throw ReplayError("version mismatch: manifest written by " + version + ", this is " + kToolVersion);
  }
  ReplayReport report;
  report.out_dir = out_dir;
  const auto text = m.at("config").get<std::string>();
  if (hex64(fnv1a64(text)) != m.at("config_hash").get<std::string>()) {
    report.divergences.push_back("config text does not match config_hash");
  }
  const auto cfg = parse_config_text(text);
  RunOptions opt;
  opt.workers = workers;
  opt.seed_override = m.at("seed").get<std::uint64_t>();
  opt.model = params_from_json(m.at("model"));
  const auto kind = m.value("kind", "sweep");
  const auto fresh = kind == "ple" ? run_ple(cfg, out_dir, opt) : run_experiment(cfg, out_dir, opt);
  const auto& old_out = m.at("outputs");
  const auto& new_out = fresh.manifest.at("outputs");
  for (const auto& [file, hash] : old_out.items()) {
    if (!new_out.contains(file)) {
      report.divergences.push_back(file + ": not produced by replay");
    } else if (new_out.at(file) != hash) {
      report.divergences.push_back(file + ": content differs");
    }
  }
  for (const auto& [file, hash] : new_out.items()) {
    if (!old_out.contains(file)) report.divergences.push_back(file + ": not in the original manifest");
  }
  return report;
}

}  // namespace sivsim
