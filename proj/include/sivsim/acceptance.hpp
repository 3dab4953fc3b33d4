#pragma once

// Built-in acceptance suite. Each check returns a pass/fail verdict plus the
// measured numbers; tolerances are fixed here.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sivsim/analysis.hpp"
#include "sivsim/engine.hpp"
#include "sivsim/experiment.hpp"
#include "sivsim/runner.hpp"

namespace sivsim::acceptance {

struct CriterionResult {
  std::string id;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  /// Directory holding the shipped *.cfg files (A8).
  std::filesystem::path configs_dir;
  /// Scratch space for A8 artifacts.
  std::filesystem::path scratch_dir = std::filesystem::temp_directory_path() / "sivsim-acceptance";
  unsigned workers = 0;
  std::uint64_t seed = 20240611;
};

namespace detail {

inline std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << x;
  return s.str();
}

inline Measurement base_measurement(PulseSequence seq, std::int64_t reps, std::uint64_t seed) {
  Measurement m;
  m.sequence = std::move(seq);
  m.repetitions = reps;
  m.seed = seed;
  return m;
}

/// Recovery of one fig3 run, computed from raw window rates.
inline RecoveryPoint fig3_recovery(bool nr_on, double voltage, Duration tau2, std::int64_t reps, std::uint64_t seed,
                                   unsigned workers) {
  const auto m = base_measurement(protocol_fig3(tau2, nr_on, voltage), reps, seed);
  const auto h = simulate_histogram(m, workers);
  const auto& seq = m.sequence;
  auto start_of = [&](const char* tag) { return seq.segment_start(static_cast<std::size_t>(seq.find_tag(tag))).count(); };
  const auto p1 = start_of(tags::kPulse1);
  const auto p2 = start_of(tags::kPulse2);
  const auto len = seq.segments[static_cast<std::size_t>(seq.find_tag(tags::kPulse1))].duration.count();
  const auto w = kIntensityWindowNs;
  return make_recovery_point(static_cast<double>(tau2.count()) * 1e-6, window_intensity(h, p1, p1 + w),
                             window_intensity(h, p1 + len - w, p1 + len), window_intensity(h, p2, p2 + w),
                             window_intensity(h, p2 + len - w, p2 + len));
}

}  // namespace detail

// A1: MC bright occupancy vs the master-equation propagator.
inline CriterionResult check_a1(const Options& opt) {
  CriterionResult r{"A1", "MC occupancy matches the propagator (4 sigma)"};
  struct Case {
    const char* name;
    PulseSequence seq;
  };
  const std::vector<Case> cases = {
      {"fig1 0V", protocol_fig1(13, 300, 0)},
      {"fig2 50V", protocol_fig1(13, 300, 50)},
      {"fig3 on 50V", protocol_fig3(Duration{10'000'000}, true, 50)},
      {"fig3 on 180V", protocol_fig3(Duration{10'000'000}, true, 180)},
  };
  const ChargeModelParams params;
  double worst = 0.0;
  std::string worst_case;
  for (const auto& c : cases) {
    const auto cs = compile(c.seq, params);
    std::vector<double> times;
    for (int k = 0; k < 10; ++k) times.push_back((k + 0.5) / 10.0 * cs.period_ns);
    const auto oracle = populations_at(cs, PopulationVector::pure(ChargeState::Dark), times);
    for (auto [mode, n] : {std::pair{EngineMode::Reduced, std::int64_t{100'000}},
                           std::pair{EngineMode::Full, std::int64_t{10'000}}}) {
      const auto counts = bright_counts(cs, ChargeState::Dark, times, n, derive_seed(opt.seed, StreamDomain::Test, 1),
                                        mode, opt.workers);
      for (std::size_t k = 0; k < times.size(); ++k) {
        const double p = oracle[k].populations.bright();
        const double freq = static_cast<double>(counts[k]) / static_cast<double>(n);
        const double sigma = std::max(std::sqrt(p * (1.0 - p) / static_cast<double>(n)), 1.0 / static_cast<double>(n));
        const double z = std::abs(freq - p) / sigma;
        if (z > worst) {
          worst = z;
          worst_case = std::string(c.name) + " " + std::string(to_string(mode)) + " t=" +
                       detail::fmt(times[k] * 1e-6) + "ms";
        }
      }
    }
  }
  r.passed = worst <= 4.0;
  r.detail = "max |z| = " + detail::fmt(worst, 3) + " (" + worst_case + "); reduced 1e5, full 1e4 trajectories";
  return r;
}

// A2: decay rate linear in resonant power, tau(13 uW) in [1, 2.5] ms.
inline CriterionResult check_a2(const Options& opt) {
  CriterionResult r{"A2", "decay rate linear in power, tau(13 uW) in [1, 2.5] ms"};
  ChargeModelParams params;
  params.hole_gen.resonant = 0.0;
  params.hole_gen.near_resonant = 0.0;
  const std::vector<double> powers = {1.3, 2.6, 5.2, 7.8, 10.4, 13.0};
  std::vector<double> rates;
  double tau13 = 0.0;
  for (std::size_t i = 0; i < powers.size(); ++i) {
    auto m = detail::base_measurement(protocol_fig1(powers[i], 300, 0), 20'000, derive_seed(opt.seed, StreamDomain::Test, 20 + i));
    m.params = params;
    const auto h = simulate_histogram(m, opt.workers);
    const auto ro = static_cast<std::size_t>(m.sequence.find_tag(tags::kReadout));
    const auto start = m.sequence.segment_start(ro).count();
    const auto fit = fit_exponential(h, start, start + m.sequence.segments[ro].duration.count());
    if (!fit.converged) {
      r.detail = "fit did not converge at " + detail::fmt(powers[i]) + " uW";
      return r;
    }
    rates.push_back(1e3 / fit.value("tau_ms"));
    if (powers[i] == 13.0) tau13 = fit.value("tau_ms");
  }
  const auto lf = linear_regression(powers, rates);
  r.passed = lf.r_squared >= 0.99 && tau13 >= 1.0 && tau13 <= 2.5;
  r.detail = "R^2 = " + detail::fmt(lf.r_squared, 6) + ", slope " + detail::fmt(lf.slope) + " Hz/uW, tau(13 uW) = " +
             detail::fmt(tau13) + " ms";
  return r;
}

// A3: readout drop <= 10% at 50 V; final window at background at 0 V.
inline CriterionResult check_a3(const Options& opt) {
  CriterionResult r{"A3", "50 V drop <= 10%, 0 V final at background (3 sigma)"};
  auto run = [&](double v, std::uint64_t k) {
    const auto m = detail::base_measurement(protocol_fig1(13, 300, v), 20'000, derive_seed(opt.seed, StreamDomain::Test, k));
    return summarize_run(v, m.sequence, simulate_histogram(m, opt.workers));
  };
  const auto at50 = run(50.0, 30);
  const auto at0 = run(0.0, 31);
  const double drop = (at50.initial.rate_hz - at50.final.rate_hz) / at50.initial.rate_hz;
  const double z0 = std::abs(at0.final.rate_hz) / at0.final.error_hz;
  r.passed = drop <= 0.10 && z0 <= 3.0;
  r.detail = "drop(50 V) = " + detail::fmt(drop * 100, 3) + "%, final(0 V) - background = " +
             detail::fmt(at0.final.rate_hz) + " +- " + detail::fmt(at0.final.error_hz) + " Hz";
  return r;
}

// A4: recovery >= 0.9 with the near-resonant laser; |recovery| <= 0.1 without.
inline CriterionResult check_a4(const Options& opt) {
  CriterionResult r{"A4", "recovery >= 0.9 (NR on, 10 ms), |recovery| <= 0.1 (NR off)"};
  const auto on = detail::fig3_recovery(true, 50.0, Duration{10'000'000}, 200'000, derive_seed(opt.seed, StreamDomain::Test, 40), opt.workers);
  double worst_off = 0.0;
  std::string where;
  std::uint64_t k = 41;
  for (double v : {0.0, 50.0, 100.0}) {
    for (std::int64_t ms : {0, 1, 5, 10}) {
      const auto p = detail::fig3_recovery(false, v, Duration{ms * 1'000'000}, 200'000, derive_seed(opt.seed, StreamDomain::Test, k++), opt.workers);
      if (std::abs(p.recovery) >= worst_off) {
        worst_off = std::abs(p.recovery);
        where = detail::fmt(v) + " V, tau2 " + std::to_string(ms) + " ms";
      }
    }
  }
  r.passed = on.recovery >= 0.9 && worst_off <= 0.1;
  r.detail = "on(50 V) = " + detail::fmt(on.recovery) + " +- " + detail::fmt(on.recovery_error, 2) +
             "; max |off| = " + detail::fmt(worst_off, 3) + " at " + where;
  return r;
}

// A5: voltage window of full recovery.
inline CriterionResult check_a5(const Options& opt) {
  CriterionResult r{"A5", "recovery >= 0.9 at 20..120 V, < 0.5 at 0 and 180 V"};
  bool ok = true;
  std::string detail;
  std::uint64_t k = 60;
  for (double v : {0.0, 20.0, 50.0, 80.0, 120.0, 180.0}) {
    const std::int64_t reps = 200'000;
    const auto p = detail::fig3_recovery(true, v, Duration{10'000'000}, reps, derive_seed(opt.seed, StreamDomain::Test, k++), opt.workers);
    const bool inside = v >= 20.0 && v <= 120.0;
    ok = ok && (inside ? p.recovery >= 0.9 : p.recovery < 0.5);
    if (!detail.empty()) detail += ", ";
    detail += detail::fmt(v) + " V: " + detail::fmt(p.recovery, 3) + " +- " + detail::fmt(p.recovery_error, 2);
  }
  r.passed = ok;
  r.detail = detail;
  return r;
}

// A6: fitted PLE width follows Gamma0 sqrt(1 + s).
inline CriterionResult check_a6(const Options& opt) {
  CriterionResult r{"A6", "PLE FWHM = Gamma0 sqrt(1+s) within 3% at s = 0.1, 1, 3"};
  const ChargeModelParams params;
  ExperimentConfig cfg;
  cfg.protocol.builtin = BuiltinProtocol::Ple;
  cfg.protocol.green_power_uw = 300.0;
  cfg.protocol.dwell = Duration{10'000'000};
  cfg.repetitions = 100;
  cfg.seed = derive_seed(opt.seed, StreamDomain::Test, 70);
  PleScan scan;
  for (double s : {0.1, 1.0, 3.0}) scan.resonant_power_uw.push_back(s * params.p_sat_uw);
  cfg.ple = scan;
  const auto scans = simulate_ple(cfg, params, opt.workers);
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const double s = scan.resonant_power_uw[i] / params.p_sat_uw;
    const auto fit = fit_lorentzian(scans[i]);
    const double ratio = fit.value("fwhm_mhz") / (params.gamma0_mhz * std::sqrt(1.0 + s));
    ok = ok && fit.converged && std::abs(ratio - 1.0) <= 0.03;
    if (!detail.empty()) detail += ", ";
    detail += "s=" + detail::fmt(s) + ": w/(G0 sqrt(1+s)) = " + detail::fmt(ratio, 5);
  }
  r.passed = ok;
  r.detail = detail;
  return r;
}

// A7: noiseless round trips and Poisson coverage.
inline CriterionResult check_a7(const Options& opt) {
  CriterionResult r{"A7", "fit round trips to 1e-6, Poisson coverage"};
  Rng rng(derive_seed(opt.seed, StreamDomain::Test, 80));
  auto draw = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double a = draw(1e3, 1e5), tau = draw(0.5, 20.0), b = draw(100.0, 5e3);
    std::vector<double> t, y, s;
    for (int i = 0; i < 380; ++i) {
      t.push_back(0.05 + 0.1 * i);
      y.push_back(a * std::exp(-(t.back() - t.front()) / tau) + b);
      s.push_back(std::sqrt(y.back()));
    }
    const auto f = fit_exponential(t, y, s);
    worst = std::max({worst, rel(f.value("A_hz"), a), rel(f.value("tau_ms"), tau), rel(f.value("B_hz"), b)});

    const double la = draw(1e3, 1e5), x0 = draw(-200.0, 200.0), w = draw(50.0, 2000.0), lb = draw(100.0, 5e3);
    std::vector<ScanPoint> scan;
    for (int i = 0; i < 41; ++i) {
      const double d = x0 - 3.0 * w + 6.0 * w * i / 40.0;
      const double v = la * (w * w / 4) / ((d - x0) * (d - x0) + w * w / 4) + lb;
      scan.push_back({d, v, std::sqrt(v)});
    }
    const auto g = fit_lorentzian(scan);
    worst = std::max({worst, rel(g.value("A_hz"), la), rel(g.value("center_mhz"), x0), rel(g.value("fwhm_mhz"), w),
                      rel(g.value("B_hz"), lb)});
  }
  // Poisson coverage: A = 30 kHz, tau = 2.5 ms, B = 0.7 kHz, 1e4 repetitions of 100 us bins.
  std::mt19937_64 gen(derive_seed(opt.seed, StreamDomain::Test, 81));
  const double exposure = 1e4 * 1e-4;
  int covered = 0;
  double mean_tau = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> t, y, s;
    for (int i = 0; i < 380; ++i) {
      t.push_back(0.05 + 0.1 * i);
      const double mu = (30e3 * std::exp(-(t.back() - 0.05) / 2.5) + 700.0) * exposure;
      const double c = static_cast<double>(std::poisson_distribution<long long>(mu)(gen));
      y.push_back(c / exposure);
      s.push_back(std::sqrt(std::max(c, 1.0)) / exposure);
    }
    const auto f = fit_exponential(t, y, s);
    const auto& p = f.at("tau_ms");
    mean_tau += p.value / 100.0;
    if (p.error && std::abs(p.value - 2.5) <= *p.error) ++covered;
  }
  r.passed = worst <= 1e-6 && covered >= 60 && std::abs(mean_tau - 2.5) / 2.5 <= 0.02;
  r.detail = "worst relative error " + detail::fmt(worst, 3) + "; coverage " + std::to_string(covered) +
             "/100; mean tau " + detail::fmt(mean_tau, 5) + " ms";
  return r;
}

// A8: shipped configs replay byte-identically across 1, 4 and 8 workers.
inline CriterionResult check_a8(const Options& opt) {
  CriterionResult r{"A8", "shipped configs replay byte-identically on 1, 4, 8 workers"};
  namespace fs = std::filesystem;
  std::vector<fs::path> configs;
  if (fs::is_directory(opt.configs_dir)) {
    for (const auto& e : fs::directory_iterator(opt.configs_dir)) {
      if (e.path().extension() == ".cfg") configs.push_back(e.path());
    }
  }
  std::sort(configs.begin(), configs.end());
  if (configs.empty()) {
    r.detail = "no .cfg files in " + opt.configs_dir.string();
    return r;
  }
  bool ok = true;
  std::string detail;
  for (const auto& path : configs) {
    const auto cfg = load_config(path);
    const auto base = opt.scratch_dir / path.stem();
    fs::remove_all(base);
    RunOptions ro;
    ro.workers = 1;
    ro.config_dir = path.parent_path();
    const auto first = cfg.ple ? run_ple(cfg, base / "w1", ro) : run_experiment(cfg, base / "w1", ro);
    std::size_t csvs = 0;
    for (const auto& [file, hash] : first.manifest.at("outputs").items()) {
      if (fs::path(file).extension() == ".csv") ++csvs;
    }
    for (unsigned w : {4u, 8u}) {
      const auto rep = replay(base / "w1" / "manifest.json", base / ("w" + std::to_string(w)), w);
      if (!rep.identical()) {
        ok = false;
        detail += path.filename().string() + " @" + std::to_string(w) + " workers: " + rep.divergences.front() + "; ";
      }
    }
    detail += path.filename().string() + " (" + std::to_string(csvs) + " csv) ";
  }
  r.passed = ok;
  r.detail = detail;
  return r;
}

// A9: dark stability and detector dark counts.
inline CriterionResult check_a9(const Options& opt) {
  CriterionResult r{"A9", "no jumps in 1000 s dark; dark counts 700 Hz (3 sigma)"};
  const ChargeModelParams params;
  const DetectorParams det;
  bool ok = true;
  std::string detail;
  std::uint64_t k = 90;
  for (double v : {0.0, 100.0}) {
    PulseSequence seq;
    seq.segments = {{Duration{1'000'000'000'000}, {}, v, "dark"}};
    const auto cs = compile(seq, params);
    for (auto mode : {EngineMode::Full, EngineMode::Reduced}) {
      for (auto s : kAllStates) {
        EngineOptions eo;
        eo.mode = mode;
        eo.prethinning = mode == EngineMode::Reduced ? det.efficiency : 1.0;
        const auto traj = simulate_trajectory(cs, s, derive_seed(opt.seed, StreamDomain::Test, k), eo);
        std::vector<std::int64_t> tags;
        detect_into(traj, det, seq.period().count(), derive_seed(opt.seed, StreamDomain::Test, 1000 + k), tags);
        ++k;
        const double n = static_cast<double>(tags.size());
        const double z = std::abs(n / 1000.0 - det.dark_rate_hz) / (std::sqrt(n) / 1000.0);
        const bool pass = traj.jumps.empty() && traj.emissions.empty() && z <= 3.0;
        if (!pass) {
          detail += std::string(to_string(s)) + "/" + std::string(to_string(mode)) + " at " + detail::fmt(v) +
                    " V: " + std::to_string(traj.jumps.size()) + " jumps, rate " + detail::fmt(n / 1000.0) + " Hz; ";
        }
        ok = ok && pass;
      }
    }
  }
  r.passed = ok;
  r.detail = ok ? "0 jumps, 0 emissions; dark rates within 3 sigma of 700 Hz (12 cases)" : detail;
  return r;
}

struct Criterion {
  const char* id;
  std::function<CriterionResult(const Options&)> check;
};

inline std::vector<Criterion> criteria() {
  return {{"A1", check_a1}, {"A2", check_a2}, {"A3", check_a3}, {"A4", check_a4}, {"A5", check_a5},
          {"A6", check_a6}, {"A7", check_a7}, {"A8", check_a8}, {"A9", check_a9}};
}

/// Runs every criterion (or the listed ids); exceptions count as failures.
template <class Sink>
std::vector<CriterionResult> run_all(const Options& opt, Sink&& on_result, const std::vector<std::string>& only = {}) {
  std::vector<CriterionResult> results;
  for (const auto& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult res;
    try {
      res = c.check(opt);
    } catch (const std::exception& e) {
      res = {c.id, "", false, std::string("error: ") + e.what()};
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    on_result(res);
    results.push_back(res);
  }
  return results;
}

inline std::string format_line(const CriterionResult& r) {
  std::ostringstream s;
  s << (r.passed ? "PASS " : "FAIL ") << r.id << "  " << r.title << "  [" << r.detail << "]  (" << std::fixed;
  s.precision(1);
  s << r.seconds << " s)";
  return s.str();
}

}  // namespace sivsim::acceptance
