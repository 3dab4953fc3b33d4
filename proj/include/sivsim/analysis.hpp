#pragma once

// Decay and lineshape fits, windowed intensities, normalized recovery, and
// per-run sweep summaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sivsim/levenberg_marquardt.hpp"
#include "sivsim/photonics.hpp"
#include "sivsim/sequence.hpp"

namespace sivsim {

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitParameter {
  std::string name;
  double value = 0.0;
  /// One standard error; present only for converged fits.
  std::optional<double> error;
};

struct FitResult {
  std::string model;
  std::vector<FitParameter> parameters;
  double reduced_chi2 = 0.0;
  bool converged = false;
  int iterations = 0;

  const FitParameter& at(std::string_view name) const {
    for (const auto& p : parameters) {
      if (p.name == name) return p;
    }
    throw std::out_of_range("fit has no parameter '" + std::string(name) + "'");
  }
  double value(std::string_view name) const { return at(name).value; }
};

namespace detail {

template <std::size_t N>
FitResult make_fit_result(std::string model, const std::array<const char*, N>& names,
                          const LmOutcome<N>& lm) {
  FitResult r;
  r.model = std::move(model);
  r.converged = lm.converged;
  r.iterations = lm.iterations;
  r.reduced_chi2 = lm.dof > 0 ? lm.chi2 / static_cast<double>(lm.dof) : 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    FitParameter p{names[i], lm.params[i], std::nullopt};
    if (lm.converged && lm.covariance) {
      const double var = (*lm.covariance)[i][i];
      if (var >= 0.0 && std::isfinite(var)) p.error = std::sqrt(var);
    }
    r.parameters.push_back(std::move(p));
  }
  return r;
}

}  // namespace detail

// --- Exponential decay: I(t) = A exp(-(t - t0)/tau) + B, t in ms -------------

/// Fit over points (t_ms, rate, sigma); t is measured from the first point.
inline FitResult fit_exponential(std::span<const double> t_ms, std::span<const double> rate,
                                 std::span<const double> sigma) {
  const std::size_t n = t_ms.size();
  if (n < 5) throw AnalysisError("exponential fit needs at least 5 bins");
  if (rate.size() != n || sigma.size() != n) throw std::invalid_argument("fit_exponential: size mismatch");
  const auto [lo, hi] = std::minmax_element(rate.begin(), rate.end());
  if (*lo == *hi) throw AnalysisError("no decay signal");

  const double t0 = t_ms.front();
  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  double b = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) b += rate[i];
  b /= static_cast<double>(tail);
  const double a = rate.front() - b;
  const double target = b + a / std::exp(1.0);
  double tau = (t_ms.back() - t0) / 3.0;
  for (std::size_t i = 1; i < n; ++i) {
    if ((a > 0.0 && rate[i] <= target) || (a < 0.0 && rate[i] >= target)) {
      tau = std::max(t_ms[i] - t0, 1e-3 * (t_ms.back() - t0));
      break;
    }
  }

  auto model = [t0](double t, const Vec<3>& p, Vec<3>& g) {
    const double e = std::exp(-(t - t0) / p[1]);
    g[0] = e;
    g[1] = p[0] * e * (t - t0) / (p[1] * p[1]);
    g[2] = 1.0;
    return p[0] * e + p[2];
  };
  const auto lm = levenberg_marquardt<3>(model, t_ms, rate, sigma, {a, tau, b});
  return detail::make_fit_result<3>("exponential", {"A_hz", "tau_ms", "B_hz"}, lm);
}

/// Fit over the histogram bins lying fully inside [start, stop). Poisson
/// weights with variance max(counts, 1).
inline FitResult fit_exponential(const Histogram& h, std::int64_t start_ns, std::int64_t stop_ns) {
  if (start_ns < 0 || stop_ns > h.period_ns() || stop_ns <= start_ns) {
    throw std::invalid_argument("fit_exponential: window outside the period");
  }
  std::vector<double> t, y, s;
  std::uint64_t total = 0;
  for (std::size_t b = 0; b < h.size(); ++b) {
    if (h.bin_start(b) < start_ns || h.bin_end(b) > stop_ns) continue;
    const double exposure = static_cast<double>(h.repetitions()) * static_cast<double>(h.bin_length(b)) * 1e-9;
    const double c = static_cast<double>(h.count(b));
    t.push_back(h.bin_center_ms(b));
    y.push_back(c / exposure);
    s.push_back(std::sqrt(std::max(c, 1.0)) / exposure);
    total += h.count(b);
  }
  if (t.size() < 5 || total == 0) throw AnalysisError("exponential fit needs at least 5 bins with counts");
  return fit_exponential(t, y, s);
}

// --- Lorentzian: L = A (w/2)^2 / ((x - x0)^2 + (w/2)^2) + B ------------------

struct ScanPoint {
  double detuning_mhz = 0.0;
  double rate_hz = 0.0;
  double error_hz = 0.0;
};

inline FitResult fit_lorentzian(std::span<const ScanPoint> scan) {
  if (scan.size() < 7) throw AnalysisError("Lorentzian fit needs at least 7 scan points");
  std::vector<ScanPoint> pts(scan.begin(), scan.end());
  std::sort(pts.begin(), pts.end(),
            [](const ScanPoint& a, const ScanPoint& b) { return a.detuning_mhz < b.detuning_mhz; });
  std::vector<double> x, y, s;
  for (const auto& p : pts) {
    x.push_back(p.detuning_mhz);
    y.push_back(p.rate_hz);
    s.push_back(p.error_hz);
  }
  const auto peak = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
  const double base = std::min(std::min(y.front(), y.back()), *std::min_element(y.begin(), y.end()));
  const double amp = y[peak] - base;
  if (!(amp > 3.0 * s[peak])) throw AnalysisError("no line detected");

  // Half-maximum crossings by linear interpolation on each side of the peak.
  const double half = base + 0.5 * amp;
  auto crossing = [&](std::ptrdiff_t dir) -> std::optional<double> {
    for (auto i = static_cast<std::ptrdiff_t>(peak); i + dir >= 0 && i + dir < static_cast<std::ptrdiff_t>(y.size()); i += dir) {
      const auto j = static_cast<std::size_t>(i + dir);
      const auto k = static_cast<std::size_t>(i);
      if (y[j] <= half) {
        const double f = (y[k] - half) / (y[k] - y[j]);
        return x[k] + f * (x[j] - x[k]);
      }
    }
    return std::nullopt;
  };
  const auto left = crossing(-1);
  const auto right = crossing(+1);
  double width;
  if (left && right) {
    width = *right - *left;
  } else if (left || right) {
    width = 2.0 * std::abs((left ? *left : *right) - x[peak]);
  } else {
    throw AnalysisError("scan does not cover the line's half-maximum points");
  }
  if (x.back() - x.front() < 2.0 * width) throw AnalysisError("scan must span at least 2 FWHM");

  auto model = [](double d, const Vec<4>& p, Vec<4>& g) {
    const double hw = 0.5 * p[2];
    const double u = d - p[1];
    const double den = u * u + hw * hw;
    const double shape = hw * hw / den;
    g[0] = shape;
    g[1] = p[0] * 2.0 * u * hw * hw / (den * den);
    g[2] = p[0] * hw * u * u / (den * den);
    g[3] = 1.0;
    return p[0] * shape + p[3];
  };
  const auto lm = levenberg_marquardt<4>(model, x, y, s, {amp, x[peak], width, base});
  auto r = detail::make_fit_result<4>("lorentzian", {"A_hz", "center_mhz", "fwhm_mhz", "B_hz"}, lm);
  r.parameters[2].value = std::abs(r.parameters[2].value);
  return r;
}

// --- Recovery -----------------------------------------------------------------

inline double normalized_recovery(double i1_init, double i1_final, double i2_init) {
  if (!(i1_init > i1_final)) throw AnalysisError("no loss to normalize");
  return (i2_init - i1_final) / (i1_init - i1_final);
}

struct RecoveryPoint {
  double tau2_ms = 0.0;
  RateEstimate i1_init, i1_final, i2_init, i2_final;
  double recovery = 0.0;
  double recovery_error = 0.0;
};

/// First-order propagation through (I2i - I1f)/(I1i - I1f); I2,final does not enter.
inline RecoveryPoint make_recovery_point(double tau2_ms, RateEstimate i1_init, RateEstimate i1_final,
                                         RateEstimate i2_init, RateEstimate i2_final) {
  RecoveryPoint p{tau2_ms, i1_init, i1_final, i2_init, i2_final, 0.0, 0.0};
  p.recovery = normalized_recovery(i1_init.rate_hz, i1_final.rate_hz, i2_init.rate_hz);
  const double loss = i1_init.rate_hz - i1_final.rate_hz;
  const double d_i2 = 1.0 / loss;
  const double d_i1 = -(i2_init.rate_hz - i1_final.rate_hz) / (loss * loss);
  const double d_f = (i2_init.rate_hz - i1_init.rate_hz) / (loss * loss);
  p.recovery_error = std::sqrt(std::pow(d_i2 * i2_init.error_hz, 2) + std::pow(d_i1 * i1_init.error_hz, 2) +
                               std::pow(d_f * i1_final.error_hz, 2));
  return p;
}

// --- Sweep summaries ------------------------------------------------------------

inline constexpr std::int64_t kIntensityWindowNs = 1'000'000;

struct SweepInput {
  double axis_value = 0.0;
  const PulseSequence* sequence = nullptr;
  const Histogram* histogram = nullptr;
};

struct SweepRow {
  double axis_value = 0.0;
  RateEstimate background;
  std::optional<RateEstimate> stabilized;
  RateEstimate initial;
  RateEstimate final;
  std::optional<RateEstimate> second_initial;
  std::optional<double> tau_ms;
  std::optional<double> tau_error_ms;
  std::optional<double> recovery;
  std::optional<double> recovery_error;
  std::string note;
};

namespace detail {

inline std::vector<std::string> protocol_shape(const PulseSequence& seq) {
  std::vector<std::string> shape;
  for (const auto& s : seq.segments) {
    if (s.tag == tags::kDelay || s.tag == tags::kRepetitionGap) continue;
    shape.push_back(s.tag);
  }
  return shape;
}

inline RateEstimate subtract(RateEstimate a, RateEstimate bg) {
  return {a.rate_hz - bg.rate_hz, std::hypot(a.error_hz, bg.error_hz)};
}

}  // namespace detail

/// Per-run window rates for a fig1/fig2-style (readout) or fig3-style
/// (pulse1/pulse2) protocol. Rates are background subtracted, the background
/// being the mean over the dark gap segment.
inline SweepRow summarize_run(double axis_value, const PulseSequence& seq, const Histogram& h) {
  if (h.period_ns() != seq.period().count()) {
    throw std::invalid_argument("histogram period does not match the sequence");
  }
  auto segment_window = [&](std::string_view tag) -> std::optional<std::pair<std::int64_t, std::int64_t>> {
    const auto i = seq.find_tag(tag);
    if (i < 0) return std::nullopt;
    const auto start = seq.segment_start(static_cast<std::size_t>(i)).count();
    return std::make_pair(start, start + seq.segments[static_cast<std::size_t>(i)].duration.count());
  };
  const auto gap = segment_window(tags::kGap);
  if (!gap) throw AnalysisError("protocol has no dark gap segment for the background");
  SweepRow row;
  row.axis_value = axis_value;
  row.background = window_intensity(h, gap->first, gap->second);

  auto first_ms = [&](std::pair<std::int64_t, std::int64_t> w) {
    return window_intensity(h, w.first, std::min(w.second, w.first + kIntensityWindowNs));
  };
  auto last_ms = [&](std::pair<std::int64_t, std::int64_t> w) {
    return window_intensity(h, std::max(w.first, w.second - kIntensityWindowNs), w.second);
  };

  if (auto probe = segment_window(tags::kProbe)) {
    row.stabilized = detail::subtract(window_intensity(h, probe->first, probe->second), row.background);
  }
  if (auto readout = segment_window(tags::kReadout)) {
    row.initial = detail::subtract(first_ms(*readout), row.background);
    row.final = detail::subtract(last_ms(*readout), row.background);
    try {
      const auto fit = fit_exponential(h, readout->first, readout->second);
      if (fit.converged) {
        row.tau_ms = fit.value("tau_ms");
        row.tau_error_ms = fit.at("tau_ms").error;
      } else {
        row.note = "decay fit did not converge";
      }
    } catch (const AnalysisError& e) {
      row.note = e.what();
    }
    return row;
  }
  const auto p1 = segment_window(tags::kPulse1);
  const auto p2 = segment_window(tags::kPulse2);
  if (!p1 || !p2) throw AnalysisError("protocol has neither a readout nor a pulse1/pulse2 pair");
  const auto raw_i1 = first_ms(*p1);
  const auto raw_f1 = last_ms(*p1);
  const auto raw_i2 = first_ms(*p2);
  const auto raw_f2 = last_ms(*p2);
  row.initial = detail::subtract(raw_i1, row.background);
  row.final = detail::subtract(raw_f1, row.background);
  row.second_initial = detail::subtract(raw_i2, row.background);
  double tau2_ms = 0.0;
  if (auto d = segment_window(tags::kDelay)) tau2_ms = static_cast<double>(d->second - d->first) * 1e-6;
  try {
    const auto rp = make_recovery_point(tau2_ms, raw_i1, raw_f1, raw_i2, raw_f2);
    row.recovery = rp.recovery;
    row.recovery_error = rp.recovery_error;
  } catch (const AnalysisError& e) {
    row.note = e.what();
  }
  return row;
}

inline std::vector<SweepRow> sweep_summary(std::span<const SweepInput> runs) {
  std::vector<SweepRow> rows;
  if (runs.empty()) return rows;
  const auto shape = detail::protocol_shape(*runs.front().sequence);
  for (const auto& r : runs) {
    if (detail::protocol_shape(*r.sequence) != shape) {
      throw AnalysisError("inconsistent protocols across sweep runs");
    }
    rows.push_back(summarize_run(r.axis_value, *r.sequence, *r.histogram));
  }
  return rows;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares y = slope x + intercept.
inline LinearFit linear_regression(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("linear_regression needs >= 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("linear_regression: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

}  // namespace sivsim
