#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sivsim/engine.hpp"
#include "sivsim/experiment.hpp"

using namespace sivsim;
using Catch::Approx;

namespace {

// Kolmogorov-Smirnov distance of a sample against Exp(rate).
double ks_exponential(std::vector<double> x, double rate) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = 1.0 - std::exp(-rate * x[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
  }
  return d;
}

double ks_critical_001(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

CompiledSequence two_state(double b_to_d, double d_to_b, double length_ns, int pieces = 1) {
  CompiledSequence cs;
  for (int i = 0; i < pieces; ++i) {
    CompiledSegment s;
    s.start_ns = length_ns * i / pieces;
    s.end_ns = length_ns * (i + 1) / pieces;
    s.reduced.bright_to_dark = b_to_d;
    s.reduced.dark_to_bright = d_to_b;
    cs.segments.push_back(s);
  }
  cs.period_ns = length_ns;
  return cs;
}

// Classical RK4 on dp/dt = p Q with a fixed small step.
Vec3 brute_force(const PulseSequence& seq, const ChargeModelParams& params, Vec3 p, double dt_s) {
  for (const auto& s : seq.segments) {
    const auto q = generator(build_rates(s.channels, s.voltage_v, params));
    auto deriv = [&](const Vec3& x) {
      Vec3 d{};
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t i = 0; i < 3; ++i) d[j] += x[i] * q[i][j];
      return d;
    };
    const double total = static_cast<double>(s.duration.count()) * 1e-9;
    const auto steps = static_cast<long>(std::llround(total / dt_s));
    const double h = total / static_cast<double>(steps);
    for (long k = 0; k < steps; ++k) {
      const auto k1 = deriv(p);
      Vec3 t{};
      for (std::size_t i = 0; i < 3; ++i) t[i] = p[i] + 0.5 * h * k1[i];
      const auto k2 = deriv(t);
      for (std::size_t i = 0; i < 3; ++i) t[i] = p[i] + 0.5 * h * k2[i];
      const auto k3 = deriv(t);
      for (std::size_t i = 0; i < 3; ++i) t[i] = p[i] + h * k3[i];
      const auto k4 = deriv(t);
      for (std::size_t i = 0; i < 3; ++i) p[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("absorbing dark sequence produces nothing") {
  PulseSequence seq;
  seq.segments = {{Duration{5'000'000}, {}, 0.0, "dark"}};
  for (auto mode : {EngineMode::Full, EngineMode::Reduced}) {
    EngineOptions opt;
    opt.mode = mode;
    const auto t = simulate_trajectory(seq, ChargeModelParams{}, ChargeState::Dark, 1, opt);
    CHECK(t.jumps.empty());
    CHECK(t.emissions.empty());
    CHECK(t.final_state() == ChargeState::Dark);
  }
}

TEST_CASE("invalid sequences are rejected") {
  PulseSequence seq;
  seq.segments = {{Duration{0}, {}, 0.0, ""}};
  CHECK_THROWS_AS(simulate_trajectory(seq, ChargeModelParams{}, ChargeState::Dark, 1), InvalidSequence);
}

TEST_CASE("trajectories are a deterministic function of the seed") {
  const auto seq = protocol_fig3(Duration{5'000'000}, true, 50.0);
  for (auto mode : {EngineMode::Full, EngineMode::Reduced}) {
    EngineOptions opt;
    opt.mode = mode;
    const auto a = simulate_trajectory(seq, ChargeModelParams{}, ChargeState::Dark, 99, opt);
    const auto b = simulate_trajectory(seq, ChargeModelParams{}, ChargeState::Dark, 99, opt);
    const auto c = simulate_trajectory(seq, ChargeModelParams{}, ChargeState::Dark, 100, opt);
    REQUIRE(a.jumps.size() == b.jumps.size());
    REQUIRE(a.emissions.size() == b.emissions.size());
    for (std::size_t i = 0; i < a.jumps.size(); ++i) {
      CHECK(a.jumps[i].time_ns == b.jumps[i].time_ns);
      CHECK(a.jumps[i].state == b.jumps[i].state);
    }
    CHECK(a.emissions.size() != c.emissions.size());
  }
}

TEST_CASE("jumps are ordered and follow allowed transitions") {
  const ChargeModelParams params;
  const auto seq = protocol_fig3(Duration{5'000'000}, true, 150.0);
  EngineOptions opt;
  opt.mode = EngineMode::Full;
  const auto t = simulate_trajectory(seq, params, ChargeState::Dark, 5, opt);
  REQUIRE(!t.jumps.empty());
  ChargeState prev = t.initial_state;
  double last = -1.0;
  for (const auto& j : t.jumps) {
    CHECK(j.time_ns > last);
    CHECK(j.state != prev);
    CHECK(RateSet{1, 1, 1, 1, 1}.rate(prev, j.state) > 0.0);
    last = j.time_ns;
    prev = j.state;
  }
  last = -1.0;
  for (const auto& e : t.emissions) {
    CHECK(e.time_ns > last);
    last = e.time_ns;
  }
}

TEST_CASE("emission count over a resonant segment matches the analytic mean") {
  ChargeModelParams params;
  params.k_ion_hz = 0.0;
  params.hole_gen = {};
  params.k_field_ion_hz = 0.0;
  PulseSequence seq;
  seq.segments = {{Duration{38'000'000}, {LaserChannel::resonant(0.05)}, 0.0, "readout"}};
  const auto cs = compile(seq, params);
  const double r = cs.segments[0].rates.excitation;
  const double g = params.gamma_rad_hz;
  const double lambda = r + g;
  const double T = 38e-3;
  const double expected = g * r / lambda * (T - (1.0 - std::exp(-lambda * T)) / lambda);
  EngineOptions opt;
  opt.mode = EngineMode::Full;
  const int n = 10000;
  double sum = 0.0, sum2 = 0.0;
  std::size_t zpl = 0, total = 0;
  for (int i = 0; i < n; ++i) {
    const auto t = simulate_trajectory(cs, ChargeState::BrightGround, derive_seed(3, StreamDomain::Test, i), opt);
    const double c = static_cast<double>(t.emissions.size());
    sum += c;
    sum2 += c * c;
    for (const auto& e : t.emissions) zpl += e.band == EmissionBand::ZPL;
    total += t.emissions.size();
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(mean - expected) <= 3.0 * se);
  const double f = static_cast<double>(zpl) / static_cast<double>(total);
  CHECK(std::abs(f - params.zpl_branching) <= 4.0 * std::sqrt(0.21 / static_cast<double>(total)));
}

TEST_CASE("fig1 readout leaves the emitter dark") {
  const ChargeModelParams params;
  const auto seq = protocol_fig1(13.0, 300.0, 0.0);
  const auto cs = compile(seq, params);
  const double end = cs.period_ns - 1.0;
  std::vector<double> at{end};
  for (auto mode : {EngineMode::Reduced, EngineMode::Full}) {
    const std::int64_t n = mode == EngineMode::Reduced ? 20000 : 2000;
    const auto bright = bright_counts(cs, ChargeState::Dark, at, n, 17, mode);
    CHECK(static_cast<double>(bright[0]) / static_cast<double>(n) < 1e-3);
  }
  const auto p = populations_at(cs, PopulationVector::pure(ChargeState::Dark), at);
  CHECK(p[0].populations.bright() < 1e-3);
}

TEST_CASE("waiting times are exponential (KS, alpha = 0.01)") {
  const auto cs = two_state(700.0, 1300.0, 30e9);
  EngineOptions opt;
  opt.record_emissions = false;
  Trajectory t = simulate_trajectory(cs, ChargeState::BrightGround, 8, opt);
  std::vector<double> bright, dark;
  double since = 0.0;
  ChargeState s = t.initial_state;
  for (const auto& j : t.jumps) {
    (s == ChargeState::BrightGround ? bright : dark).push_back((j.time_ns - since) * 1e-9);
    since = j.time_ns;
    s = j.state;
  }
  REQUIRE(bright.size() >= 10000);
  REQUIRE(dark.size() >= 10000);
  bright.resize(10000);
  dark.resize(10000);
  CHECK(ks_exponential(bright, 700.0) < ks_critical_001(bright.size()));
  CHECK(ks_exponential(dark, 1300.0) < ks_critical_001(dark.size()));
}

TEST_CASE("splitting a segment does not change the law of the first jump") {
  const auto whole = two_state(500.0, 0.0, 1e8, 1);
  const auto split = two_state(500.0, 0.0, 1e8, 400);
  EngineOptions opt;
  opt.record_emissions = false;
  std::vector<double> a, b;
  for (int i = 0; i < 10000; ++i) {
    const auto ta = simulate_trajectory(whole, ChargeState::BrightGround, derive_seed(1, StreamDomain::Test, i), opt);
    const auto tb = simulate_trajectory(split, ChargeState::BrightGround, derive_seed(3, StreamDomain::Test, i), opt);
    a.push_back(ta.jumps.empty() ? 1e8 : ta.jumps[0].time_ns);
    b.push_back(tb.jumps.empty() ? 1e8 : tb.jumps[0].time_ns);
  }
  // Censored at the end of the sequence (P = exp(-50)); compare both to Exp(500 Hz).
  for (auto& x : a) x *= 1e-9;
  for (auto& x : b) x *= 1e-9;
  CHECK(ks_exponential(a, 500.0) < ks_critical_001(a.size()));
  CHECK(ks_exponential(b, 500.0) < ks_critical_001(b.size()));
}

TEST_CASE("propagator: trivial generators") {
  PulseSequence dark;
  dark.segments = {{Duration{1'000'000}, {}, 0.0, ""}};
  PopulationVector p0;
  p0.p = {0.2, 0.3, 0.5};
  for (const auto& s : propagate_populations(dark, ChargeModelParams{}, p0, Duration{100'000})) {
    CHECK(s.populations.p == p0.p);
  }
  RateSet r;
  r.field_ionization = 300.0;
  r.capture = 900.0;
  const auto ss = steady_state(r, PopulationVector::pure(ChargeState::Dark));
  CHECK(ss[ChargeState::BrightGround] == Approx(900.0 / 1200.0).epsilon(1e-12));
}

TEST_CASE("propagator rejects non-normalized input and bad grids") {
  const auto seq = protocol_fig1(13.0, 300.0);
  PopulationVector bad;
  bad.p = {0.5, 0.5, 0.1};
  CHECK_THROWS_AS(propagate_populations(seq, ChargeModelParams{}, bad, Duration{1'000}), std::invalid_argument);
  CHECK_THROWS_AS(propagate_populations(seq, ChargeModelParams{}, PopulationVector::pure(ChargeState::Dark), Duration{0}),
                  std::invalid_argument);
}

TEST_CASE("propagator conserves probability across stiff sequences") {
  const ChargeModelParams params;
  for (const auto& seq : {protocol_fig1(13.0, 300.0, 50.0), protocol_fig3(Duration{10'000'000}, true, 180.0)}) {
    const auto series = propagate_populations(seq, params, PopulationVector::pure(ChargeState::Dark), Duration{50'000});
    for (const auto& s : series) {
      CHECK(std::abs(s.populations.sum() - 1.0) <= 1e-10);
      for (double x : s.populations.p) {
        CHECK(x >= -1e-15);
        CHECK(x <= 1.0 + 1e-15);
      }
    }
  }
}

TEST_CASE("propagator agrees with a brute-force fixed-step integrator") {
  ChargeModelParams params;
  params.gamma_rad_hz = 2e5;  // keeps RK4 affordable
  params.k_ion_hz = 3e4;
  PulseSequence seq;
  seq.voltage_stepped = true;
  seq.segments = {{Duration{300'000}, {LaserChannel::green(300.0)}, 0.0, "a"},
                  {Duration{200'000}, {}, 140.0, "b"},
                  {Duration{500'000}, {LaserChannel::resonant(20.0), LaserChannel::near_resonant(13.0)}, 60.0, "c"}};
  const auto exact = propagate_populations(seq, params, PopulationVector::pure(ChargeState::Dark), seq.period());
  const auto rk = brute_force(seq, params, PopulationVector::pure(ChargeState::Dark).p, 2e-9);
  for (std::size_t i = 0; i < 3; ++i) CHECK(exact.back().populations.p[i] == Approx(rk[i]).margin(1e-9));
}

TEST_CASE("MC occupancy matches the propagator within 4 sigma") {
  ChargeModelParams params;
  params.gamma_rad_hz = 3e5;
  const auto seq = protocol_fig3(Duration{2'000'000}, true, 150.0);
  const auto cs = compile(seq, params);
  std::vector<double> times;
  for (int k = 0; k < 10; ++k) times.push_back((k + 0.5) / 10.0 * cs.period_ns);
  const auto oracle = populations_at(cs, PopulationVector::pure(ChargeState::Dark), times);
  const std::int64_t n = 20000;
  const auto counts = bright_counts(cs, ChargeState::Dark, times, n, 5, EngineMode::Full, 2);
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double p = oracle[k].populations.bright();
    const double sigma = std::max(std::sqrt(p * (1 - p) / n), 1.0 / n);
    CHECK(std::abs(static_cast<double>(counts[k]) / n - p) <= 4.0 * sigma);
  }
}

TEST_CASE("reduced two-state dynamics agree with the three-state oracle") {
  const ChargeModelParams params;
  for (const auto& seq : {protocol_fig1(13.0, 300.0, 0.0), protocol_fig1(13.0, 300.0, 50.0),
                          protocol_fig3(Duration{10'000'000}, true, 50.0), protocol_fig3(Duration{10'000'000}, true, 180.0)}) {
    const auto cs = compile(seq, params);
    auto reduced = cs;
    for (auto& s : reduced.segments) {
      s.rates = RateSet{};
      s.rates.field_ionization = s.reduced.bright_to_dark;
      s.rates.capture = s.reduced.dark_to_bright;
    }
    std::vector<double> times;
    for (int k = 1; k <= 40; ++k) times.push_back(k / 40.0 * cs.period_ns);
    const auto full = populations_at(cs, PopulationVector::pure(ChargeState::Dark), times);
    const auto red = populations_at(reduced, PopulationVector::pure(ChargeState::Dark), times);
    for (std::size_t k = 0; k < times.size(); ++k) {
      const double a = full[k].populations.bright();
      const double b = red[k].populations.bright();
      CHECK(std::abs(a - b) <= std::max(0.01 * a, 1e-6));
    }
  }
}

TEST_CASE("results are independent of the worker count") {
  const auto cs = compile(protocol_fig3(Duration{1'000'000}, true, 50.0), ChargeModelParams{});
  const std::vector<double> times{1e6, 1e7, 2e7};
  const auto a = bright_counts(cs, ChargeState::Dark, times, 3000, 9, EngineMode::Reduced, 1);
  const auto b = bright_counts(cs, ChargeState::Dark, times, 3000, 9, EngineMode::Reduced, 7);
  CHECK(a == b);
  Measurement m;
  m.sequence = protocol_fig1(13.0, 300.0, 20.0);
  m.repetitions = 1500;
  m.seed = 4;
  CHECK(simulate_histogram(m, 1) == simulate_histogram(m, 5));
}
