#include <catch_amalgamated.hpp>

#include "sivsim/model.hpp"
#include "sivsim/random.hpp"

using namespace sivsim;
using Catch::Approx;

TEST_CASE("excitation rate: zero power, saturation, half width") {
  const ChargeModelParams p;
  CHECK(excitation_rate(0.0, 123.0, p) == 0.0);
  CHECK(excitation_rate(1e12, 0.0, p) == Approx(p.r_max_hz).epsilon(1e-9));
  const double s3 = 3.0 * p.p_sat_uw;
  CHECK(excitation_rate(s3, p.gamma0_mhz, p) / excitation_rate(s3, 0.0, p) == Approx(0.5).epsilon(1e-14));
  CHECK(broadened_linewidth_mhz(s3, p) == Approx(2.0 * p.gamma0_mhz));
}

TEST_CASE("excitation rate is symmetric in detuning and monotone in power") {
  const ChargeModelParams p;
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double power = 200.0 * rng.uniform();
    const double d = 2000.0 * rng.uniform();
    CHECK(excitation_rate(power, d, p) == excitation_rate(power, -d, p));
    CHECK(excitation_rate(power * 1.1, d, p) > excitation_rate(power, d, p));
  }
}

TEST_CASE("hole flux follows the drift factor") {
  const ChargeModelParams p;
  const std::vector<LaserChannel> none;
  CHECK(hole_flux(none, 50.0, p) == 0.0);
  const std::vector<LaserChannel> green{LaserChannel::green(300.0)};
  CHECK(hole_flux(green, 0.0, p) == Approx(p.hole_gen.green * 300.0));
  CHECK(hole_flux(green, -20.0, p) == Approx(p.hole_gen.green * 300.0));
  CHECK(hole_flux(green, p.v_half_v, p) == Approx(p.hole_gen.green * 300.0 * (1.0 + (p.f_max - 1.0) / 2.0)));
}

TEST_CASE("build_rates: dark stability and laser-free field ionization") {
  const ChargeModelParams p;
  const std::vector<LaserChannel> off{LaserChannel::green(0.0), LaserChannel::resonant(0.0),
                                      LaserChannel::near_resonant(0.0)};
  for (double v : {0.0, 50.0, 119.9}) CHECK(build_rates(off, v, p).all_zero());
  const auto r = build_rates(off, 150.0, p);
  CHECK(r.excitation == 0.0);
  CHECK(r.decay == 0.0);
  CHECK(r.photoionization == 0.0);
  CHECK(r.capture == 0.0);
  CHECK(r.field_ionization == Approx(p.k_field_ion_hz * 30.0 / 120.0));
}

TEST_CASE("build_rates: structure of an illuminated segment") {
  const ChargeModelParams p;
  const std::vector<LaserChannel> chs{LaserChannel::green(300.0), LaserChannel::resonant(13.0)};
  const auto r = build_rates(chs, 0.0, p);
  CHECK(r.excitation == Approx(p.green_exc_hz_per_uw * 300.0 + excitation_rate(13.0, 0.0, p)));
  CHECK(r.decay == p.gamma_rad_hz);
  CHECK(r.photoionization == p.k_ion_hz);
  CHECK(r.field_ionization == 0.0);
  CHECK(r.capture == Approx(p.c_capture_hz * (p.hole_gen.green * 300.0 + p.hole_gen.resonant * 13.0)));
  CHECK(r.rate(ChargeState::Dark, ChargeState::BrightExcited) == 0.0);
  CHECK(r.rate(ChargeState::BrightGround, ChargeState::BrightGround) == 0.0);
}

TEST_CASE("capture is non-decreasing in voltage and every power") {
  const ChargeModelParams p;
  Rng rng(11);
  for (int i = 0; i < 300; ++i) {
    const double g = 400.0 * rng.uniform(), res = 50.0 * rng.uniform(), nr = 50.0 * rng.uniform();
    const double v = 200.0 * rng.uniform();
    auto capture = [&](double gg, double rr, double nn, double vv) {
      const std::vector<LaserChannel> c{LaserChannel::green(gg), LaserChannel::resonant(rr),
                                        LaserChannel::near_resonant(nn)};
      const auto r = build_rates(c, vv, p);
      CHECK(r.excitation >= 0.0);
      CHECK(r.photoionization >= 0.0);
      CHECK(r.field_ionization >= 0.0);
      return r.capture;
    };
    const double base = capture(g, res, nr, v);
    CHECK(capture(g, res, nr, v + 5.0) >= base);
    CHECK(capture(g + 1.0, res, nr, v) >= base);
    CHECK(capture(g, res + 1.0, nr, v) >= base);
    CHECK(capture(g, res, nr + 1.0, v) >= base);
  }
  const std::vector<LaserChannel> green{LaserChannel::green(300.0)};
  CHECK(build_rates(green, 50.0, p).capture > build_rates(green, 0.0, p).capture);
}

TEST_CASE("effective bright-to-dark rate") {
  const ChargeModelParams p;
  CHECK(effective_bright_to_dark_rate(p, 0.0) == 0.0);
  // 13 uW anchor: rate >= 400 Hz (tau <= 2.5 ms).
  CHECK(effective_bright_to_dark_rate(p, 13.0) >= 400.0);
  // Doubling deep below saturation (s <= 0.05).
  const double lo = 0.025 * p.p_sat_uw;
  CHECK(effective_bright_to_dark_rate(p, 2 * lo) / (2 * effective_bright_to_dark_rate(p, lo)) == Approx(1.0).epsilon(0.05));
  // Below saturation rate/P departs from a constant only by the 1/(1+s)
  // saturation factor; it is constant within 1% up to s = 0.02.
  const double ref = effective_bright_to_dark_rate(p, 0.01 * p.p_sat_uw) / (0.01 * p.p_sat_uw);
  for (double f = 0.01; f <= 0.1 + 1e-12; f += 0.01) {
    const double ratio = effective_bright_to_dark_rate(p, f * p.p_sat_uw) / (f * p.p_sat_uw) / ref;
    CHECK(ratio == Approx(1.01 / (1.0 + f)).epsilon(3e-3));
    if (f <= 0.02 + 1e-12) CHECK(ratio == Approx(1.0).epsilon(0.01));
  }
}

TEST_CASE("reduced rates fold the excited state") {
  const ChargeModelParams p;
  const std::vector<LaserChannel> chs{LaserChannel::resonant(13.0)};
  const auto r = build_rates(chs, 130.0, p);
  const auto red = reduce(r, p);
  const double pi = r.excitation / (r.excitation + r.decay + r.photoionization);
  CHECK(red.excited_fraction == Approx(pi));
  CHECK(red.bright_to_dark == Approx(r.photoionization * pi + r.field_ionization * (1 - pi)));
  CHECK(red.dark_to_bright == r.capture);
  CHECK(red.psb_emission == Approx(pi * r.decay * (1 - p.zpl_branching)));
}

TEST_CASE("parameter validation lists every violation") {
  ChargeModelParams p;
  CHECK(p.validate().empty());
  p.zpl_branching = 1.5;
  p.p_sat_uw = 0.0;
  p.k_ion_hz = -1.0;
  CHECK(p.validate().size() == 3);
}

TEST_CASE("near-resonant default detuning is 4.6 meV") {
  CHECK(kNearResonantDetuningMHz == Approx(1.1123e6).epsilon(1e-3));
  CHECK(LaserChannel::resonant(1.0).detuning_mhz == 0.0);
  CHECK(parse_laser_color("near_resonant") == LaserColor::NearResonant);
  CHECK_THROWS(parse_laser_color("blue"));
  CHECK(parse_charge_state("Dark") == ChargeState::Dark);
}

TEST_CASE("seed derivation is a pure function with distinct streams") {
  CHECK(derive_seed(1, StreamDomain::Trajectory, 5) == derive_seed(1, StreamDomain::Trajectory, 5));
  CHECK(derive_seed(1, StreamDomain::Trajectory, 5) != derive_seed(1, StreamDomain::Detection, 5));
  CHECK(derive_seed(1, StreamDomain::Trajectory, 5) != derive_seed(2, StreamDomain::Trajectory, 5));
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a() == b());
  Rng u(3);
  double mean = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = u.uniform();
    REQUIRE(x > 0.0);
    REQUIRE(x < 1.0);
    mean += x / 100000.0;
  }
  CHECK(mean == Approx(0.5).margin(0.005));
}
