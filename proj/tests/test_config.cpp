#include <catch_amalgamated.hpp>

#include <filesystem>

#include "sivsim/config.hpp"

using namespace sivsim;

namespace fs = std::filesystem;

TEST_CASE("durations parse exactly") {
  CHECK(parse_duration("5 ms") == Duration{5'000'000});
  CHECK(parse_duration("0.1 ms") == Duration{100'000});
  CHECK(parse_duration("1.5s") == Duration{1'500'000'000});
  CHECK(parse_duration("250 us") == Duration{250'000});
  CHECK(parse_duration("250 µs") == Duration{250'000});
  CHECK(parse_duration("7 ns") == Duration{7});
  CHECK(parse_duration("0 ms") == Duration{0});
  CHECK_THROWS_AS(parse_duration("5"), std::invalid_argument);
  CHECK_THROWS_AS(parse_duration("5 min"), std::invalid_argument);
  CHECK_THROWS_AS(parse_duration("0.5 ns"), std::invalid_argument);
  CHECK_THROWS_AS(parse_duration("-1 ms"), std::invalid_argument);
  for (auto d : {Duration{0}, Duration{7}, Duration{250'000}, Duration{37'000'000}, Duration{1'500'000'001}}) {
    CHECK(parse_duration(format_duration(d)) == d);
  }
}

TEST_CASE("shipped configs parse, validate and round-trip") {
  const fs::path dir = SIVSIM_CONFIG_DIR;
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".cfg") continue;
    ++seen;
    INFO(entry.path().string());
    const auto cfg = load_config(entry.path());
    CHECK(validate_config(cfg, dir).empty());
    CHECK(cfg.seed.has_value());
    const auto again = parse_config_text(serialize_config(cfg));
    CHECK(again == cfg);
    CHECK(serialize_config(again) == serialize_config(cfg));
  }
  CHECK(seen == 4);
}

TEST_CASE("shipped profiles file matches the built-in profile") {
  const auto loaded = load_profiles(fs::path(SIVSIM_CONFIG_DIR) / "profiles.yaml");
  CHECK(loaded == builtin_profiles());
}

TEST_CASE("profiles text round-trips") {
  auto profiles = builtin_profiles();
  profiles["other"].k_ion_hz = 2.5e5;
  const auto path = fs::temp_directory_path() / "sivsim_profiles_rt.yaml";
  std::ofstream(path) << profiles_yaml(profiles);
  CHECK(load_profiles(path) == profiles);
  fs::remove(path);
}

TEST_CASE("config errors carry line numbers") {
  auto line_of_error = [](const std::string& text) {
    try {
      parse_config_text(text);
    } catch (const ConfigError& e) {
      return e.line();
    }
    return -1;
  };
  CHECK(line_of_error("label: x\nprotocol:\n  builtin: fig1\nrepetitions: many\n") == 4);
  CHECK(line_of_error("label: x\nprotocol:\n  builtin: fig1\n  bogus: 1\n") == 4);
  CHECK(line_of_error("label: x\nprotocol:\n  builtin: fig9\n") == 3);
  CHECK(line_of_error("label: x\nprotocol:\n  builtin: fig1\nsweep:\n  tau2: [1 ms]\n") == 5);
  CHECK(line_of_error("label: x\nprotocol:\n  builtin: fig1\nsweep:\n  voltage_v: []\n") == 5);
  CHECK(line_of_error("label: x\nprotocol:\n  builtin: fig1\nbin_width: 3 parsecs\n") == 4);
  try {
    parse_config_text("label: x\nprotocol:\n  builtin: fig1\nsweep:\n  voltage_v: []\n");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()) == "line 5: voltage_v: sweep axis must not be empty");
  }
}

TEST_CASE("model overrides and unknown parameters") {
  const auto cfg = parse_config_text("label: x\nmodel:\n  k_ion_hz: 2e5\n  hole_gen.resonant: 0\nprotocol:\n  builtin: fig1\n");
  const auto m = resolve_model(cfg);
  CHECK(m.k_ion_hz == 2e5);
  CHECK(m.hole_gen.resonant == 0.0);
  CHECK_THROWS_AS(parse_config_text("label: x\nmodel:\n  k_nope: 1\nprotocol:\n  builtin: fig1\n"), ConfigError);
}

TEST_CASE("sweep points enumerate axes with the last varying fastest") {
  const auto cfg = load_config(fs::path(SIVSIM_CONFIG_DIR) / "fig3_recovery.cfg");
  const auto pts = sweep_points(cfg);
  REQUIRE(pts.size() == 2 * 3 * 4);
  CHECK(pts[0].near_resonant == true);
  CHECK(pts[0].voltage_v == 0.0);
  CHECK(pts[0].tau2 == Duration{0});
  CHECK(pts[1].tau2 == Duration{1'000'000});
  CHECK(pts[4].voltage_v == 50.0);
  CHECK(pts[12].near_resonant == false);
  const auto seq = build_sequence(cfg, pts[1]);
  CHECK(seq.find_tag(tags::kDelay) >= 0);
  CHECK(build_sequence(cfg, pts[0]).find_tag(tags::kDelay) < 0);
}

TEST_CASE("explicit segment protocols") {
  const auto cfg = parse_config_text(R"(label: custom
protocol:
  segments:
    - {duration: 1 ms, tag: init, voltage_v: 0, channels: [{color: green, power_uw: 300}]}
    - {duration: 2 ms, tag: gap}
    - {duration: 5 ms, tag: readout, channels: [{color: resonant, power_uw: 13}]}
)");
  CHECK(cfg.protocol.builtin == BuiltinProtocol::None);
  const auto seq = build_sequence(cfg, sweep_points(cfg).at(0));
  CHECK(seq.period() == Duration{8'000'000});
  CHECK(parse_config_text(serialize_config(cfg)) == cfg);
}
