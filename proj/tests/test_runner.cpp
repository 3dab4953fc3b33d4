#include <catch_amalgamated.hpp>

#include <filesystem>

#include "sivsim/runner.hpp"

using namespace sivsim;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sivsim_test_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig small() { return load_config(fs::path(SIVSIM_TEST_DATA_DIR) / "small.cfg"); }

}  // namespace

TEST_CASE("a sweep writes every artifact and a manifest") {
  const auto out = scratch("run");
  const auto rep = run_experiment(small(), out, RunOptions{.workers = 1});
  CHECK(rep.failed_runs == 0);
  for (const char* f : {"summary.csv", "summary.json", "histograms_long.csv", "manifest.json", "runs/r000/histogram.csv",
                        "runs/r000/histogram.json", "runs/r001/fit.json"}) {
    INFO(f);
    CHECK(fs::exists(out / f));
  }
  const auto& m = rep.manifest;
  CHECK(m.at("tool") == "sivsim");
  CHECK(m.at("seed") == 77);
  CHECK(m.at("runs").size() == 2);
  CHECK(m.at("runs")[0].at("seed") == derive_seed(77, StreamDomain::Run, 0));
  for (const auto& [file, hash] : m.at("outputs").items()) {
    CHECK(hash.get<std::string>() == hex64(fnv1a64(read_file(out / file))));
  }
  const auto csv = read_file(out / "summary.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  // The CSV round-trips into the same histogram.
  const auto sidecar = Json::parse(read_file(out / "runs/r000/histogram.json"));
  const auto h = parse_histogram_csv(read_file(out / "runs/r000/histogram.csv"), sidecar.at("period_ns"),
                                     sidecar.at("bin_width_ns"), sidecar.at("repetitions"));
  CHECK(h.total() == sidecar.at("total_counts").get<std::uint64_t>());
  CHECK(histogram_csv(h) == read_file(out / "runs/r000/histogram.csv"));
}

TEST_CASE("outputs do not depend on the worker count") {
  const auto a = scratch("w1");
  const auto b = scratch("w4");
  const auto ra = run_experiment(small(), a, RunOptions{.workers = 1});
  const auto rb = run_experiment(small(), b, RunOptions{.workers = 4});
  CHECK(ra.manifest == rb.manifest);
}

TEST_CASE("replay reproduces a run and detects tampering") {
  const auto out = scratch("orig");
  run_experiment(small(), out, RunOptions{.workers = 2});
  const auto same = replay(out / "manifest.json", scratch("replay"), 3);
  CHECK(same.identical());

  auto m = Json::parse(read_file(out / "manifest.json"));
  m["seed"] = 78;
  const auto tampered = scratch("tampered");
  write_file(tampered / "manifest.json", m.dump(2));
  const auto diff = replay(tampered / "manifest.json", scratch("tampered_out"), 1);
  CHECK_FALSE(diff.identical());

  m = Json::parse(read_file(out / "manifest.json"));
  m["version"] = "0.0.1";
  write_file(tampered / "manifest.json", m.dump(2));
  CHECK_THROWS_AS(replay(tampered / "manifest.json", scratch("tampered_out"), 1), ReplayError);

  m = Json::parse(read_file(out / "manifest.json"));
  m["config"] = m["config"].get<std::string>() + "\n";
  write_file(tampered / "manifest.json", m.dump(2));
  const auto hashed = replay(tampered / "manifest.json", scratch("tampered_out"), 1);
  CHECK_FALSE(hashed.identical());
}

TEST_CASE("a missing seed is a config error") {
  auto cfg = small();
  cfg.seed.reset();
  CHECK_THROWS_AS(run_experiment(cfg, scratch("noseed")), ConfigError);
  CHECK_NOTHROW(run_experiment(cfg, scratch("seeded"), RunOptions{.workers = 1, .seed_override = 5}));
}

TEST_CASE("ple detunings are symmetric and span the broadened line") {
  const ChargeModelParams p;
  PleScan scan;
  const auto d = ple_detunings(p, 60.0, scan);
  REQUIRE(d.size() == 41);
  CHECK(d.front() == Catch::Approx(-d.back()));
  CHECK(d.back() == Catch::Approx(3.0 * p.gamma0_mhz * std::sqrt(2.0)));
  CHECK(d[20] == Catch::Approx(0.0).margin(1e-9));
}
