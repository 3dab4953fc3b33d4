// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <CLI11.hpp>

#include <iostream>

#include "sivsim/acceptance.hpp"

int main(int argc, char** argv) {
  CLI::App app{"sivsim acceptance criteria A1-A9"};
  sivsim::acceptance::Options opt;
  opt.configs_dir = SIVSIM_CONFIG_DIR;
  std::vector<std::string> only;
  app.add_option("--configs-dir", opt.configs_dir, "Directory with the shipped configs");
  app.add_option("--scratch", opt.scratch_dir, "Scratch directory for replay artifacts");
  app.add_option("--workers", opt.workers, "Worker threads (0 = all cores)");
  app.add_option("--seed", opt.seed, "Master seed");
  app.add_option("--only", only, "Run only these criteria (e.g. A3 A5)");
  CLI11_PARSE(app, argc, argv);

  const auto results = sivsim::acceptance::run_all(opt, [](const auto& r) {
    std::cout << sivsim::acceptance::format_line(r) << std::endl;
  }, only);
  std::size_t failed = 0;
  for (const auto& r : results) failed += !r.passed;
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}
