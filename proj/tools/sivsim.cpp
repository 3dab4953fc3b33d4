// sivsim command-line front end.
//
// Exit codes: 0 success, 2 config error, 3 simulation error, 4 verification
// failure (acceptance check, replay divergence or version mismatch).

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sivsim/acceptance.hpp"
#include "sivsim/config.hpp"
#include "sivsim/runner.hpp"

#ifndef SIVSIM_CONFIG_DIR
#define SIVSIM_CONFIG_DIR "configs"
#endif

namespace fs = std::filesystem;
using namespace sivsim;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kSimulationError = 3;
constexpr int kCheckFailed = 4;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned workers = 0;
  std::optional<std::string> profile;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "experiment config file");
  if (config_required) opt->required();
  cmd->add_option("-o,--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("-w,--workers", c.workers, "worker threads (0 = all cores)");
  cmd->add_option("--profile", c.profile, "model profile (overrides the config)");
}

fs::path output_dir(const Common& c, const ExperimentConfig& cfg) {
  if (!c.out.empty()) return c.out;
  if (!cfg.output.empty()) return cfg.output;
  return fs::path("out") / (cfg.label.empty() ? fs::path(c.config).stem().string() : cfg.label);
}

RunOptions run_options(const Common& c) {
  RunOptions o;
  o.workers = c.workers;
  o.seed_override = c.seed;
  o.profile_override = c.profile;
  o.config_dir = fs::path(c.config).parent_path();
  return o;
}

int run_acceptance(unsigned workers, const std::string& configs_dir) {
  acceptance::Options opt;
  opt.workers = workers;
  opt.configs_dir = configs_dir;
  const auto results = acceptance::run_all(opt, [](const acceptance::CriterionResult& r) {
    std::cout << acceptance::format_line(r) << std::endl;
  });
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << (failed == 0 ? "acceptance: all criteria passed" : "acceptance: " + std::to_string(failed) + " failed")
            << std::endl;
  return failed == 0 ? kOk : kCheckFailed;
}

int cmd_run(const Common& c, bool check, const std::string& configs_dir) {
  if (c.config.empty()) {
    if (!check) {
      std::cerr << "run: --config is required (or --check for the acceptance suite)\n";
      return kConfigError;
    }
    return run_acceptance(c.workers, configs_dir);
  }
  const auto cfg = load_config(c.config);
  const auto out = output_dir(c, cfg);
  const auto report = cfg.ple ? run_ple(cfg, out, run_options(c)) : run_experiment(cfg, out, run_options(c));
  std::cout << "wrote " << report.out_dir.string() << " (" << report.manifest.at("outputs").size() << " artifacts)\n";
  if (report.failed_runs > 0) {
    std::cerr << report.failed_runs << " run(s) failed; see manifest.json\n";
    return kSimulationError;
  }
  return check ? run_acceptance(c.workers, configs_dir) : kOk;
}

int cmd_ple(const Common& c) {
  const auto cfg = load_config(c.config);
  const auto out = output_dir(c, cfg);
  const auto report = run_ple(cfg, out, run_options(c));
  for (const auto& f : report.manifest.at("outputs").items()) std::cout << (out / f.key()).string() << '\n';
  std::cout << read_file(out / "ple_fits.csv");
  return report.failed_runs > 0 ? kSimulationError : kOk;
}

int cmd_validate(const Common& c) {
  auto cfg = load_config(c.config);
  if (c.seed) cfg.seed = c.seed;
  if (c.profile) cfg.profile = *c.profile;
  const auto errors = validate_config(cfg, fs::path(c.config).parent_path());
  if (errors.empty()) {
    std::cout << c.config << ": ok (" << sweep_points(cfg).size() << " runs)\n";
    return kOk;
  }
  for (const auto& e : errors) std::cerr << c.config << ": " << e << '\n';
  return kConfigError;
}

int cmd_list_profiles(const std::string& file) {
  auto profiles = builtin_profiles();
  if (!file.empty()) {
    for (auto& [name, p] : load_profiles(file)) profiles[name] = p;
  }
  std::cout << profiles_yaml(profiles);
  return kOk;
}

int cmd_replay(const std::string& manifest, const std::string& out, unsigned workers) {
  const fs::path target = out.empty() ? fs::path(manifest).parent_path() / "replay" : fs::path(out);
  const auto report = replay(manifest, target, workers);
  if (report.identical()) {
    std::cout << "replay identical: " << target.string() << '\n';
    return kOk;
  }
  std::cerr << "replay diverged (" << report.divergences.size() << "):\n";
  for (const auto& d : report.divergences) std::cerr << "  " << d << '\n';
  return kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Charge-state dynamics simulator for silicon-vacancy centers"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Common run_args, ple_args, validate_args;
  bool check = false;
  std::string configs_dir = SIVSIM_CONFIG_DIR;
  auto* run = app.add_subcommand("run", "run a config's sweep and write artifacts");
  add_common(run, run_args, false);
  run->add_flag("--check", check, "run the built-in acceptance suite (exit 4 on failure)");
  run->add_option("--configs-dir", configs_dir, "shipped configs used by the acceptance suite");

  auto* ple = app.add_subcommand("ple", "run a detuning scan and fit the line");
  add_common(ple, ple_args, true);

  auto* val = app.add_subcommand("validate", "check a config without simulating");
  add_common(val, validate_args, true);

  std::string profiles_file;
  auto* list = app.add_subcommand("list-profiles", "print the available model profiles");
  list->add_option("--profiles", profiles_file, "additional profiles file");

  std::string manifest, replay_out;
  unsigned replay_workers = 0;
  auto* rep = app.add_subcommand("replay", "re-run a manifest and verify identical outputs");
  rep->add_option("manifest,--manifest", manifest, "manifest.json of a previous run")->required();
  rep->add_option("-o,--out", replay_out, "output directory (default: <manifest dir>/replay)");
  rep->add_option("-w,--workers", replay_workers, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(run_args, check, configs_dir);
    if (*ple) return cmd_ple(ple_args);
    if (*val) return cmd_validate(validate_args);
    if (*list) return cmd_list_profiles(profiles_file);
    if (*rep) return cmd_replay(manifest, replay_out, replay_workers);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ReplayError& e) {
    std::cerr << "replay: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const InvalidSequence& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "simulation error: " << e.what() << '\n';
    return kSimulationError;
  }
  return kOk;
}
