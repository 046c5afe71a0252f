#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "podscale/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"podscale experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int jobs = 1;
  std::optional<uint64_t> seed_override;

  CLI::App* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("config", config_path, "path to the experiment config")->required();
  run->add_option("--out", out_dir, "report directory (overrides config output)");
  run->add_option("--jobs", jobs, "worker threads for independent sub-runs")
      ->check(CLI::PositiveNumber);
  run->add_option("--seed-override", seed_override, "replace the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : podscale::kExitConfig;
  }

  podscale::RunOptions options;
  options.out_dir = out_dir;
  options.jobs = jobs;
  options.seed_override = seed_override;

  try {
    return podscale::run_experiment_file(config_path, options);
  } catch (const podscale::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return podscale::kExitConfig;
  } catch (const podscale::InvariantError& e) {
    std::fprintf(stderr, "invariant violation: %s\n", e.what());
    return podscale::kExitInvariant;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return podscale::kExitInvariant;
  }
}
