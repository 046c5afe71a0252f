#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "podscale/experiment.hpp"

using namespace podscale;

namespace {

const char* kMinimalTrain = R"({
  "version": 1,
  "kind": "train",
  "seed": 7,
  "topology": {"rows": 1, "cols": 2},
  "batch": {"per_core": 4},
  "optimizer": {"preset": "scaled-31.2"},
  "train": {"dataset_size": 32, "eval_size": 8, "max_epochs": 2}
})";

}  // namespace

TEST_CASE("a minimal train config parses with derived batch sizes") {
  ExperimentConfig cfg = parse_experiment_config(kMinimalTrain);
  CHECK(cfg.kind == ExperimentKind::Train);
  CHECK(cfg.seed == 7);
  CHECK(cfg.topology.rows == 1);
  CHECK(cfg.topology.cols == 2);
  CHECK(cfg.per_core_batch == 4);
  CHECK(cfg.global_batch == 8);
  REQUIRE(cfg.optimizer.has_value());
  CHECK(cfg.optimizer->kind == OptimizerKind::LarsScaled);
  CHECK(cfg.train.dataset_size == 32);
  CHECK(cfg.train.eval_every_epochs == 4);  // default cadence
}

TEST_CASE("serialization round-trips to the same normalized form") {
  ExperimentConfig cfg = parse_experiment_config(kMinimalTrain);
  ExperimentConfig back = parse_experiment_config(cfg.normalized_json);
  CHECK(back.normalized_json == cfg.normalized_json);
}

TEST_CASE("the version field is required and checked") {
  CHECK_THROWS_WITH_AS(parse_experiment_config(R"({"kind": "train", "seed": 1})"),
                       doctest::Contains("version"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"version": 2, "kind": "pipeline_study", "seed": 1})"),
                  ConfigError);
}

TEST_CASE("unknown fields are rejected with the offending name") {
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(
          R"({"version": 1, "kind": "pipeline_study", "seed": 1, "bogus": 3})"),
      doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(
          R"({"version": 1, "kind": "pipeline_study", "seed": 1,
              "pipeline": {"hosts": 2, "surprise": true}})"),
      doctest::Contains("surprise"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(
          R"({"version": 1, "kind": "train", "seed": 1,
              "topology": {"rows": 1, "cols": 1, "depth": 4}})"),
      doctest::Contains("depth"), ConfigError);
}

TEST_CASE("malformed json and wrong types are config errors") {
  CHECK_THROWS_AS(parse_experiment_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[1,2]"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(
          R"({"version": 1, "kind": "pipeline_study", "seed": "high"})"),
      doctest::Contains("seed"), ConfigError);
}

TEST_CASE("inconsistent batch settings are rejected") {
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(
          R"({"version": 1, "kind": "train", "seed": 1,
              "topology": {"rows": 2, "cols": 2},
              "batch": {"global": 10},
              "optimizer": {"preset": "scaled-31.2"}})"),
      doctest::Contains("divisible"), ConfigError);
  CHECK_THROWS_AS(
      parse_experiment_config(
          R"({"version": 1, "kind": "train", "seed": 1,
              "topology": {"rows": 2, "cols": 2},
              "batch": {"global": 16, "per_core": 8},
              "optimizer": {"preset": "scaled-31.2"}})"),
      ConfigError);
}

TEST_CASE("unknown kinds and presets are rejected") {
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(R"({"version": 1, "kind": "dance", "seed": 1})"),
      doctest::Contains("dance"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(
          R"({"version": 1, "kind": "train", "seed": 1,
              "batch": {"per_core": 1},
              "optimizer": {"preset": "mystery"}})"),
      doctest::Contains("mystery"), ConfigError);
}

TEST_CASE("explicit optimizer settings parse and validate") {
  ExperimentConfig cfg = parse_experiment_config(R"({
    "version": 1, "kind": "train", "seed": 1,
    "batch": {"per_core": 2},
    "optimizer": {"kind": "lars_unscaled", "base_lr": 5.0,
                  "warmup_epochs": 2, "total_epochs": 10, "momentum": 0.5}
  })");
  REQUIRE(cfg.optimizer.has_value());
  CHECK(cfg.optimizer->kind == OptimizerKind::LarsUnscaled);
  CHECK(cfg.optimizer->lars.base_lr == doctest::Approx(5.0));
  CHECK(cfg.optimizer->lars.momentum == doctest::Approx(0.5));

  CHECK_THROWS_AS(parse_experiment_config(R"({
    "version": 1, "kind": "train", "seed": 1,
    "batch": {"per_core": 2},
    "optimizer": {"kind": "lars_scaled", "momentum": 1.5}
  })"),
                  ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({
    "version": 1, "kind": "train", "seed": 1,
    "batch": {"per_core": 2},
    "optimizer": {"kind": "lars_scaled", "warmup_epochs": 9, "total_epochs": 3}
  })"),
                  ConfigError);
}

TEST_CASE("kind-specific requirements are enforced") {
  // Train without an optimizer.
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"version": 1, "kind": "train", "seed": 1,
                          "batch": {"per_core": 2}})"),
                  ConfigError);
  // Sweep without byte counts.
  CHECK_THROWS_AS(parse_experiment_config(
                      R"({"version": 1, "kind": "collective_sweep", "seed": 1})"),
                  ConfigError);
}

TEST_CASE("collective sweep runs deterministically and writes the report") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "podscale_test_sweep";
  fs::remove_all(dir);
  ExperimentConfig cfg = parse_experiment_config(R"({
    "version": 1, "kind": "collective_sweep", "seed": 1,
    "topology": {"rows": 4, "cols": 4},
    "sweep": {"bytes": [1000000, 100000000], "chunks": [4, 16]}
  })");
  RunOptions options;
  options.out_dir = dir.string();
  CHECK(run_experiment(cfg, options) == kExitOk);
  CHECK(fs::exists(dir / "sweep.csv"));
  CHECK(fs::exists(dir / "speedup.csv"));
  CHECK(fs::exists(dir / "config.json"));

  std::ifstream in(dir / "sweep.csv");
  std::string first;
  std::getline(in, first);
  CHECK(first == "scenario,bytes,chunks,pipelined,seconds");
  fs::remove_all(dir);
}

TEST_CASE("the batch/epoch curve report flags non-monotone rows") {
  std::vector<BatchEpochPoint> pts = {{64, 4.0}, {256, 6.0}, {1024, 5.0}};
  const std::string csv = report_batch_epoch_curve(pts);
  CHECK(csv.find("64,4,1") != std::string::npos);
  CHECK(csv.find("256,6,1") != std::string::npos);
  CHECK(csv.find("1024,5,0") != std::string::npos);
  CHECK_THROWS_AS(report_batch_epoch_curve({}), InvariantError);
}
