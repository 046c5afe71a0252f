#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "podscale/optimizers.hpp"
#include "podscale/torus.hpp"

namespace podscale {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind {
  Train,
  ShardEquiv,
  CollectiveSweep,
  OptimizerCompare,
  PipelineStudy
};

struct TrainSection {
  std::string model = "cnn";  // cnn | lstm
  int64_t dataset_size = 1024;
  int64_t eval_size = 256;
  int classes = 4;
  double noise = 0.5;
  int max_epochs = 16;
  int eval_every_epochs = 4;
  double target_metric = 2.0;  // > 1 disables early stop
};

struct SweepSection {
  std::vector<int64_t> bytes;
  std::vector<int> chunks;
  LinkCostParams cost = default_link_cost_params();
};

struct CompareSection {
  std::vector<std::string> presets;
  int seeds = 1;
  std::vector<int64_t> batch_sizes;  // optional batch-vs-epochs sweep
};

struct PipelineSection {
  int corpus_size = 512;
  int max_length = 96;
  int window_width = 8;
  int batch_size = 16;
  int hosts = 2;
  int seeds = 100;
};

struct ShardEquivSection {
  std::vector<int> kernel_sizes = {1, 3, 5, 7};
  std::vector<std::pair<int, int>> grids = {{1, 1}, {2, 1}, {1, 2}, {2, 2}};
  int cases = 20;
  std::vector<int> shard_counts = {1, 2, 4, 8};
  int steps = 100;
};

struct ExperimentConfig {
  int version = 1;
  ExperimentKind kind = ExperimentKind::Train;
  uint64_t seed = 0;
  TorusTopology topology{1, 1};
  int64_t global_batch = 0;
  int per_core_batch = 0;
  std::optional<OptimizerConfig> optimizer;
  std::string optimizer_preset;  // empty when explicit config given
  std::string output;            // default report directory

  TrainSection train;
  SweepSection sweep;
  CompareSection compare;
  PipelineSection pipeline;
  ShardEquivSection shard_equiv;

  std::string normalized_json;  // canonical serialized form
};

// Strict parser: required "version", unknown fields rejected at every level,
// field-level messages. Throws ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Canonical JSON; parse(serialize(cfg)) is semantically idempotent.
std::string serialize_experiment_config(const ExperimentConfig& cfg);

struct RunOptions {
  std::string out_dir;  // overrides cfg.output when non-empty
  int jobs = 1;
  std::optional<uint64_t> seed_override;
};

// Exit codes: 0 success, 2 config error, 3 invariant violation, 4 divergence.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInvariant = 3;
constexpr int kExitDivergence = 4;

int run_experiment(const ExperimentConfig& cfg, const RunOptions& options);
int run_experiment_file(const std::string& config_path,
                        const RunOptions& options);

struct BatchEpochPoint {
  int64_t batch = 0;
  double epochs_to_target = 0;  // NaN when target not reached
};

// CSV (batch,epochs_to_target,monotone_flag); non-monotone rows are flagged,
// not fatal. Throws InvariantError on empty input.
std::string report_batch_epoch_curve(const std::vector<BatchEpochPoint>& results);

}  // namespace podscale
