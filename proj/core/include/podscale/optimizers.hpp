#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "podscale/torus.hpp"

namespace podscale {

struct LarsConfig {
  double epsilon = 0.001;     // LARS trust coefficient
  double weight_decay = 0.0;  // beta in the update equations
  double momentum = 0.9;
  double base_lr = 1.0;       // peak scheduled rate
  double warmup_epochs = 0.0;
  double total_epochs = 1.0;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Linear warmup from 0 to base_lr over warmup_epochs, then polynomial
// (power 2) decay to 0 at total_epochs.
double lr_schedule(double epoch, const LarsConfig& cfg);

// Layer-wise trust ratio: epsilon * ||w|| / (||g|| + beta * ||w||),
// 0 when either norm term degenerates. Norms are per-tensor L2.
double lars_trust_ratio(const Tensor& w, const Tensor& g, const LarsConfig& cfg);

// Scaled-momentum variant: v = m*v + (g + beta*w); w -= lr*lambda * v.
void lars_scaled_step(Tensor& w, const Tensor& g, Tensor& velocity,
                      const LarsConfig& cfg, double lr);

// Unscaled-momentum variant: v = m*v + lr*lambda*(g + beta*w); w -= v.
void lars_unscaled_step(Tensor& w, const Tensor& g, Tensor& velocity,
                        const LarsConfig& cfg, double lr);

// Bias-corrected Adam; t is the 1-based step count after this update.
void adam_step(Tensor& w, const Tensor& g, Tensor& m1, Tensor& m2, int64_t t,
               const AdamConfig& cfg);

enum class OptimizerKind { LarsScaled, LarsUnscaled, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::LarsScaled;
  LarsConfig lars;
  AdamConfig adam;
};

// Per-weight-tensor slots: velocity for LARS, first/second moments for Adam.
struct OptimizerState {
  int64_t step = 0;
  std::vector<Tensor> velocity;
  std::vector<Tensor> m1, m2;

  static OptimizerState init_for(const std::vector<NamedTensor>& weights);
};

// One optimizer step over a whole weight list; lr is the scheduled rate
// (ignored by Adam, which carries its own).
void apply_step(std::vector<NamedTensor>& weights, const GradientSet& grads,
                OptimizerState& state, const OptimizerConfig& cfg, double lr);

// Tensor-granularity sharding: whole tensors assigned to cores greedily by
// size so per-tensor LARS norms need no extra communication. The flattening
// order groups each core's tensors contiguously.
struct WeightShardLayout {
  int num_shards = 1;
  std::vector<int> tensor_to_shard;    // weight index -> shard
  std::vector<int> flatten_order;      // weight indices grouped by shard
  std::vector<std::pair<int64_t, int64_t>> shard_ranges;  // flat elem ranges
};

WeightShardLayout build_weight_shard_layout(
    const std::vector<NamedTensor>& weights, int num_shards);

// Each core applies the optimizer to its tensor shard only; ring_all_gather
// reassembles the flat parameter vector. Bitwise identical to a replicated
// apply_step.
void sharded_weight_update(std::vector<NamedTensor>& weights,
                           const GradientSet& grads, OptimizerState& state,
                           const WeightShardLayout& layout,
                           const OptimizerConfig& cfg, double lr);

// Named hyperparameter presets for the ResNet-scale LARS runs.
struct OptimizerPreset {
  std::string name;
  OptimizerConfig config;
};

const std::vector<OptimizerPreset>& optimizer_presets();
std::optional<OptimizerConfig> find_preset(const std::string& name);

}  // namespace podscale
