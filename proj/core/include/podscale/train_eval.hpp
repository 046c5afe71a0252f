#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "podscale/models.hpp"
#include "podscale/optimizers.hpp"
#include "podscale/torus.hpp"

namespace podscale {

struct Dataset {
  Tensor inputs;  // first extent is the example index
  std::vector<int> labels;

  int64_t size() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
};

// Gaussian-cluster image classification: one random prototype image per
// class plus per-example noise.
Dataset make_gaussian_image_dataset(uint64_t seed, int64_t count, int64_t h,
                                    int64_t w, int64_t channels, int classes,
                                    double noise);

// Token sequences whose class determines the vocabulary band most tokens are
// drawn from.
Dataset make_token_sequence_dataset(uint64_t seed, int64_t count,
                                    int64_t seq_len, int vocab, int classes,
                                    double noise);

struct EvalDataset {
  Tensor inputs;
  std::vector<int> labels;
  std::vector<uint8_t> mask;  // 1 = real example, 0 = zero padding
  int64_t real_count = 0;
  int64_t padded_count = 0;
};

// Pads with all-zero examples to the least multiple of cores*per_core_batch.
EvalDataset pad_eval_dataset(const Dataset& ds, int cores, int per_core_batch);

struct Top1Count {
  int64_t correct = 0;
  int64_t real = 0;
};

// Per-row argmax vs label, ties broken toward the lowest class index; masked
// rows are excluded from both counts.
Top1Count masked_top1(const Tensor& logits, const std::vector<int>& labels,
                      const std::vector<uint8_t>& mask, int64_t offset = 0);

struct MetricsRecord {
  double epoch = 0;
  double train_loss = 0;
  double eval_metric = 0;  // top-1 fraction in [0,1]
  int64_t wall_steps = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int64_t step)
      : std::runtime_error("non-finite loss at step " + std::to_string(step)),
        step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

struct TrainLoopOptions {
  int per_core_batch = 8;
  int eval_every_epochs = 4;
  int max_epochs = 16;
  double target_metric = 2.0;  // > 1 disables early stopping
  uint64_t shuffle_seed = 1;
  std::vector<double>* step_losses = nullptr;  // optional per-step observer
};

// Data-parallel nested train-and-eval loop: per-core sum gradients,
// all_reduce_2d, mean scaling, sharded weight update; evaluation at every
// eval_every_epochs-th epoch and at the final epoch, early stop at target.
std::vector<MetricsRecord> run_train_and_eval(Model& model,
                                              const Dataset& train,
                                              const EvalDataset& eval_ds,
                                              const OptimizerConfig& opt,
                                              const TrainLoopOptions& options,
                                              const TorusTopology& topo);

}  // namespace podscale
