#include "podscale/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "podscale/rng.hpp"

namespace podscale {

Dataset make_gaussian_image_dataset(uint64_t seed, int64_t count, int64_t h,
                                    int64_t w, int64_t channels, int classes,
                                    double noise) {
  Rng rng(seed);
  const int64_t pix = h * w * channels;
  std::vector<Tensor> prototypes;
  prototypes.reserve(static_cast<size_t>(classes));
  for (int k = 0; k < classes; ++k) {
    Tensor p({pix});
    for (float& v : p.data) v = static_cast<float>(rng.normal());
    prototypes.push_back(std::move(p));
  }
  Dataset ds;
  ds.inputs = Tensor({count, h, w, channels});
  ds.labels.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const int k = static_cast<int>(i % classes);
    ds.labels[static_cast<size_t>(i)] = k;
    for (int64_t e = 0; e < pix; ++e) {
      ds.inputs[i * pix + e] = prototypes[static_cast<size_t>(k)][e] +
                               static_cast<float>(rng.normal() * noise);
    }
  }
  return ds;
}

Dataset make_token_sequence_dataset(uint64_t seed, int64_t count,
                                    int64_t seq_len, int vocab, int classes,
                                    double noise) {
  Rng rng(seed);
  const int band = vocab / classes;
  if (band < 1) throw std::invalid_argument("vocab must be >= classes");
  Dataset ds;
  ds.inputs = Tensor({count, seq_len});
  ds.labels.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const int k = static_cast<int>(i % classes);
    ds.labels[static_cast<size_t>(i)] = k;
    for (int64_t t = 0; t < seq_len; ++t) {
      int tok;
      if (rng.uniform() < noise) {
        tok = static_cast<int>(rng.uniform_int(0, vocab - 1));
      } else {
        tok = k * band + static_cast<int>(rng.uniform_int(0, band - 1));
      }
      ds.inputs[i * seq_len + t] = static_cast<float>(tok);
    }
  }
  return ds;
}

EvalDataset pad_eval_dataset(const Dataset& ds, int cores, int per_core_batch) {
  if (cores < 1 || per_core_batch < 1) {
    throw std::invalid_argument("cores and per_core_batch must be >= 1");
  }
  if (ds.size() == 0) throw std::invalid_argument("empty eval dataset");
  const int64_t chunk = static_cast<int64_t>(cores) * per_core_batch;
  const int64_t real = ds.size();
  const int64_t padded = (real + chunk - 1) / chunk * chunk;

  EvalDataset out;
  std::vector<int64_t> shape = ds.inputs.shape;
  shape[0] = padded;
  out.inputs = Tensor(shape, ds.inputs.dtype);
  std::copy(ds.inputs.data.begin(), ds.inputs.data.end(),
            out.inputs.data.begin());
  out.labels.assign(static_cast<size_t>(padded), 0);
  std::copy(ds.labels.begin(), ds.labels.end(), out.labels.begin());
  out.mask.assign(static_cast<size_t>(padded), 0);
  std::fill(out.mask.begin(), out.mask.begin() + real, uint8_t{1});
  out.real_count = real;
  out.padded_count = padded;
  return out;
}

Top1Count masked_top1(const Tensor& logits, const std::vector<int>& labels,
                      const std::vector<uint8_t>& mask, int64_t offset) {
  if (logits.shape.size() != 2) throw std::invalid_argument("logits must be [B,C]");
  const int64_t B = logits.shape[0], C = logits.shape[1];
  if (C == 0) throw std::invalid_argument("zero classes");
  Top1Count count;
  for (int64_t b = 0; b < B; ++b) {
    if (!mask[static_cast<size_t>(offset + b)]) continue;
    int64_t best = 0;
    for (int64_t c = 1; c < C; ++c) {
      if (logits[b * C + c] > logits[b * C + best]) best = c;  // ties -> lowest
    }
    count.real += 1;
    if (best == labels[static_cast<size_t>(offset + b)]) count.correct += 1;
  }
  return count;
}

namespace {

Tensor gather_rows(const Tensor& inputs, const std::vector<int64_t>& idx,
                   int64_t from, int64_t to) {
  std::vector<int64_t> shape = inputs.shape;
  shape[0] = to - from;
  const int64_t row = shape_product(shape) / std::max<int64_t>(1, to - from);
  Tensor out(shape, inputs.dtype);
  for (int64_t i = from; i < to; ++i) {
    const int64_t src = idx[static_cast<size_t>(i)];
    std::copy(inputs.data.begin() + src * row, inputs.data.begin() + (src + 1) * row,
              out.data.begin() + (i - from) * row);
  }
  return out;
}

Tensor slice_rows(const Tensor& inputs, int64_t from, int64_t to) {
  std::vector<int64_t> shape = inputs.shape;
  shape[0] = to - from;
  const int64_t row = shape_product(inputs.shape) / inputs.shape[0];
  Tensor out(shape, inputs.dtype);
  std::copy(inputs.data.begin() + from * row, inputs.data.begin() + to * row,
            out.data.begin());
  return out;
}

double evaluate(const Model& model, const EvalDataset& eval_ds, int64_t chunk) {
  int64_t correct = 0, real = 0;
  for (int64_t start = 0; start < eval_ds.padded_count; start += chunk) {
    const int64_t end = std::min(start + chunk, eval_ds.padded_count);
    Tensor logits = model.logits(slice_rows(eval_ds.inputs, start, end));
    Top1Count c = masked_top1(logits, eval_ds.labels, eval_ds.mask, start);
    correct += c.correct;
    real += c.real;
  }
  return real > 0 ? static_cast<double>(correct) / static_cast<double>(real) : 0.0;
}

}  // namespace

std::vector<MetricsRecord> run_train_and_eval(Model& model,
                                              const Dataset& train,
                                              const EvalDataset& eval_ds,
                                              const OptimizerConfig& opt,
                                              const TrainLoopOptions& options,
                                              const TorusTopology& topo) {
  if (options.eval_every_epochs < 1) {
    throw std::invalid_argument("eval_every_epochs must be >= 1");
  }
  const int P = topo.num_cores();
  const int64_t global_batch = static_cast<int64_t>(P) * options.per_core_batch;
  const int64_t steps_per_epoch = train.size() / global_batch;
  if (steps_per_epoch < 1) {
    throw std::invalid_argument("dataset smaller than one global batch");
  }

  OptimizerState state = OptimizerState::init_for(model.weights());
  WeightShardLayout layout = build_weight_shard_layout(model.weights(), P);

  std::vector<MetricsRecord> records;
  std::vector<int64_t> order(static_cast<size_t>(train.size()));
  std::iota(order.begin(), order.end(), int64_t{0});

  int64_t wall_steps = 0;
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    // Per-epoch shuffle, pinned by (seed, epoch).
    Rng shuffle_rng(options.shuffle_seed * 1000003ull + static_cast<uint64_t>(epoch));
    for (int64_t i = train.size() - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(shuffle_rng.uniform_int(0, i))]);
    }

    double epoch_loss = 0.0;
    for (int64_t step = 0; step < steps_per_epoch; ++step) {
      const double epoch_f = (epoch - 1) + static_cast<double>(step) /
                                               static_cast<double>(steps_per_epoch);
      double lr = 0.0;
      if (opt.kind != OptimizerKind::Adam) {
        lr = lr_schedule(std::min(epoch_f, opt.lars.total_epochs), opt.lars);
      }

      // Per-core sum gradients over local batches.
      std::vector<GradientSet> per_core;
      per_core.reserve(static_cast<size_t>(P));
      double loss_sum = 0.0;
      const int64_t base = step * global_batch;
      for (int core = 0; core < P; ++core) {
        const int64_t from = base + core * options.per_core_batch;
        const int64_t to = from + options.per_core_batch;
        Tensor batch = gather_rows(train.inputs, order, from, to);
        std::vector<int> batch_labels(static_cast<size_t>(options.per_core_batch));
        for (int64_t i = from; i < to; ++i) {
          batch_labels[static_cast<size_t>(i - from)] =
              train.labels[static_cast<size_t>(order[static_cast<size_t>(i)])];
        }
        GradientSet g = model.zero_grads();
        loss_sum += model.loss_and_grad(batch, batch_labels, 0, g);
        per_core.push_back(std::move(g));
      }

      std::vector<GradientSet> reduced = all_reduce_2d(per_core, topo);
      GradientSet& grads = reduced[0];
      const float inv_g = 1.0f / static_cast<float>(global_batch);
      for (auto& nt : grads.tensors) {
        for (float& v : nt.tensor.data) v *= inv_g;
      }

      const double step_loss = loss_sum / static_cast<double>(global_batch);
      if (!std::isfinite(step_loss)) throw DivergenceError(wall_steps);
      epoch_loss += step_loss;
      if (options.step_losses) options.step_losses->push_back(step_loss);

      sharded_weight_update(model.weights(), grads, state, layout, opt, lr);
      wall_steps += 1;
    }
    epoch_loss /= static_cast<double>(steps_per_epoch);

    const bool final_epoch = epoch == options.max_epochs;
    if (epoch % options.eval_every_epochs == 0 || final_epoch) {
      const int64_t chunk = static_cast<int64_t>(P) * options.per_core_batch;
      MetricsRecord rec;
      rec.epoch = epoch;
      rec.train_loss = epoch_loss;
      rec.eval_metric = evaluate(model, eval_ds, chunk);
      rec.wall_steps = wall_steps;
      records.push_back(rec);
      if (rec.eval_metric >= options.target_metric) break;
    }
  }
  return records;
}

}  // namespace podscale
