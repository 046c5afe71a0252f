#include "podscale/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace podscale {

namespace {

void check_finite(const Tensor& t, const char* what) {
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string("non-finite ") + what);
    }
  }
}

void check_shapes(const Tensor& w, const Tensor& g, const Tensor& slot) {
  if (g.shape != w.shape || slot.shape != w.shape) {
    throw std::invalid_argument("optimizer shape mismatch");
  }
}

double l2_norm(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

}  // namespace

double lr_schedule(double epoch, const LarsConfig& cfg) {
  if (epoch < 0.0 || epoch > cfg.total_epochs) {
    throw std::invalid_argument("epoch outside [0, total_epochs]");
  }
  if (cfg.warmup_epochs > 0.0 && epoch < cfg.warmup_epochs) {
    return cfg.base_lr * epoch / cfg.warmup_epochs;
  }
  const double span = cfg.total_epochs - cfg.warmup_epochs;
  if (span <= 0.0) return cfg.base_lr;
  const double frac = (cfg.total_epochs - epoch) / span;
  return cfg.base_lr * frac * frac;
}

double lars_trust_ratio(const Tensor& w, const Tensor& g,
                        const LarsConfig& cfg) {
  const double wn = l2_norm(w);
  const double gn = l2_norm(g);
  const double denom = gn + cfg.weight_decay * wn;
  if (wn == 0.0 || denom == 0.0) return 0.0;
  return cfg.epsilon * wn / denom;
}

void lars_scaled_step(Tensor& w, const Tensor& g, Tensor& velocity,
                      const LarsConfig& cfg, double lr) {
  check_shapes(w, g, velocity);
  check_finite(w, "weight");
  check_finite(g, "gradient");
  const double lambda = lars_trust_ratio(w, g, cfg);
  const float lam_eff = static_cast<float>(lr * lambda);
  const float m = static_cast<float>(cfg.momentum);
  const float beta = static_cast<float>(cfg.weight_decay);
  for (int64_t i = 0; i < w.size(); ++i) {
    const float t = g[i] + beta * w[i];
    velocity[i] = m != 0.0f ? m * velocity[i] + t : t;
    if (lambda != 0.0) w[i] = w[i] - lam_eff * velocity[i];
  }
}

void lars_unscaled_step(Tensor& w, const Tensor& g, Tensor& velocity,
                        const LarsConfig& cfg, double lr) {
  check_shapes(w, g, velocity);
  check_finite(w, "weight");
  check_finite(g, "gradient");
  const double lambda = lars_trust_ratio(w, g, cfg);
  const float lam_eff = static_cast<float>(lr * lambda);
  const float m = static_cast<float>(cfg.momentum);
  const float beta = static_cast<float>(cfg.weight_decay);
  for (int64_t i = 0; i < w.size(); ++i) {
    const float t = g[i] + beta * w[i];
    const float scaled = lam_eff * t;
    velocity[i] = m != 0.0f ? m * velocity[i] + scaled : scaled;
    if (lambda != 0.0) w[i] = w[i] - velocity[i];
  }
}

void adam_step(Tensor& w, const Tensor& g, Tensor& m1, Tensor& m2, int64_t t,
               const AdamConfig& cfg) {
  check_shapes(w, g, m1);
  check_shapes(w, g, m2);
  check_finite(w, "weight");
  check_finite(g, "gradient");
  if (t < 1) throw std::invalid_argument("adam step count must be >= 1");
  const float b1 = static_cast<float>(cfg.beta1);
  const float b2 = static_cast<float>(cfg.beta2);
  const float c1 = static_cast<float>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const float c2 = static_cast<float>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const float lr = static_cast<float>(cfg.lr);
  const float eps = static_cast<float>(cfg.epsilon);
  for (int64_t i = 0; i < w.size(); ++i) {
    m1[i] = b1 * m1[i] + (1.0f - b1) * g[i];
    m2[i] = b2 * m2[i] + (1.0f - b2) * g[i] * g[i];
    const float mhat = m1[i] / c1;
    const float vhat = m2[i] / c2;
    w[i] = w[i] - lr * mhat / (std::sqrt(vhat) + eps);
  }
}

OptimizerState OptimizerState::init_for(const std::vector<NamedTensor>& weights) {
  OptimizerState s;
  for (const auto& nt : weights) {
    s.velocity.push_back(Tensor(nt.tensor.shape));
    s.m1.push_back(Tensor(nt.tensor.shape));
    s.m2.push_back(Tensor(nt.tensor.shape));
  }
  return s;
}

namespace {

void step_one(Tensor& w, const Tensor& g, OptimizerState& state, size_t idx,
              const OptimizerConfig& cfg, double lr) {
  switch (cfg.kind) {
    case OptimizerKind::LarsScaled:
      lars_scaled_step(w, g, state.velocity[idx], cfg.lars, lr);
      break;
    case OptimizerKind::LarsUnscaled:
      lars_unscaled_step(w, g, state.velocity[idx], cfg.lars, lr);
      break;
    case OptimizerKind::Adam:
      adam_step(w, g, state.m1[idx], state.m2[idx], state.step, cfg.adam);
      break;
  }
}

void check_grad_alignment(const std::vector<NamedTensor>& weights,
                          const GradientSet& grads) {
  if (grads.tensors.size() != weights.size()) {
    throw std::invalid_argument("gradient/weight tensor count mismatch");
  }
  for (size_t i = 0; i < weights.size(); ++i) {
    if (grads.tensors[i].name != weights[i].name) {
      throw std::invalid_argument("gradient order mismatch at " +
                                  weights[i].name);
    }
  }
}

}  // namespace

void apply_step(std::vector<NamedTensor>& weights, const GradientSet& grads,
                OptimizerState& state, const OptimizerConfig& cfg, double lr) {
  check_grad_alignment(weights, grads);
  state.step += 1;
  for (size_t i = 0; i < weights.size(); ++i) {
    step_one(weights[i].tensor, grads.tensors[i].tensor, state, i, cfg, lr);
  }
}

WeightShardLayout build_weight_shard_layout(
    const std::vector<NamedTensor>& weights, int num_shards) {
  if (num_shards < 1) throw std::invalid_argument("num_shards must be >= 1");
  WeightShardLayout layout;
  layout.num_shards = num_shards;
  layout.tensor_to_shard.assign(weights.size(), 0);

  // Greedy size-balanced assignment: largest tensors first, ties by index,
  // each placed on the currently lightest shard (lowest id on ties).
  std::vector<size_t> order(weights.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return weights[a].tensor.size() > weights[b].tensor.size();
  });
  std::vector<int64_t> load(static_cast<size_t>(num_shards), 0);
  for (size_t idx : order) {
    int best = 0;
    for (int s = 1; s < num_shards; ++s) {
      if (load[static_cast<size_t>(s)] < load[static_cast<size_t>(best)]) best = s;
    }
    layout.tensor_to_shard[idx] = best;
    load[static_cast<size_t>(best)] += weights[idx].tensor.size();
  }

  int64_t off = 0;
  for (int s = 0; s < num_shards; ++s) {
    const int64_t start = off;
    for (size_t i = 0; i < weights.size(); ++i) {
      if (layout.tensor_to_shard[i] == s) {
        layout.flatten_order.push_back(static_cast<int>(i));
        off += weights[i].tensor.size();
      }
    }
    layout.shard_ranges.emplace_back(start, off);
  }
  return layout;
}

void sharded_weight_update(std::vector<NamedTensor>& weights,
                           const GradientSet& grads, OptimizerState& state,
                           const WeightShardLayout& layout,
                           const OptimizerConfig& cfg, double lr) {
  check_grad_alignment(weights, grads);
  if (layout.tensor_to_shard.size() != weights.size()) {
    throw std::invalid_argument("layout does not match weight list");
  }
  state.step += 1;

  // Each shard owner updates only its tensors.
  for (size_t i = 0; i < weights.size(); ++i) {
    step_one(weights[i].tensor, grads.tensors[i].tensor, state, i, cfg, lr);
  }

  // All-gather of the flat parameter vector in layout order; every core ends
  // with identical bytes, which we scatter back into the named tensors.
  std::vector<Tensor> shards;
  shards.reserve(static_cast<size_t>(layout.num_shards));
  for (int s = 0; s < layout.num_shards; ++s) {
    auto [lo, hi] = layout.shard_ranges[static_cast<size_t>(s)];
    Tensor flat({hi - lo});
    int64_t off = 0;
    for (int idx : layout.flatten_order) {
      if (layout.tensor_to_shard[static_cast<size_t>(idx)] != s) continue;
      const Tensor& t = weights[static_cast<size_t>(idx)].tensor;
      std::copy(t.data.begin(), t.data.end(), flat.data.begin() + off);
      off += t.size();
    }
    shards.push_back(std::move(flat));
  }
  std::vector<Tensor> gathered = ring_all_gather(shards);

  const Tensor& full = gathered[0];
  int64_t off = 0;
  for (int idx : layout.flatten_order) {
    Tensor& t = weights[static_cast<size_t>(idx)].tensor;
    std::copy(full.data.begin() + off, full.data.begin() + off + t.size(),
              t.data.begin());
    off += t.size();
  }
}

const std::vector<OptimizerPreset>& optimizer_presets() {
  static const std::vector<OptimizerPreset> presets = [] {
    auto lars = [](OptimizerKind kind, double base_lr, double warmup,
                   double momentum, double total) {
      OptimizerConfig c;
      c.kind = kind;
      c.lars.epsilon = 0.001;
      c.lars.weight_decay = 1e-4;
      c.lars.momentum = momentum;
      c.lars.base_lr = base_lr;
      c.lars.warmup_epochs = warmup;
      c.lars.total_epochs = total;
      return c;
    };
    std::vector<OptimizerPreset> v;
    v.push_back({"scaled-31.2",
                 lars(OptimizerKind::LarsScaled, 31.2, 25, 0.9, 73)});
    v.push_back({"unscaled-31.2",
                 lars(OptimizerKind::LarsUnscaled, 31.2, 25, 0.9, 71)});
    v.push_back({"unscaled-29.0-m0.929",
                 lars(OptimizerKind::LarsUnscaled, 29.0, 18, 0.929, 64)});
    return v;
  }();
  return presets;
}

std::optional<OptimizerConfig> find_preset(const std::string& name) {
  for (const auto& p : optimizer_presets()) {
    if (p.name == name) return p.config;
  }
  return std::nullopt;
}

}  // namespace podscale
