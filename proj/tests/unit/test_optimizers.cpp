#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "podscale/optimizers.hpp"
#include "podscale/rng.hpp"

using namespace podscale;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(),
                     a.data.size() * sizeof(float)) == 0;
}

std::vector<NamedTensor> random_weights(Rng& rng) {
  std::vector<NamedTensor> w;
  const std::vector<int64_t> sizes = {37, 5, 64, 8, 1, 23, 16, 4, 50, 11};
  for (size_t i = 0; i < sizes.size(); ++i) {
    Tensor t({sizes[i]});
    for (float& v : t.data) v = static_cast<float>(rng.normal());
    w.push_back({"w" + std::to_string(i), t});
  }
  return w;
}

GradientSet random_grads(Rng& rng, const std::vector<NamedTensor>& w) {
  GradientSet g;
  for (const auto& nt : w) {
    Tensor t(nt.tensor.shape);
    for (float& v : t.data) v = static_cast<float>(rng.normal() * 0.1);
    g.tensors.push_back({nt.name, t});
  }
  return g;
}

}  // namespace

TEST_CASE("learning-rate schedule: linear warmup then squared decay") {
  LarsConfig cfg;
  cfg.base_lr = 29.0;
  cfg.warmup_epochs = 18.0;
  cfg.total_epochs = 64.0;
  CHECK(lr_schedule(0.0, cfg) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lr_schedule(9.0, cfg) == doctest::Approx(14.5).epsilon(1e-12));
  CHECK(lr_schedule(18.0, cfg) == doctest::Approx(29.0).epsilon(1e-12));
  CHECK(lr_schedule(41.0, cfg) == doctest::Approx(7.25).epsilon(1e-12));
  CHECK(lr_schedule(64.0, cfg) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("trust ratio and the scaled step on a worked example") {
  LarsConfig cfg;
  cfg.epsilon = 0.01;
  cfg.weight_decay = 0.0;
  cfg.momentum = 0.0;
  Tensor w = Tensor::from_values({2}, {3.0f, 4.0f});
  Tensor g = Tensor::from_values({2}, {3.0f, 4.0f});
  CHECK(lars_trust_ratio(w, g, cfg) == doctest::Approx(0.01).epsilon(1e-12));
  Tensor v({2});
  lars_scaled_step(w, g, v, cfg, 0.1);
  CHECK(w[0] == doctest::Approx(2.997).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(3.996).epsilon(1e-6));
}

TEST_CASE("trust ratio degenerates to zero and leaves the weight unchanged") {
  LarsConfig cfg;
  Tensor w = Tensor::from_values({2}, {0.0f, 0.0f});
  Tensor g = Tensor::from_values({2}, {1.0f, 2.0f});
  CHECK(lars_trust_ratio(w, g, cfg) == 0.0);
  Tensor v({2});
  lars_scaled_step(w, g, v, cfg, 1.0);
  CHECK(w[0] == 0.0f);
  CHECK(w[1] == 0.0f);
  // The velocity is still refreshed.
  CHECK(v[0] == 1.0f);
  CHECK(v[1] == 2.0f);
}

TEST_CASE("scaled and unscaled variants coincide bitwise at zero momentum") {
  Rng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    LarsConfig cfg;
    cfg.epsilon = std::pow(10.0, -1.0 - 3.0 * rng.uniform());
    cfg.weight_decay = rng.uniform() < 0.3 ? 0.0 : 1e-4 * rng.uniform() * 10.0;
    cfg.momentum = 0.0;
    const double lr = 0.01 + 30.0 * rng.uniform();
    const int64_t n = 1 + static_cast<int64_t>(rng.uniform_int(0, 63));
    Tensor w({n}), g({n});
    for (float& x : w.data) x = static_cast<float>(rng.normal() * 2.0);
    for (float& x : g.data) x = static_cast<float>(rng.normal() * 0.3);
    Tensor ws = w, wu = w, vs({n}), vu({n});
    lars_scaled_step(ws, g, vs, cfg, lr);
    lars_unscaled_step(wu, g, vu, cfg, lr);
    CHECK(bitwise_equal(ws, wu));
  }
}

TEST_CASE("with momentum the variants differ after the first step") {
  LarsConfig cfg;
  cfg.momentum = 0.9;
  cfg.epsilon = 0.01;
  Rng rng(73);
  Tensor w({8});
  for (float& x : w.data) x = static_cast<float>(rng.normal());
  Tensor ws = w, wu = w, vs({8}), vu({8});
  for (int step = 0; step < 2; ++step) {
    Tensor g({8});
    for (float& x : g.data) x = static_cast<float>(rng.normal() * 0.1);
    lars_scaled_step(ws, g, vs, cfg, 1.0 + step);
    lars_unscaled_step(wu, g, vu, cfg, 1.0 + step);
  }
  CHECK_FALSE(bitwise_equal(ws, wu));
}

TEST_CASE("lars steps reject non-finite inputs") {
  LarsConfig cfg;
  Tensor w = Tensor::from_values({1}, {1.0f});
  Tensor g = Tensor::from_values({1}, {std::numeric_limits<float>::quiet_NaN()});
  Tensor v({1});
  CHECK_THROWS(lars_scaled_step(w, g, v, cfg, 1.0));
  CHECK_THROWS(lars_unscaled_step(w, g, v, cfg, 1.0));
}

TEST_CASE("adam matches a hand-computed first step") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  Tensor w = Tensor::from_values({1}, {1.0f});
  Tensor g = Tensor::from_values({1}, {0.5f});
  Tensor m1({1}), m2({1});
  adam_step(w, g, m1, m2, 1, cfg);
  // mhat = g, vhat = g^2 after bias correction at t=1.
  const double want = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
  CHECK(w[0] == doctest::Approx(want).epsilon(1e-6));
  CHECK_THROWS_AS(adam_step(w, g, m1, m2, 0, cfg), std::invalid_argument);
}

TEST_CASE("weight shard layout balances whole tensors and covers all elements") {
  Rng rng(79);
  std::vector<NamedTensor> w = random_weights(rng);
  for (int shards : {1, 2, 4, 8}) {
    WeightShardLayout layout = build_weight_shard_layout(w, shards);
    CHECK(layout.num_shards == shards);
    REQUIRE(layout.tensor_to_shard.size() == w.size());
    REQUIRE(layout.flatten_order.size() == w.size());
    REQUIRE(layout.shard_ranges.size() == static_cast<size_t>(shards));
    int64_t total = 0;
    for (const auto& nt : w) total += nt.tensor.size();
    CHECK(layout.shard_ranges.front().first == 0);
    CHECK(layout.shard_ranges.back().second == total);
    for (size_t s = 1; s < layout.shard_ranges.size(); ++s) {
      CHECK(layout.shard_ranges[s].first == layout.shard_ranges[s - 1].second);
    }
    // Deterministic: same input, same layout.
    WeightShardLayout again = build_weight_shard_layout(w, shards);
    CHECK(again.tensor_to_shard == layout.tensor_to_shard);
    CHECK(again.flatten_order == layout.flatten_order);
  }
}

TEST_CASE("sharded weight update is bitwise identical to the replicated step") {
  for (OptimizerKind kind :
       {OptimizerKind::LarsScaled, OptimizerKind::LarsUnscaled, OptimizerKind::Adam}) {
    Rng rng(83);
    std::vector<NamedTensor> w_rep = random_weights(rng);
    std::vector<NamedTensor> w_sh = w_rep;
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lars.momentum = 0.9;
    cfg.lars.weight_decay = 1e-4;
    OptimizerState st_rep = OptimizerState::init_for(w_rep);
    OptimizerState st_sh = OptimizerState::init_for(w_sh);
    WeightShardLayout layout = build_weight_shard_layout(w_sh, 4);
    for (int step = 0; step < 10; ++step) {
      GradientSet g = random_grads(rng, w_rep);
      apply_step(w_rep, g, st_rep, cfg, 0.5);
      sharded_weight_update(w_sh, g, st_sh, layout, cfg, 0.5);
      for (size_t t = 0; t < w_rep.size(); ++t) {
        CHECK(bitwise_equal(w_rep[t].tensor, w_sh[t].tensor));
      }
    }
  }
}

TEST_CASE("named presets resolve and unknown names do not") {
  CHECK(optimizer_presets().size() == 3);
  auto scaled = find_preset("scaled-31.2");
  REQUIRE(scaled.has_value());
  CHECK(scaled->kind == OptimizerKind::LarsScaled);
  CHECK(scaled->lars.base_lr == doctest::Approx(31.2).epsilon(1e-12));
  CHECK(scaled->lars.warmup_epochs == doctest::Approx(25.0).epsilon(1e-12));

  auto tuned = find_preset("unscaled-29.0-m0.929");
  REQUIRE(tuned.has_value());
  CHECK(tuned->kind == OptimizerKind::LarsUnscaled);
  CHECK(tuned->lars.base_lr == doctest::Approx(29.0).epsilon(1e-12));
  CHECK(tuned->lars.momentum == doctest::Approx(0.929).epsilon(1e-12));
  CHECK(tuned->lars.warmup_epochs == doctest::Approx(18.0).epsilon(1e-12));

  CHECK(find_preset("unscaled-31.2").has_value());
  CHECK_FALSE(find_preset("nope").has_value());
}
