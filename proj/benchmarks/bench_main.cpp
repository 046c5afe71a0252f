#include <benchmark/benchmark.h>

#include "podscale/lstm.hpp"
#include "podscale/rng.hpp"
#include "podscale/spatial.hpp"
#include "podscale/tensor.hpp"
#include "podscale/torus.hpp"

using namespace podscale;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int64_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.normal() * scale);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = random_tensor(rng, {n, n});
  Tensor b = random_tensor(rng, {n, n});
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Conv2d(benchmark::State& state) {
  Rng rng(2);
  ConvParams p;
  p.kernel_size = 3;
  p.in_channels = 8;
  p.out_channels = 8;
  Tensor in = random_tensor(rng, {4, 32, 32, 8});
  Tensor k = random_tensor(rng, {3, 3, 8, 8});
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(in, k, p));
  }
}
BENCHMARK(BM_Conv2d);

void BM_ShardedConv2d(benchmark::State& state) {
  Rng rng(3);
  ConvParams p;
  p.kernel_size = 3;
  p.in_channels = 8;
  p.out_channels = 8;
  Tensor in = random_tensor(rng, {4, 32, 32, 8});
  Tensor k = random_tensor(rng, {3, 3, 8, 8});
  PartitionPlan plan = plan_partition(in.shape, p, {2, 2, 1});
  auto shards = extract_shards(in, plan);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sharded_conv2d(shards, k, p, plan));
  }
}
BENCHMARK(BM_ShardedConv2d);

void BM_LstmForward(benchmark::State& state) {
  const bool hoisted = state.range(0) != 0;
  Rng rng(4);
  const int64_t T = 32, B = 16, F = 32, H = 64;
  LstmParams params;
  params.w_x = random_tensor(rng, {F, 4 * H}, 0.3);
  params.w_h = random_tensor(rng, {H, 4 * H}, 0.3);
  params.bias = random_tensor(rng, {4 * H}, 0.1);
  Tensor x = random_tensor(rng, {T, B, F});
  const LstmState init = LstmState::zeros(B, H);
  for (auto _ : state) {
    if (hoisted) {
      benchmark::DoNotOptimize(lstm_forward_hoisted(x, params, init));
    } else {
      benchmark::DoNotOptimize(lstm_forward_standard(x, params, init));
    }
  }
}
BENCHMARK(BM_LstmForward)->Arg(0)->Arg(1);

void BM_AllReduce2d(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  TorusTopology topo{side, side};
  Rng rng(5);
  std::vector<GradientSet> per_core;
  for (int c = 0; c < topo.num_cores(); ++c) {
    GradientSet g;
    g.tensors.push_back({"w", random_tensor(rng, {1 << 14})});
    per_core.push_back(std::move(g));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(all_reduce_2d(per_core, topo));
  }
}
BENCHMARK(BM_AllReduce2d)->Arg(2)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
