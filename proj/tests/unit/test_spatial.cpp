#include <doctest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "podscale/rng.hpp"
#include "podscale/spatial.hpp"

using namespace podscale;

namespace {

Tensor random_input(Rng& rng, std::vector<int64_t> shape) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(),
                     a.data.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("partition plan covers the tensor with interior halos") {
  ConvParams p;
  p.kernel_size = 3;
  PartitionPlan plan = plan_partition({2, 8, 8, 1}, p, {2, 2, 1});
  REQUIRE(plan.slices.size() == 4);
  CHECK_FALSE(plan.replicated);
  const CoreSlice& tl = plan.slices[0];
  CHECK(tl.halo.top == 0);
  CHECK(tl.halo.bottom == 1);
  CHECK(tl.halo.left == 0);
  CHECK(tl.halo.right == 1);
  const CoreSlice& br = plan.slices[3];
  CHECK(br.halo.top == 1);
  CHECK(br.halo.left == 1);
  CHECK(br.halo.bottom == 0);
  CHECK(br.halo.right == 0);
  CHECK(tl.h1 == 4);
  CHECK(br.h0 == 4);
}

TEST_CASE("indivisible spatial extents are planning errors naming the axis") {
  ConvParams p;
  p.kernel_size = 3;
  CHECK_THROWS_WITH_AS(plan_partition({1, 9, 8, 1}, p, {2, 1, 1}),
                       doctest::Contains("grid_h"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(plan_partition({1, 8, 9, 1}, p, {1, 2, 1}),
                       doctest::Contains("grid_w"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(plan_partition({3, 8, 8, 1}, p, {1, 1, 2}),
                       doctest::Contains("batch_splits"), std::invalid_argument);
}

TEST_CASE("extents smaller than the grid fall back to replication") {
  ConvParams p;
  p.kernel_size = 3;
  PartitionPlan plan = plan_partition({1, 2, 8, 1}, p, {4, 1, 1});
  CHECK(plan.replicated);
  REQUIRE(plan.slices.size() == 4);
  for (const CoreSlice& s : plan.slices) {
    CHECK(s.h0 == 0);
    CHECK(s.h1 == 2);
  }
  Rng rng(53);
  Tensor in = random_input(rng, {1, 2, 8, 1});
  Tensor k = random_input(rng, {3, 3, 1, 1});
  auto shards = extract_shards(in, plan);
  auto outs = sharded_conv2d(shards, k, p, plan);
  Tensor mono = conv2d(in, k, p);
  for (const Tensor& o : outs) CHECK(bitwise_equal(o, mono));
  CHECK(bitwise_equal(concat_output_shards(outs, plan), mono));
}

TEST_CASE("sharded conv reproduces the monolithic conv bitwise") {
  Rng rng(59);
  for (int K : {1, 3, 5}) {
    for (Padding pad : {Padding::SAME, Padding::VALID}) {
      const std::vector<std::tuple<int, int, int>> grids = {
          {2, 2, 1}, {1, 4, 1}, {4, 1, 1}, {2, 1, 2}};
      for (auto [gh, gw, bs] : grids) {
        ConvParams p;
        p.kernel_size = K;
        p.padding = pad;
        p.in_channels = 2;
        p.out_channels = 3;
        Tensor in = random_input(rng, {2, 8, 8, 2});
        Tensor k = random_input(rng, {K, K, 2, 3});
        PartitionPlan plan = plan_partition(in.shape, p, {gh, gw, bs});
        auto outs = sharded_conv2d(extract_shards(in, plan), k, p, plan);
        Tensor got = concat_output_shards(outs, plan);
        Tensor want = conv2d(in, k, p);
        CHECK(bitwise_equal(got, want));
      }
    }
  }
}

TEST_CASE("valid padding yields uneven boundary output shards that still cover") {
  ConvParams p;
  p.kernel_size = 5;
  p.padding = Padding::VALID;
  PartitionPlan plan = plan_partition({1, 8, 8, 1}, p, {2, 1, 1});
  // Output extent 4: top core produces rows [0,2), bottom [2,4).
  CHECK(plan.slices[0].oh0 == 0);
  CHECK(plan.slices[0].oh1 == 2);
  CHECK(plan.slices[1].oh0 == 2);
  CHECK(plan.slices[1].oh1 == 4);
}

TEST_CASE("strided sharding is limited to the pointwise stride-aligned case") {
  ConvParams p;
  p.kernel_size = 1;
  p.stride = 2;
  CHECK_NOTHROW(plan_partition({1, 8, 8, 1}, p, {2, 2, 1}));
  p.kernel_size = 3;
  CHECK_THROWS_AS(plan_partition({1, 8, 8, 1}, p, {2, 2, 1}),
                  std::invalid_argument);

  p.kernel_size = 1;
  Rng rng(61);
  Tensor in = random_input(rng, {1, 8, 8, 1});
  Tensor k = random_input(rng, {1, 1, 1, 1});
  PartitionPlan plan = plan_partition(in.shape, p, {2, 2, 1});
  Tensor got = concat_output_shards(
      sharded_conv2d(extract_shards(in, plan), k, p, plan), plan);
  CHECK(bitwise_equal(got, conv2d(in, k, p)));
}

TEST_CASE("distributed batch norm matches the monolithic statistics") {
  Rng rng(67);
  Tensor full = random_input(rng, {12, 5});
  std::vector<Tensor> shards;
  int64_t row = 0;
  for (int64_t n : {3, 4, 5}) {
    Tensor s({n, 5});
    std::copy(full.data.begin() + row * 5, full.data.begin() + (row + n) * 5,
              s.data.begin());
    shards.push_back(std::move(s));
    row += n;
  }
  auto normed = distributed_batch_norm(shards, 1e-5);
  BatchStats stats = batch_stats(full);
  row = 0;
  for (const Tensor& s : normed) {
    for (int64_t n = 0; n < s.shape[0]; ++n) {
      for (int64_t f = 0; f < 5; ++f) {
        const double want = (full[(row + n) * 5 + f] - stats.mean[f]) /
                            std::sqrt(static_cast<double>(stats.var[f]) + 1e-5);
        CHECK(s[n * 5 + f] == doctest::Approx(want).epsilon(1e-6));
      }
    }
    row += s.shape[0];
  }
}

TEST_CASE("distributed batch norm rejects empty group members") {
  std::vector<Tensor> shards = {Tensor({2, 3}), Tensor({0, 3})};
  CHECK_THROWS_WITH_AS(distributed_batch_norm(shards),
                       doctest::Contains("empty local batch"),
                       std::invalid_argument);
}

TEST_CASE("load imbalance: half the work unsharded on 4 cores gives 2.5") {
  ConvParams p;
  p.kernel_size = 3;
  PartitionPlan plan = plan_partition({1, 8, 8, 1}, p, {2, 2, 1});
  LoadReport r = load_imbalance_report(plan, 0.5);
  REQUIRE(r.per_core.size() == 4);
  CHECK(r.per_core[0] == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(r.per_core[1] == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(r.max_over_mean == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(load_imbalance_report(plan, 0.0).max_over_mean ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("format_plan lists every core") {
  ConvParams p;
  p.kernel_size = 3;
  PartitionPlan plan = plan_partition({1, 8, 8, 1}, p, {2, 2, 1});
  const std::string s = format_plan(plan);
  CHECK(s.find("core 0") != std::string::npos);
  CHECK(s.find("core 3") != std::string::npos);
  CHECK(s.find("grid 2x2") != std::string::npos);
}
