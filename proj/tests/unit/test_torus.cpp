#include <doctest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <utility>
#include <vector>

#include "podscale/rng.hpp"
#include "podscale/torus.hpp"

using namespace podscale;

namespace {

GradientSet random_set(Rng& rng, const std::vector<int64_t>& sizes) {
  GradientSet g;
  for (size_t i = 0; i < sizes.size(); ++i) {
    Tensor t({sizes[i]});
    for (float& v : t.data) v = static_cast<float>(rng.normal());
    g.tensors.push_back({"t" + std::to_string(i), t});
  }
  return g;
}

}  // namespace

TEST_CASE("torus neighbors wrap around") {
  TorusTopology topo{3, 4};
  CHECK(neighbor(0, Direction::ColPlus, topo) == 1);
  CHECK(neighbor(3, Direction::ColPlus, topo) == 0);
  CHECK(neighbor(0, Direction::ColMinus, topo) == 3);
  CHECK(neighbor(0, Direction::RowPlus, topo) == 4);
  CHECK(neighbor(0, Direction::RowMinus, topo) == 8);
  CHECK(neighbor(11, Direction::RowPlus, topo) == 3);
  CHECK_THROWS_AS(neighbor(12, Direction::RowPlus, topo), std::invalid_argument);
  CHECK_THROWS_AS(neighbor(-1, Direction::RowPlus, topo), std::invalid_argument);
}

TEST_CASE("ring reduce-scatter produces balanced shards holding the sum") {
  Rng rng(41);
  const int n = 3;
  const int64_t L = 10;
  std::vector<Tensor> values;
  for (int i = 0; i < n; ++i) {
    Tensor t({L});
    for (float& v : t.data) v = static_cast<float>(rng.uniform_int(-8, 8));
    values.push_back(std::move(t));
  }
  std::vector<Tensor> shards = ring_reduce_scatter(values);
  REQUIRE(shards.size() == 3);
  CHECK(shards[0].size() == 3);  // [0,10/3)
  CHECK(shards[1].size() == 3);
  CHECK(shards[2].size() == 4);
  int64_t off = 0;
  for (const Tensor& s : shards) {
    for (int64_t e = 0; e < s.size(); ++e) {
      float want = 0.0f;
      for (int i = 0; i < n; ++i) want += values[i][off + e];
      CHECK(s[e] == want);  // integer-valued, exact
    }
    off += s.size();
  }
}

TEST_CASE("ring all-gather reassembles shards in ring order on every core") {
  std::vector<Tensor> shards = {Tensor::from_values({2}, {1, 2}),
                                Tensor::from_values({1}, {3}),
                                Tensor::from_values({2}, {4, 5})};
  std::vector<Tensor> full = ring_all_gather(shards);
  REQUIRE(full.size() == 3);
  for (const Tensor& f : full) {
    REQUIRE(f.size() == 5);
    for (int64_t i = 0; i < 5; ++i) CHECK(f[i] == static_cast<float>(i + 1));
  }
}

TEST_CASE("2x2 all-reduce of scalars sums to 10 everywhere") {
  TorusTopology topo{2, 2};
  std::vector<GradientSet> per_core;
  for (int c = 0; c < 4; ++c) {
    GradientSet g;
    g.tensors.push_back({"x", Tensor::from_values({1}, {static_cast<float>(c + 1)})});
    per_core.push_back(std::move(g));
  }
  auto out = all_reduce_2d(per_core, topo);
  REQUIRE(out.size() == 4);
  for (const auto& g : out) CHECK(g.tensors[0].tensor[0] == 10.0f);
}

TEST_CASE("2-D all-reduce is bitwise identical across cores and near the double sum") {
  Rng rng(43);
  const std::vector<std::pair<int, int>> shapes = {{1, 4}, {4, 1}, {2, 3}, {4, 4}};
  for (auto [R, C] : shapes) {
    TorusTopology topo{R, C};
    const int P = topo.num_cores();
    std::vector<GradientSet> per_core;
    for (int c = 0; c < P; ++c) per_core.push_back(random_set(rng, {5, 1, 17}));
    auto out = all_reduce_2d(per_core, topo);
    for (int c = 1; c < P; ++c) {
      for (size_t t = 0; t < out[0].tensors.size(); ++t) {
        const auto& a = out[0].tensors[t].tensor;
        const auto& b = out[c].tensors[t].tensor;
        CHECK(std::memcmp(a.data.data(), b.data.data(),
                          a.data.size() * sizeof(float)) == 0);
      }
    }
    for (size_t t = 0; t < out[0].tensors.size(); ++t) {
      const auto& got = out[0].tensors[t].tensor;
      for (int64_t e = 0; e < got.size(); ++e) {
        double want = 0.0;
        for (int c = 0; c < P; ++c) want += per_core[c].tensors[t].tensor[e];
        CHECK(got[e] == doctest::Approx(want).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("all-reduce rejects mismatched structures") {
  TorusTopology topo{1, 2};
  Rng rng(47);
  std::vector<GradientSet> per_core = {random_set(rng, {3}), random_set(rng, {4})};
  CHECK_THROWS_AS(all_reduce_2d(per_core, topo), std::invalid_argument);
  per_core[1] = random_set(rng, {3});
  per_core[1].tensors[0].name = "other";
  CHECK_THROWS_AS(all_reduce_2d(per_core, topo), std::invalid_argument);
}

TEST_CASE("pipeline time for three equal 10ms phases in 10 chunks is 12ms") {
  PhaseTimes p{0.010, 0.010, 0.010};
  CHECK(serial_time(p) == doctest::Approx(0.030).epsilon(1e-12));
  CHECK(pipeline_time(p, 10, 0.0) == doctest::Approx(0.012).epsilon(1e-12));
  CHECK(pipeline_time(p, 1, 0.0) == doctest::Approx(0.030).epsilon(1e-12));
  CHECK_THROWS_AS(pipeline_time(p, 0, 0.0), std::invalid_argument);
}

TEST_CASE("phase times follow the documented closed form") {
  LinkCostParams cost;
  cost.link_bandwidth = 50e9;
  cost.hop_latency = 2e-6;
  cost.mem_bandwidth = 80e9;
  cost.chunk_overhead = 1e-6;
  TorusTopology topo{4, 8};
  const double B = 6.4e7;
  PhaseTimes p = summation_phase_times(static_cast<int64_t>(B), topo, cost);
  CHECK(p.gather == doctest::Approx(B / 80e9).epsilon(1e-12));
  CHECK(p.scatter == doctest::Approx(B / 80e9).epsilon(1e-12));
  const double row_step = B / 8 / 50e9 + 2e-6;
  const double col_step = B / 8 / 4 / 50e9 + 2e-6;
  CHECK(p.net ==
        doctest::Approx(2 * 7 * row_step + 2 * 3 * col_step).epsilon(1e-12));
}

TEST_CASE("a single-core topology has no wire time") {
  PhaseTimes p = summation_phase_times(1 << 20, TorusTopology{1, 1},
                                       default_link_cost_params());
  CHECK(p.net == 0.0);
  CHECK(p.gather > 0.0);
}

TEST_CASE("estimate_summation_time matches phases and pays off for large sets") {
  const LinkCostParams cost = default_link_cost_params();
  TorusTopology topo{4, 4};
  const int64_t bytes = 100'000'000;
  const double serial = estimate_summation_time(bytes, topo, cost, 1, false);
  const double piped = estimate_summation_time(bytes, topo, cost, 16, true);
  CHECK(serial / piped > 1.0);
  GradientSet g;
  g.tensors.push_back({"w", Tensor({bytes / 4})});
  CHECK(estimate_summation_time(g, topo, cost, 16, true) ==
        doctest::Approx(piped).epsilon(1e-15));
}
