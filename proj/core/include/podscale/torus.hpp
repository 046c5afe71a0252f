#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "podscale/tensor.hpp"

namespace podscale {

// Logical 2-D torus of cores, ids in row-major order.
struct TorusTopology {
  int rows = 1;
  int cols = 1;

  int num_cores() const { return rows * cols; }
  int row_of(int core) const { return core / cols; }
  int col_of(int core) const { return core % cols; }
  int core_at(int r, int c) const { return r * cols + c; }
};

enum class Direction { RowPlus, RowMinus, ColPlus, ColMinus };

int neighbor(int core, Direction dir, const TorusTopology& topo);

// Analytic per-link cost model.
struct LinkCostParams {
  double link_bandwidth = 0;  // bytes/s on a torus link
  double hop_latency = 0;     // s per ring step
  double mem_bandwidth = 0;   // bytes/s for HBM gather/scatter of non-contiguous tensors
  double chunk_overhead = 0;  // s per pipeline chunk
};

// Defaults documented in the README; chosen so gather/scatter and wire time
// are comparable on mid-size tori, which is the regime where pipelining pays.
LinkCostParams default_link_cost_params();

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered list of (possibly many small, non-contiguous) gradient tensors.
// Order and names must be identical on every core.
struct GradientSet {
  std::vector<NamedTensor> tensors;

  int64_t total_elems() const;
  int64_t total_bytes() const { return total_elems() * 4; }
};

// Ring reduce-scatter over the implicit ring `values[0..n)`. The flat tensor
// is split into n contiguous shards; shard i on core i holds the full sum,
// accumulated in ring-index order. Returns rank-1 shard tensors.
std::vector<Tensor> ring_reduce_scatter(const std::vector<Tensor>& values);

// Every core ends with the concatenation of all shards in ring order.
std::vector<Tensor> ring_all_gather(const std::vector<Tensor>& shards);

// 2-D all-reduce: reduce-scatter along rows, all-reduce of shards along
// columns, all-gather along rows. Result is bitwise identical on all cores.
std::vector<GradientSet> all_reduce_2d(const std::vector<GradientSet>& per_core,
                                       const TorusTopology& topo);

struct PhaseTimes {
  double gather = 0;   // HBM gather of non-contiguous tensors
  double net = 0;      // 2-D reduce/gather wire time
  double scatter = 0;  // HBM scatter of results
};

PhaseTimes summation_phase_times(int64_t total_bytes, const TorusTopology& topo,
                                 const LinkCostParams& cost);

double serial_time(const PhaseTimes& p);

// Overlapped execution in `chunks` pipeline chunks:
//   max(phases) + (sum(phases) - max(phases)) / chunks + chunks * overhead
double pipeline_time(const PhaseTimes& p, int chunks, double chunk_overhead);

double estimate_summation_time(int64_t total_bytes, const TorusTopology& topo,
                               const LinkCostParams& cost, int chunks,
                               bool pipelined);

double estimate_summation_time(const GradientSet& grads,
                               const TorusTopology& topo,
                               const LinkCostParams& cost, int chunks,
                               bool pipelined);

}  // namespace podscale
