#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "podscale/tensor.hpp"

namespace podscale {

// How a conv input is split across a core grid: grid_h x grid_w cores along
// the spatial axes times batch_splits along the batch axis, core ids assigned
// row-major over (batch split, grid row, grid col).
struct ShardSpec {
  int grid_h = 1;
  int grid_w = 1;
  int batch_splits = 1;

  int num_cores() const { return grid_h * grid_w * batch_splits; }
};

// Halo widths per side. floor(K/2) toward interior neighbors, 0 on sides
// that coincide with the global tensor boundary.
struct HaloSpec {
  int top = 0, bottom = 0, left = 0, right = 0;
};

struct CoreSlice {
  int64_t n0 = 0, n1 = 0;  // batch range [n0, n1)
  int64_t h0 = 0, h1 = 0;  // input row range
  int64_t w0 = 0, w1 = 0;  // input col range
  int64_t oh0 = 0, oh1 = 0;  // output row range this core produces
  int64_t ow0 = 0, ow1 = 0;
  HaloSpec halo;
};

struct PartitionPlan {
  ShardSpec grid;
  ConvParams params;
  std::vector<int64_t> input_shape;  // NHWC
  std::vector<CoreSlice> slices;     // one per core
  // True when a spatial extent was too small to split and the planner fell
  // back to replicating the full tensor on every requested core.
  bool replicated = false;
};

// Plans the tiling and halo widths. Extents that are smaller than the grid
// fall back to replication; extents that are large enough but indivisible
// are a planning error naming the axis.
PartitionPlan plan_partition(const std::vector<int64_t>& input_shape,
                             const ConvParams& params, const ShardSpec& grid);

// Cuts the full tensor into per-core shards according to the plan.
std::vector<Tensor> extract_shards(const Tensor& full,
                                   const PartitionPlan& plan);

// Extends each shard with neighbor rows/cols per its HaloSpec. Sides at the
// global boundary are zero-padded to the kernel radius under SAME padding and
// left unpadded under VALID.
std::vector<Tensor> halo_exchange(const std::vector<Tensor>& shards,
                                  const PartitionPlan& plan);

// Halo exchange followed by a local VALID conv on the extended shard.
// Concatenating the output shards reproduces the monolithic conv2d bitwise
// (identical accumulation order, halos carry the identical values).
std::vector<Tensor> sharded_conv2d(const std::vector<Tensor>& shards,
                                   const Tensor& kernel,
                                   const ConvParams& params,
                                   const PartitionPlan& plan);

// Reassembles output shards into the full conv output.
Tensor concat_output_shards(const std::vector<Tensor>& out_shards,
                            const PartitionPlan& plan);

// Batch norm over [N,F] shards held by a group of cores: (sum, sumsq, count)
// partials are all-reduced in group order, normalization applied locally.
std::vector<Tensor> distributed_batch_norm(const std::vector<Tensor>& shards,
                                           double epsilon = 1e-5);

struct LoadReport {
  std::vector<double> per_core;  // fraction of total work
  double max_over_mean = 1.0;
};

// Work estimate when `unsharded_fraction` of the ops run only on worker 0.
LoadReport load_imbalance_report(const PartitionPlan& plan,
                                 double unsharded_fraction);

// Human-readable table: core id -> slice ranges, halo widths.
std::string format_plan(const PartitionPlan& plan);

}  // namespace podscale
