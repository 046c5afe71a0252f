#include "podscale/spatial.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace podscale {

namespace {

void check_spec(const ShardSpec& grid) {
  if (grid.grid_h < 1 || grid.grid_w < 1 || grid.batch_splits < 1) {
    throw std::invalid_argument("ShardSpec extents must be positive");
  }
}

}  // namespace

PartitionPlan plan_partition(const std::vector<int64_t>& input_shape,
                             const ConvParams& params, const ShardSpec& grid) {
  check_spec(grid);
  if (input_shape.size() != 4) {
    throw std::invalid_argument("plan_partition expects NHWC input shape");
  }
  const int64_t N = input_shape[0], H = input_shape[1], W = input_shape[2];
  const int K = params.kernel_size;
  if (K < 1 || K % 2 == 0) throw std::invalid_argument("kernel_size must be positive odd");

  PartitionPlan plan;
  plan.grid = grid;
  plan.params = params;
  plan.input_shape = input_shape;

  int gh = grid.grid_h, gw = grid.grid_w;
  const int bs = grid.batch_splits;
  if (N % bs != 0) {
    throw std::invalid_argument("batch extent " + std::to_string(N) +
                                " not divisible by batch_splits " +
                                std::to_string(bs) + " (axis N)");
  }

  // Spatial extents too small to split: replicate instead.
  if ((gh > 1 && H < gh) || (gw > 1 && W < gw)) {
    plan.replicated = true;
    CoreSlice full;
    full.n0 = 0;
    full.n1 = N;
    full.h0 = 0;
    full.h1 = H;
    full.w0 = 0;
    full.w1 = W;
    full.oh1 = conv_out_extent(H, params);
    full.ow1 = conv_out_extent(W, params);
    plan.slices.assign(static_cast<size_t>(grid.num_cores()), full);
    return plan;
  }

  if (H % gh != 0) {
    throw std::invalid_argument("spatial extent H=" + std::to_string(H) +
                                " not divisible by grid_h=" + std::to_string(gh));
  }
  if (W % gw != 0) {
    throw std::invalid_argument("spatial extent W=" + std::to_string(W) +
                                " not divisible by grid_w=" + std::to_string(gw));
  }
  if (params.stride > 1) {
    // Shard boundaries must align with the stride phase.
    if (K != 1 || params.padding != Padding::SAME || H % params.stride != 0 ||
        W % params.stride != 0 || (H / gh) % params.stride != 0 ||
        (W / gw) % params.stride != 0) {
      throw std::invalid_argument(
          "stride > 1 supported only for K=1 SAME with stride-aligned shards");
    }
  }

  const int hw = K / 2;
  const int64_t hp = H / gh, wp = W / gw, np = N / bs;
  const int64_t Ho = conv_out_extent(H, params);
  const int64_t Wo = conv_out_extent(W, params);

  for (int b = 0; b < bs; ++b) {
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        CoreSlice s;
        s.n0 = b * np;
        s.n1 = (b + 1) * np;
        s.h0 = gy * hp;
        s.h1 = (gy + 1) * hp;
        s.w0 = gx * wp;
        s.w1 = (gx + 1) * wp;
        s.halo.top = gy > 0 ? hw : 0;
        s.halo.bottom = gy < gh - 1 ? hw : 0;
        s.halo.left = gx > 0 ? hw : 0;
        s.halo.right = gx < gw - 1 ? hw : 0;
        if (params.padding == Padding::SAME) {
          s.oh0 = s.h0 / params.stride;
          s.oh1 = s.h1 / params.stride;
          s.ow0 = s.w0 / params.stride;
          s.ow1 = s.w1 / params.stride;
        } else {
          s.oh0 = gy > 0 ? s.h0 - hw : 0;
          s.oh1 = gy < gh - 1 ? s.h1 - hw : Ho;
          s.ow0 = gx > 0 ? s.w0 - hw : 0;
          s.ow1 = gx < gw - 1 ? s.w1 - hw : Wo;
        }
        plan.slices.push_back(s);
      }
    }
  }
  return plan;
}

std::vector<Tensor> extract_shards(const Tensor& full,
                                   const PartitionPlan& plan) {
  if (full.shape != plan.input_shape) {
    throw std::invalid_argument("tensor shape does not match plan");
  }
  const int64_t H = full.shape[1], W = full.shape[2], C = full.shape[3];
  std::vector<Tensor> shards;
  shards.reserve(plan.slices.size());
  for (const CoreSlice& s : plan.slices) {
    Tensor t({s.n1 - s.n0, s.h1 - s.h0, s.w1 - s.w0, C}, full.dtype);
    int64_t idx = 0;
    for (int64_t n = s.n0; n < s.n1; ++n)
      for (int64_t h = s.h0; h < s.h1; ++h)
        for (int64_t w = s.w0; w < s.w1; ++w)
          for (int64_t c = 0; c < C; ++c)
            t[idx++] = full.data[static_cast<size_t>(((n * H + h) * W + w) * C + c)];
    shards.push_back(std::move(t));
  }
  return shards;
}

std::vector<Tensor> halo_exchange(const std::vector<Tensor>& shards,
                                  const PartitionPlan& plan) {
  if (shards.size() != plan.slices.size()) {
    throw std::invalid_argument("shard count does not match plan");
  }
  if (plan.replicated) return shards;

  const int64_t H = plan.input_shape[1], W = plan.input_shape[2],
                C = plan.input_shape[3];
  const int hw = plan.params.kernel_size / 2;
  const bool same = plan.params.padding == Padding::SAME;
  const int gh = plan.grid.grid_h, gw = plan.grid.grid_w;
  const int64_t hp = H / gh, wp = W / gw;

  std::vector<Tensor> out;
  out.reserve(shards.size());
  for (size_t core = 0; core < shards.size(); ++core) {
    const CoreSlice& s = plan.slices[core];
    const Tensor& local = shards[core];
    const std::vector<int64_t> want = {s.n1 - s.n0, s.h1 - s.h0, s.w1 - s.w0, C};
    if (local.shape != want) {
      throw std::invalid_argument("shard " + std::to_string(core) +
                                  " shape does not match plan slice");
    }
    // Extension widths: halo toward interior neighbors, zero padding of the
    // kernel radius at global boundaries under SAME, nothing under VALID.
    const int64_t et = s.halo.top > 0 ? s.halo.top : (same && s.h0 == 0 ? hw : 0);
    const int64_t eb = s.halo.bottom > 0 ? s.halo.bottom : (same && s.h1 == H ? hw : 0);
    const int64_t el = s.halo.left > 0 ? s.halo.left : (same && s.w0 == 0 ? hw : 0);
    const int64_t er = s.halo.right > 0 ? s.halo.right : (same && s.w1 == W ? hw : 0);

    const int64_t Nn = s.n1 - s.n0;
    const int64_t He = (s.h1 - s.h0) + et + eb;
    const int64_t We = (s.w1 - s.w0) + el + er;
    Tensor ext({Nn, He, We, C}, local.dtype);

    const int b = static_cast<int>(core) / (gh * gw);
    for (int64_t n = 0; n < Nn; ++n) {
      for (int64_t i = 0; i < He; ++i) {
        const int64_t gh_row = s.h0 - et + i;  // global row
        if (gh_row < 0 || gh_row >= H) continue;  // zero pad (SAME)
        for (int64_t j = 0; j < We; ++j) {
          const int64_t gw_col = s.w0 - el + j;
          if (gw_col < 0 || gw_col >= W) continue;
          // Owner core of the global position within the same batch split.
          const int oy = static_cast<int>(gh_row / hp);
          const int ox = static_cast<int>(gw_col / wp);
          const size_t owner = static_cast<size_t>((b * gh + oy) * gw + ox);
          const CoreSlice& os = plan.slices[owner];
          const Tensor& src = shards[owner];
          const int64_t lh = gh_row - os.h0;
          const int64_t lw = gw_col - os.w0;
          const int64_t sw = os.w1 - os.w0;
          for (int64_t c = 0; c < C; ++c) {
            ext.data[static_cast<size_t>(((n * He + i) * We + j) * C + c)] =
                src.data[static_cast<size_t>(((n * (os.h1 - os.h0) + lh) * sw + lw) * C + c)];
          }
        }
      }
    }
    out.push_back(std::move(ext));
  }
  return out;
}

std::vector<Tensor> sharded_conv2d(const std::vector<Tensor>& shards,
                                   const Tensor& kernel,
                                   const ConvParams& params,
                                   const PartitionPlan& plan) {
  if (plan.replicated) {
    std::vector<Tensor> out;
    out.reserve(shards.size());
    for (const Tensor& s : shards) out.push_back(conv2d(s, kernel, params));
    return out;
  }
  std::vector<Tensor> ext = halo_exchange(shards, plan);
  ConvParams local = params;
  local.padding = Padding::VALID;
  std::vector<Tensor> out;
  out.reserve(ext.size());
  for (const Tensor& e : ext) out.push_back(conv2d(e, kernel, local));
  return out;
}

Tensor concat_output_shards(const std::vector<Tensor>& out_shards,
                            const PartitionPlan& plan) {
  if (out_shards.size() != plan.slices.size()) {
    throw std::invalid_argument("output shard count does not match plan");
  }
  if (plan.replicated) return out_shards[0];
  const int64_t N = plan.input_shape[0];
  const int64_t Ho = conv_out_extent(plan.input_shape[1], plan.params);
  const int64_t Wo = conv_out_extent(plan.input_shape[2], plan.params);
  const int64_t Co = out_shards[0].shape[3];
  Tensor full({N, Ho, Wo, Co}, out_shards[0].dtype);
  for (size_t core = 0; core < plan.slices.size(); ++core) {
    const CoreSlice& s = plan.slices[core];
    const Tensor& t = out_shards[core];
    const std::vector<int64_t> want = {s.n1 - s.n0, s.oh1 - s.oh0,
                                       s.ow1 - s.ow0, Co};
    if (t.shape != want) {
      throw std::invalid_argument("output shard " + std::to_string(core) +
                                  " has unexpected shape " +
                                  shape_to_string(t.shape));
    }
    int64_t idx = 0;
    for (int64_t n = s.n0; n < s.n1; ++n)
      for (int64_t h = s.oh0; h < s.oh1; ++h)
        for (int64_t w = s.ow0; w < s.ow1; ++w)
          for (int64_t c = 0; c < Co; ++c)
            full.data[static_cast<size_t>(((n * Ho + h) * Wo + w) * Co + c)] =
                t[idx++];
  }
  return full;
}

std::vector<Tensor> distributed_batch_norm(const std::vector<Tensor>& shards,
                                           double epsilon) {
  if (shards.empty()) throw std::invalid_argument("empty core group");
  const int64_t F = shards[0].shape.size() == 2 ? shards[0].shape[1] : -1;
  if (F < 0) throw std::invalid_argument("distributed_batch_norm expects [N,F] shards");
  int64_t total = 0;
  for (size_t i = 0; i < shards.size(); ++i) {
    if (shards[i].shape.size() != 2 || shards[i].shape[1] != F) {
      throw std::invalid_argument("shard " + std::to_string(i) +
                                  " feature extent mismatch");
    }
    if (shards[i].shape[0] == 0) {
      throw std::invalid_argument("empty local batch on group member " +
                                  std::to_string(i));
    }
    total += shards[i].shape[0];
  }

  // All-reduce of (sum, sumsq, count) partials, fixed group order.
  std::vector<double> sum(static_cast<size_t>(F), 0.0);
  std::vector<double> sumsq(static_cast<size_t>(F), 0.0);
  for (const Tensor& t : shards) {
    const int64_t n_local = t.shape[0];
    for (int64_t f = 0; f < F; ++f) {
      double ls = 0.0, lq = 0.0;
      for (int64_t n = 0; n < n_local; ++n) {
        double v = t.data[static_cast<size_t>(n * F + f)];
        ls += v;
        lq += v * v;
      }
      sum[static_cast<size_t>(f)] += ls;
      sumsq[static_cast<size_t>(f)] += lq;
    }
  }

  std::vector<Tensor> out;
  out.reserve(shards.size());
  for (const Tensor& t : shards) {
    Tensor norm(t.shape, t.dtype);
    const int64_t n_local = t.shape[0];
    for (int64_t f = 0; f < F; ++f) {
      const double mean = sum[static_cast<size_t>(f)] / static_cast<double>(total);
      double var = sumsq[static_cast<size_t>(f)] / static_cast<double>(total) -
                   mean * mean;
      if (var < 0.0) var = 0.0;
      const double inv = 1.0 / std::sqrt(var + epsilon);
      for (int64_t n = 0; n < n_local; ++n) {
        const size_t idx = static_cast<size_t>(n * F + f);
        norm.data[idx] = static_cast<float>((t.data[idx] - mean) * inv);
      }
    }
    out.push_back(std::move(norm));
  }
  return out;
}

LoadReport load_imbalance_report(const PartitionPlan& plan,
                                 double unsharded_fraction) {
  if (unsharded_fraction < 0.0 || unsharded_fraction > 1.0) {
    throw std::invalid_argument("unsharded_fraction must be in [0,1]");
  }
  const size_t P = plan.slices.size();
  LoadReport r;
  r.per_core.assign(P, (1.0 - unsharded_fraction) / static_cast<double>(P));
  r.per_core[0] += unsharded_fraction;
  double mx = 0.0;
  for (double w : r.per_core) mx = std::max(mx, w);
  r.max_over_mean = mx * static_cast<double>(P);  // mean is 1/P
  return r;
}

std::string format_plan(const PartitionPlan& plan) {
  std::ostringstream os;
  os << "grid " << plan.grid.grid_h << "x" << plan.grid.grid_w << " batch_splits "
     << plan.grid.batch_splits << (plan.replicated ? " (replicated)" : "")
     << "\n";
  for (size_t i = 0; i < plan.slices.size(); ++i) {
    const CoreSlice& s = plan.slices[i];
    os << "core " << i << ": n [" << s.n0 << "," << s.n1 << ") h [" << s.h0
       << "," << s.h1 << ") w [" << s.w0 << "," << s.w1 << ") halo t"
       << s.halo.top << " b" << s.halo.bottom << " l" << s.halo.left << " r"
       << s.halo.right << "\n";
  }
  return os.str();
}

}  // namespace podscale
