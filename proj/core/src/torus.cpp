#include "podscale/torus.hpp"

#include <algorithm>
#include <stdexcept>

namespace podscale {

int neighbor(int core, Direction dir, const TorusTopology& topo) {
  if (core < 0 || core >= topo.num_cores()) {
    throw std::invalid_argument("invalid core id " + std::to_string(core));
  }
  int r = topo.row_of(core);
  int c = topo.col_of(core);
  switch (dir) {
    case Direction::RowPlus:
      r = (r + 1) % topo.rows;
      break;
    case Direction::RowMinus:
      r = (r + topo.rows - 1) % topo.rows;
      break;
    case Direction::ColPlus:
      c = (c + 1) % topo.cols;
      break;
    case Direction::ColMinus:
      c = (c + topo.cols - 1) % topo.cols;
      break;
  }
  return topo.core_at(r, c);
}

LinkCostParams default_link_cost_params() {
  LinkCostParams p;
  p.link_bandwidth = 70e9;
  p.hop_latency = 1e-6;
  // Effective rate for gathering many small non-contiguous tensors from HBM,
  // well below peak HBM bandwidth.
  p.mem_bandwidth = 90e9;
  p.chunk_overhead = 2e-6;
  return p;
}

int64_t GradientSet::total_elems() const {
  int64_t n = 0;
  for (const auto& t : tensors) n += t.tensor.size();
  return n;
}

namespace {

// Balanced contiguous split: shard i covers [i*L/n, (i+1)*L/n).
std::pair<int64_t, int64_t> shard_range(int64_t length, int n, int i) {
  return {length * i / n, length * (i + 1) / n};
}

void check_same_shape(const std::vector<Tensor>& values) {
  for (size_t i = 1; i < values.size(); ++i) {
    if (values[i].shape != values[0].shape) {
      throw std::invalid_argument("per-core tensor shape mismatch at core " +
                                  std::to_string(i));
    }
  }
}

}  // namespace

std::vector<Tensor> ring_reduce_scatter(const std::vector<Tensor>& values) {
  if (values.empty()) throw std::invalid_argument("empty ring");
  check_same_shape(values);
  const int n = static_cast<int>(values.size());
  const int64_t L = values[0].size();
  std::vector<Tensor> out;
  out.reserve(values.size());
  for (int i = 0; i < n; ++i) {
    auto [lo, hi] = shard_range(L, n, i);
    Tensor shard({hi - lo});
    for (int64_t e = lo; e < hi; ++e) {
      float acc = 0.0f;
      for (int j = 0; j < n; ++j) acc += values[j][e];
      shard[e - lo] = acc;
    }
    out.push_back(std::move(shard));
  }
  return out;
}

std::vector<Tensor> ring_all_gather(const std::vector<Tensor>& shards) {
  if (shards.empty()) throw std::invalid_argument("empty ring");
  int64_t total = 0;
  for (const auto& s : shards) {
    if (s.shape.size() != 1) {
      throw std::invalid_argument("all-gather shards must be rank-1");
    }
    total += s.size();
  }
  Tensor full({total});
  int64_t off = 0;
  for (const auto& s : shards) {
    std::copy(s.data.begin(), s.data.end(), full.data.begin() + off);
    off += s.size();
  }
  return std::vector<Tensor>(shards.size(), full);
}

std::vector<GradientSet> all_reduce_2d(const std::vector<GradientSet>& per_core,
                                       const TorusTopology& topo) {
  const int P = topo.num_cores();
  if (static_cast<int>(per_core.size()) != P) {
    throw std::invalid_argument("expected one GradientSet per core");
  }
  const GradientSet& ref = per_core[0];
  for (int c = 1; c < P; ++c) {
    if (per_core[c].tensors.size() != ref.tensors.size()) {
      throw std::invalid_argument("GradientSet structure mismatch on core " +
                                  std::to_string(c));
    }
    for (size_t t = 0; t < ref.tensors.size(); ++t) {
      if (per_core[c].tensors[t].name != ref.tensors[t].name ||
          per_core[c].tensors[t].tensor.shape != ref.tensors[t].tensor.shape) {
        throw std::invalid_argument("GradientSet structure mismatch on core " +
                                    std::to_string(c) + " tensor " +
                                    std::to_string(t));
      }
    }
  }

  const int64_t L = ref.total_elems();
  // Flatten each core's set in declared order.
  std::vector<std::vector<float>> flat(P);
  for (int c = 0; c < P; ++c) {
    flat[c].reserve(static_cast<size_t>(L));
    for (const auto& nt : per_core[c].tensors) {
      flat[c].insert(flat[c].end(), nt.tensor.data.begin(),
                     nt.tensor.data.end());
    }
  }

  const int R = topo.rows, C = topo.cols;
  // Phase 1: reduce-scatter along each row; core (r,c) ends with the row sum
  // of shard c. Shard boundaries depend only on (L, C), so the shard at
  // column c covers the same element range in every row.
  std::vector<std::vector<float>> shard(P);
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      auto [lo, hi] = shard_range(L, C, c);
      auto& s = shard[topo.core_at(r, c)];
      s.assign(static_cast<size_t>(hi - lo), 0.0f);
      for (int64_t e = lo; e < hi; ++e) {
        float acc = 0.0f;
        for (int j = 0; j < C; ++j) acc += flat[topo.core_at(r, j)][static_cast<size_t>(e)];
        s[static_cast<size_t>(e - lo)] = acc;
      }
    }
  }
  // Phase 2: all-reduce each shard along its column, ascending row order.
  for (int c = 0; c < C; ++c) {
    auto [lo, hi] = shard_range(L, C, c);
    std::vector<float> sum(static_cast<size_t>(hi - lo), 0.0f);
    for (size_t e = 0; e < sum.size(); ++e) {
      float acc = 0.0f;
      for (int r = 0; r < R; ++r) acc += shard[topo.core_at(r, c)][e];
      sum[e] = acc;
    }
    for (int r = 0; r < R; ++r) shard[topo.core_at(r, c)] = sum;
  }
  // Phase 3: all-gather along rows.
  std::vector<GradientSet> result(P);
  for (int core = 0; core < P; ++core) {
    const int r = topo.row_of(core);
    std::vector<float> full;
    full.reserve(static_cast<size_t>(L));
    for (int c = 0; c < C; ++c) {
      const auto& s = shard[topo.core_at(r, c)];
      full.insert(full.end(), s.begin(), s.end());
    }
    GradientSet out;
    out.tensors.reserve(ref.tensors.size());
    int64_t off = 0;
    for (const auto& nt : ref.tensors) {
      NamedTensor t{nt.name, Tensor(nt.tensor.shape, nt.tensor.dtype)};
      std::copy(full.begin() + off, full.begin() + off + nt.tensor.size(),
                t.tensor.data.begin());
      off += nt.tensor.size();
      out.tensors.push_back(std::move(t));
    }
    result[core] = std::move(out);
  }
  return result;
}

PhaseTimes summation_phase_times(int64_t total_bytes, const TorusTopology& topo,
                                 const LinkCostParams& cost) {
  const double B = static_cast<double>(total_bytes);
  const int R = topo.rows, C = topo.cols;
  PhaseTimes p;
  p.gather = B / cost.mem_bandwidth;
  p.scatter = B / cost.mem_bandwidth;
  // Ring steps: reduce-scatter along rows, all-reduce of the shard along
  // columns, all-gather along rows. A dimension of extent 1 contributes no
  // wire time.
  const double row_step = B / C / cost.link_bandwidth + cost.hop_latency;
  const double col_step = B / C / R / cost.link_bandwidth + cost.hop_latency;
  p.net = (C - 1) * row_step            // row reduce-scatter
          + 2.0 * (R - 1) * col_step    // column all-reduce
          + (C - 1) * row_step;         // row all-gather
  return p;
}

double serial_time(const PhaseTimes& p) { return p.gather + p.net + p.scatter; }

double pipeline_time(const PhaseTimes& p, int chunks, double chunk_overhead) {
  if (chunks < 1) throw std::invalid_argument("chunks must be >= 1");
  const double m = std::max(p.gather, std::max(p.net, p.scatter));
  const double s = serial_time(p);
  return m + (s - m) / chunks + chunks * chunk_overhead;
}

double estimate_summation_time(int64_t total_bytes, const TorusTopology& topo,
                               const LinkCostParams& cost, int chunks,
                               bool pipelined) {
  const PhaseTimes p = summation_phase_times(total_bytes, topo, cost);
  if (!pipelined) return serial_time(p);
  return pipeline_time(p, chunks, cost.chunk_overhead);
}

double estimate_summation_time(const GradientSet& grads,
                               const TorusTopology& topo,
                               const LinkCostParams& cost, int chunks,
                               bool pipelined) {
  return estimate_summation_time(grads.total_bytes(), topo, cost, chunks,
                                 pipelined);
}

}  // namespace podscale
