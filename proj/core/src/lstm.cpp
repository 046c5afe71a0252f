#include "podscale/lstm.hpp"

#include <cmath>
#include <stdexcept>

namespace podscale {

namespace {

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

Tensor transpose2d(const Tensor& t) {
  const int64_t R = t.shape[0], C = t.shape[1];
  Tensor out({C, R});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c)
      out[c * R + r] = t[r * C + c];
  return out;
}

Tensor slice_step(const Tensor& seq, int64_t t) {
  // seq [T,B,F] -> [B,F] at step t
  const int64_t B = seq.shape[1], F = seq.shape[2];
  Tensor out({B, F});
  std::copy(seq.data.begin() + t * B * F, seq.data.begin() + (t + 1) * B * F,
            out.data.begin());
  return out;
}

struct CellOut {
  Tensor h, c;
};

// gates_pre [B,4H] laid out as (i,f,g,o); returns h_t, c_t, honoring mask.
CellOut cell_forward(const Tensor& gates_pre, const Tensor& h_prev,
                     const Tensor& c_prev, const uint8_t* step_mask) {
  const int64_t B = gates_pre.shape[0], H4 = gates_pre.shape[1];
  const int64_t H = H4 / 4;
  CellOut out{Tensor({B, H}), Tensor({B, H})};
  for (int64_t b = 0; b < B; ++b) {
    if (step_mask && !step_mask[b]) {
      for (int64_t h = 0; h < H; ++h) {
        out.h[b * H + h] = h_prev[b * H + h];
        out.c[b * H + h] = c_prev[b * H + h];
      }
      continue;
    }
    for (int64_t h = 0; h < H; ++h) {
      const float ai = gates_pre[b * H4 + h];
      const float af = gates_pre[b * H4 + H + h];
      const float ag = gates_pre[b * H4 + 2 * H + h];
      const float ao = gates_pre[b * H4 + 3 * H + h];
      const float i = sigmoidf(ai);
      const float f = sigmoidf(af);
      const float g = std::tanh(ag);
      const float o = sigmoidf(ao);
      const float c = f * c_prev[b * H + h] + i * g;
      out.c[b * H + h] = c;
      out.h[b * H + h] = o * std::tanh(c);
    }
  }
  return out;
}

LstmForwardResult run_forward(const Tensor& x_seq, const LstmParams& params,
                              const LstmState& init,
                              const std::vector<uint8_t>& mask, bool hoisted) {
  params.validate();
  if (x_seq.shape.size() != 3) {
    throw std::invalid_argument("x_seq must be [T,B,F]");
  }
  const int64_t T = x_seq.shape[0], B = x_seq.shape[1], F = x_seq.shape[2];
  if (T < 1) throw std::invalid_argument("sequence length must be >= 1");
  if (F != params.input_features()) {
    throw std::invalid_argument("input feature extent mismatch");
  }
  const int64_t H = params.hidden();
  const int64_t H4 = 4 * H;
  if (init.h.shape != std::vector<int64_t>{B, H} ||
      init.c.shape != std::vector<int64_t>{B, H}) {
    throw std::invalid_argument("initial state shape mismatch");
  }
  if (!mask.empty() && static_cast<int64_t>(mask.size()) != T * B) {
    throw std::invalid_argument("mask must have T*B entries");
  }

  // Input projection x*W_x + b. Hoisted: one [T*B,F] matmul for the whole
  // sequence; standard: one [B,F] matmul per step. Row-identical dot
  // products make the two bitwise equal.
  std::vector<Tensor> proj(static_cast<size_t>(T));
  if (hoisted) {
    Tensor flat = x_seq;
    flat.shape = {T * B, F};
    Tensor p = matmul(flat, params.w_x);
    for (int64_t r = 0; r < T * B; ++r)
      for (int64_t j = 0; j < H4; ++j) p[r * H4 + j] += params.bias[j];
    for (int64_t t = 0; t < T; ++t) {
      Tensor pt({B, H4});
      std::copy(p.data.begin() + t * B * H4, p.data.begin() + (t + 1) * B * H4,
                pt.data.begin());
      proj[static_cast<size_t>(t)] = std::move(pt);
    }
  } else {
    for (int64_t t = 0; t < T; ++t) {
      Tensor pt = matmul(slice_step(x_seq, t), params.w_x);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t j = 0; j < H4; ++j) pt[b * H4 + j] += params.bias[j];
      proj[static_cast<size_t>(t)] = std::move(pt);
    }
  }

  LstmForwardResult res;
  res.h_seq = Tensor({T, B, H});
  res.cache.x_seq = x_seq;
  res.cache.mask = mask;
  res.elems_per_projection = hoisted ? T * B : B;

  Tensor h = init.h, c = init.c;
  for (int64_t t = 0; t < T; ++t) {
    Tensor gates = proj[static_cast<size_t>(t)];
    Tensor hp = matmul(h, params.w_h);
    for (int64_t e = 0; e < B * H4; ++e) gates[e] += hp[e];

    const uint8_t* step_mask = mask.empty() ? nullptr : mask.data() + t * B;
    res.cache.gates_pre.push_back(gates);
    res.cache.h_prev.push_back(h);
    res.cache.c_prev.push_back(c);
    CellOut out = cell_forward(gates, h, c, step_mask);
    res.cache.c.push_back(out.c);
    std::copy(out.h.data.begin(), out.h.data.end(),
              res.h_seq.data.begin() + t * B * H);
    h = std::move(out.h);
    c = std::move(out.c);
  }
  res.final_state = {h, c};
  return res;
}

// Per-step gate-gradient computation shared by both backward variants.
// Returns da [B,4H] and updates dh_carry/dc_carry to the values flowing into
// step t-1 (excluding the W_h path, which the caller adds).
Tensor backward_gates(const LstmForwardResult& fwd, int64_t t, int64_t B,
                      int64_t H, const Tensor& dh, Tensor& dc_carry,
                      std::vector<uint8_t>& row_masked) {
  const int64_t H4 = 4 * H;
  const Tensor& gates = fwd.cache.gates_pre[static_cast<size_t>(t)];
  const Tensor& c_prev = fwd.cache.c_prev[static_cast<size_t>(t)];
  const Tensor& c_t = fwd.cache.c[static_cast<size_t>(t)];
  const uint8_t* step_mask =
      fwd.cache.mask.empty() ? nullptr : fwd.cache.mask.data() + t * B;

  Tensor da({B, H4});
  row_masked.assign(static_cast<size_t>(B), 0);
  for (int64_t b = 0; b < B; ++b) {
    if (step_mask && !step_mask[b]) {
      row_masked[static_cast<size_t>(b)] = 1;
      continue;  // da row stays zero; dh and dc pass through unchanged
    }
    for (int64_t h = 0; h < H; ++h) {
      const float i = sigmoidf(gates[b * H4 + h]);
      const float f = sigmoidf(gates[b * H4 + H + h]);
      const float g = std::tanh(gates[b * H4 + 2 * H + h]);
      const float o = sigmoidf(gates[b * H4 + 3 * H + h]);
      const float tc = std::tanh(c_t[b * H + h]);
      const float dh_v = dh[b * H + h];
      float dc = dc_carry[b * H + h] + dh_v * o * (1.0f - tc * tc);
      da[b * H4 + h] = dc * g * i * (1.0f - i);
      da[b * H4 + H + h] = dc * c_prev[b * H + h] * f * (1.0f - f);
      da[b * H4 + 2 * H + h] = dc * i * (1.0f - g * g);
      da[b * H4 + 3 * H + h] = dh_v * tc * o * (1.0f - o);
      dc_carry[b * H + h] = dc * f;
    }
  }
  return da;
}

}  // namespace

void LstmParams::validate() const {
  if (w_x.shape.size() != 2 || w_h.shape.size() != 2 || bias.shape.size() != 1) {
    throw std::invalid_argument("LstmParams ranks: W_x [F,4H], W_h [H,4H], bias [4H]");
  }
  const int64_t H4 = w_x.shape[1];
  if (H4 % 4 != 0 || w_h.shape[1] != H4 || w_h.shape[0] != H4 / 4 ||
      bias.shape[0] != H4) {
    throw std::invalid_argument("LstmParams shapes inconsistent");
  }
}

LstmState LstmState::zeros(int64_t batch, int64_t hidden) {
  return {Tensor({batch, hidden}), Tensor({batch, hidden})};
}

LstmForwardResult lstm_forward_standard(const Tensor& x_seq,
                                        const LstmParams& params,
                                        const LstmState& init,
                                        const std::vector<uint8_t>& mask) {
  return run_forward(x_seq, params, init, mask, false);
}

LstmForwardResult lstm_forward_hoisted(const Tensor& x_seq,
                                       const LstmParams& params,
                                       const LstmState& init,
                                       const std::vector<uint8_t>& mask) {
  return run_forward(x_seq, params, init, mask, true);
}

namespace {

void check_backward_inputs(const LstmForwardResult& fwd,
                           const Tensor& upstream) {
  if (fwd.cache.gates_pre.empty()) {
    throw std::invalid_argument("forward cache missing");
  }
  if (upstream.shape != fwd.h_seq.shape) {
    throw std::invalid_argument("upstream gradient must match h_seq shape");
  }
}

}  // namespace

LstmGrads lstm_backward_stepwise(const LstmForwardResult& fwd,
                                 const LstmParams& params,
                                 const Tensor& upstream_dh_seq) {
  check_backward_inputs(fwd, upstream_dh_seq);
  const int64_t T = fwd.h_seq.shape[0], B = fwd.h_seq.shape[1],
                H = fwd.h_seq.shape[2];
  const int64_t F = params.input_features();
  const int64_t H4 = 4 * H;

  LstmGrads grads{Tensor({F, H4}), Tensor({H, H4}), Tensor({H4})};
  Tensor wh_t = transpose2d(params.w_h);
  Tensor dh_carry({B, H});
  Tensor dc_carry({B, H});
  std::vector<uint8_t> row_masked;

  for (int64_t t = T - 1; t >= 0; --t) {
    Tensor dh = slice_step(upstream_dh_seq, t);
    for (int64_t e = 0; e < B * H; ++e) dh[e] += dh_carry[e];

    Tensor da = backward_gates(fwd, t, B, H, dh, dc_carry, row_masked);

    // Weight-gradient contraction inside the loop, one matmul per step.
    Tensor x_t = slice_step(fwd.cache.x_seq, t);
    Tensor dwx = matmul(transpose2d(x_t), da);
    for (int64_t e = 0; e < F * H4; ++e) grads.d_wx[e] += dwx[e];
    Tensor dwh = matmul(transpose2d(fwd.cache.h_prev[static_cast<size_t>(t)]), da);
    for (int64_t e = 0; e < H * H4; ++e) grads.d_wh[e] += dwh[e];
    for (int64_t b = 0; b < B; ++b)
      for (int64_t j = 0; j < H4; ++j) grads.d_bias[j] += da[b * H4 + j];

    dh_carry = matmul(da, wh_t);
    for (int64_t b = 0; b < B; ++b) {
      if (row_masked[static_cast<size_t>(b)]) {
        for (int64_t h = 0; h < H; ++h) dh_carry[b * H + h] = dh[b * H + h];
      }
    }
  }
  return grads;
}

LstmGrads lstm_backward_deferred(const LstmForwardResult& fwd,
                                 const LstmParams& params,
                                 const Tensor& upstream_dh_seq) {
  check_backward_inputs(fwd, upstream_dh_seq);
  const int64_t T = fwd.h_seq.shape[0], B = fwd.h_seq.shape[1],
                H = fwd.h_seq.shape[2];
  const int64_t F = params.input_features();
  const int64_t H4 = 4 * H;

  Tensor wh_t = transpose2d(params.w_h);
  Tensor dh_carry({B, H});
  Tensor dc_carry({B, H});
  std::vector<uint8_t> row_masked;

  // The loop only fills the T-length gate-gradient array.
  Tensor da_all({T * B, H4});
  for (int64_t t = T - 1; t >= 0; --t) {
    Tensor dh = slice_step(upstream_dh_seq, t);
    for (int64_t e = 0; e < B * H; ++e) dh[e] += dh_carry[e];

    Tensor da = backward_gates(fwd, t, B, H, dh, dc_carry, row_masked);
    std::copy(da.data.begin(), da.data.end(), da_all.data.begin() + t * B * H4);

    dh_carry = matmul(da, wh_t);
    for (int64_t b = 0; b < B; ++b) {
      if (row_masked[static_cast<size_t>(b)]) {
        for (int64_t h = 0; h < H; ++h) dh_carry[b * H + h] = dh[b * H + h];
      }
    }
  }

  // Accumulated weight gradients computed all at once after the loop.
  Tensor x_flat = fwd.cache.x_seq;
  x_flat.shape = {T * B, F};
  Tensor h_prev_flat({T * B, H});
  for (int64_t t = 0; t < T; ++t) {
    const Tensor& hp = fwd.cache.h_prev[static_cast<size_t>(t)];
    std::copy(hp.data.begin(), hp.data.end(),
              h_prev_flat.data.begin() + t * B * H);
  }
  LstmGrads grads{matmul(transpose2d(x_flat), da_all),
                  matmul(transpose2d(h_prev_flat), da_all), Tensor({H4})};
  for (int64_t r = 0; r < T * B; ++r)
    for (int64_t j = 0; j < H4; ++j) grads.d_bias[j] += da_all[r * H4 + j];
  return grads;
}

}  // namespace podscale
