#pragma once

#include <cstdint>
#include <vector>

#include "podscale/tensor.hpp"

namespace podscale {

// Gate order fixed as (i, f, g, o) along the 4H axis.
struct LstmParams {
  Tensor w_x;   // [F_in, 4H]
  Tensor w_h;   // [H, 4H]
  Tensor bias;  // [4H]

  int64_t hidden() const { return w_h.shape.at(0); }
  int64_t input_features() const { return w_x.shape.at(0); }
  void validate() const;
};

struct LstmState {
  Tensor h;  // [B,H]
  Tensor c;  // [B,H]

  static LstmState zeros(int64_t batch, int64_t hidden);
};

// Forward activations cached for the backward pass.
struct LstmCache {
  Tensor x_seq;                    // [T,B,F]
  std::vector<Tensor> gates_pre;   // per step [B,4H] pre-activation
  std::vector<Tensor> h_prev;      // per step [B,H]
  std::vector<Tensor> c_prev;      // per step [B,H]
  std::vector<Tensor> c;           // per step [B,H]
  std::vector<uint8_t> mask;       // [T*B], 1 = real step; empty = all real
};

struct LstmForwardResult {
  Tensor h_seq;  // [T,B,H]
  LstmState final_state;
  LstmCache cache;
  // Elements fed through the input projection per matmul call; the hoisted
  // variant processes T*B at once, the standard variant B per step.
  int64_t elems_per_projection = 0;
};

// Per step: gates = (x_t*W_x + b) + h_{t-1}*W_h, then the usual
// sigmoid/sigmoid/tanh/sigmoid cell. mask (optional, [T*B]) marks real
// steps; masked steps carry h and c through unchanged.
LstmForwardResult lstm_forward_standard(const Tensor& x_seq,
                                        const LstmParams& params,
                                        const LstmState& init,
                                        const std::vector<uint8_t>& mask = {});

// Input projection for all T steps hoisted out of the loop as one batched
// [T*B, F] matmul; the loop only projects the hidden state. Identical
// accumulation order makes the outputs bitwise equal to the standard form.
LstmForwardResult lstm_forward_hoisted(const Tensor& x_seq,
                                       const LstmParams& params,
                                       const LstmState& init,
                                       const std::vector<uint8_t>& mask = {});

struct LstmGrads {
  Tensor d_wx;    // [F,4H]
  Tensor d_wh;    // [H,4H]
  Tensor d_bias;  // [4H]
};

// Step-wise BPTT: the weight-gradient contraction is accumulated inside the
// loop, one matmul per step.
LstmGrads lstm_backward_stepwise(const LstmForwardResult& fwd,
                                 const LstmParams& params,
                                 const Tensor& upstream_dh_seq);

// Deferred variant: the loop only stores per-step local gate gradients to a
// T-length array; the contraction over all steps happens once after the loop
// as a single batched matmul.
LstmGrads lstm_backward_deferred(const LstmForwardResult& fwd,
                                 const LstmParams& params,
                                 const Tensor& upstream_dh_seq);

}  // namespace podscale
