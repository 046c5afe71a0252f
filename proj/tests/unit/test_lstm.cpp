#include <doctest.h>

#include <cmath>
#include <cstring>

#include "podscale/lstm.hpp"
#include "podscale/rng.hpp"

using namespace podscale;

namespace {

LstmParams random_params(Rng& rng, int64_t F, int64_t H) {
  LstmParams p;
  p.w_x = Tensor({F, 4 * H});
  p.w_h = Tensor({H, 4 * H});
  p.bias = Tensor({4 * H});
  for (float& v : p.w_x.data) v = static_cast<float>(rng.normal() * 0.4);
  for (float& v : p.w_h.data) v = static_cast<float>(rng.normal() * 0.4);
  for (float& v : p.bias.data) v = static_cast<float>(rng.normal() * 0.2);
  return p;
}

Tensor random_seq(Rng& rng, int64_t T, int64_t B, int64_t F) {
  Tensor x({T, B, F});
  for (float& v : x.data) v = static_cast<float>(rng.normal());
  return x;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(),
                     a.data.size() * sizeof(float)) == 0;
}

double seq_loss(const Tensor& h_seq, const Tensor& u) {
  double acc = 0.0;
  for (int64_t i = 0; i < h_seq.size(); ++i) acc += static_cast<double>(h_seq[i]) * u[i];
  return acc;
}

void check_close(const Tensor& got, const Tensor& want, double tol) {
  REQUIRE(got.shape == want.shape);
  for (int64_t i = 0; i < got.size(); ++i) {
    const double scale = std::max(1.0, std::fabs(static_cast<double>(want[i])));
    CHECK(std::fabs(static_cast<double>(got[i]) - want[i]) / scale < tol);
  }
}

}  // namespace

TEST_CASE("hoisted input projection is bitwise identical to the stepwise form") {
  Rng rng(89);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t T = 1 + rng.uniform_int(0, 5);
    const int64_t B = 1 + rng.uniform_int(0, 3);
    const int64_t F = 1 + rng.uniform_int(0, 4);
    const int64_t H = 1 + rng.uniform_int(0, 5);
    LstmParams p = random_params(rng, F, H);
    Tensor x = random_seq(rng, T, B, F);
    LstmState init = LstmState::zeros(B, H);
    auto std_fwd = lstm_forward_standard(x, p, init);
    auto hoist_fwd = lstm_forward_hoisted(x, p, init);
    CHECK(bitwise_equal(std_fwd.h_seq, hoist_fwd.h_seq));
    CHECK(bitwise_equal(std_fwd.final_state.h, hoist_fwd.final_state.h));
    CHECK(bitwise_equal(std_fwd.final_state.c, hoist_fwd.final_state.c));
    CHECK(std_fwd.elems_per_projection == B);
    CHECK(hoist_fwd.elems_per_projection == T * B);
  }
}

TEST_CASE("deferred weight-gradient contraction matches the stepwise backward") {
  Rng rng(97);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t T = 2 + rng.uniform_int(0, 4);
    const int64_t B = 1 + rng.uniform_int(0, 3);
    const int64_t F = 1 + rng.uniform_int(0, 4);
    const int64_t H = 1 + rng.uniform_int(0, 5);
    LstmParams p = random_params(rng, F, H);
    Tensor x = random_seq(rng, T, B, F);
    auto fwd = lstm_forward_standard(x, p, LstmState::zeros(B, H));
    Tensor u = random_seq(rng, T, B, H);
    LstmGrads a = lstm_backward_stepwise(fwd, p, u);
    LstmGrads b = lstm_backward_deferred(fwd, p, u);
    check_close(b.d_wx, a.d_wx, 1e-5);
    check_close(b.d_wh, a.d_wh, 1e-5);
    check_close(b.d_bias, a.d_bias, 1e-5);
  }
}

TEST_CASE("backward matches central finite differences") {
  Rng rng(101);
  const int64_t T = 4, B = 2, F = 3, H = 3;
  LstmParams p = random_params(rng, F, H);
  Tensor x = random_seq(rng, T, B, F);
  Tensor u = random_seq(rng, T, B, H);
  auto fwd = lstm_forward_standard(x, p, LstmState::zeros(B, H));
  LstmGrads g = lstm_backward_stepwise(fwd, p, u);

  const double h = 1e-3;
  auto numeric = [&](Tensor LstmParams::* field, int64_t i) {
    LstmParams pp = p, pm = p;
    (pp.*field)[i] += static_cast<float>(h);
    (pm.*field)[i] -= static_cast<float>(h);
    const double lp = seq_loss(
        lstm_forward_standard(x, pp, LstmState::zeros(B, H)).h_seq, u);
    const double lm = seq_loss(
        lstm_forward_standard(x, pm, LstmState::zeros(B, H)).h_seq, u);
    return (lp - lm) / (2.0 * h);
  };
  for (int64_t i = 0; i < p.w_x.size(); ++i) {
    const double n = numeric(&LstmParams::w_x, i);
    CHECK(std::fabs(g.d_wx[i] - n) / std::max(1.0, std::fabs(n)) < 1e-3);
  }
  for (int64_t i = 0; i < p.w_h.size(); ++i) {
    const double n = numeric(&LstmParams::w_h, i);
    CHECK(std::fabs(g.d_wh[i] - n) / std::max(1.0, std::fabs(n)) < 1e-3);
  }
  for (int64_t i = 0; i < p.bias.size(); ++i) {
    const double n = numeric(&LstmParams::bias, i);
    CHECK(std::fabs(g.d_bias[i] - n) / std::max(1.0, std::fabs(n)) < 1e-3);
  }
}

TEST_CASE("masked steps carry state through unchanged") {
  Rng rng(103);
  const int64_t T = 3, B = 2, F = 2, H = 3;
  LstmParams p = random_params(rng, F, H);
  Tensor x = random_seq(rng, T, B, F);
  // Batch row 1 is masked out at steps 1 and 2.
  std::vector<uint8_t> mask(static_cast<size_t>(T * B), 1);
  mask[1 * B + 1] = 0;
  mask[2 * B + 1] = 0;
  auto fwd = lstm_forward_standard(x, p, LstmState::zeros(B, H), mask);

  // Row 1 of the hidden state must stay frozen after step 0.
  for (int64_t j = 0; j < H; ++j) {
    CHECK(fwd.h_seq[(1 * B + 1) * H + j] == fwd.h_seq[(0 * B + 1) * H + j]);
    CHECK(fwd.h_seq[(2 * B + 1) * H + j] == fwd.h_seq[(0 * B + 1) * H + j]);
    CHECK(fwd.final_state.h[1 * H + j] == fwd.h_seq[(0 * B + 1) * H + j]);
  }
  // Row 0 keeps evolving.
  bool changed = false;
  for (int64_t j = 0; j < H; ++j) {
    changed |= fwd.h_seq[(1 * B + 0) * H + j] != fwd.h_seq[(0 * B + 0) * H + j];
  }
  CHECK(changed);
  // Hoisted variant agrees under masking too.
  auto hoist = lstm_forward_hoisted(x, p, LstmState::zeros(B, H), mask);
  CHECK(bitwise_equal(fwd.h_seq, hoist.h_seq));
}

TEST_CASE("masking leaves the gradients of real-step weights finite-difference consistent") {
  Rng rng(107);
  const int64_t T = 3, B = 2, F = 2, H = 2;
  LstmParams p = random_params(rng, F, H);
  Tensor x = random_seq(rng, T, B, F);
  std::vector<uint8_t> mask(static_cast<size_t>(T * B), 1);
  mask[2 * B + 0] = 0;
  Tensor u = random_seq(rng, T, B, H);
  auto fwd = lstm_forward_standard(x, p, LstmState::zeros(B, H), mask);
  LstmGrads g = lstm_backward_stepwise(fwd, p, u);
  const double h = 1e-3;
  for (int64_t i = 0; i < p.w_x.size(); ++i) {
    LstmParams pp = p, pm = p;
    pp.w_x[i] += static_cast<float>(h);
    pm.w_x[i] -= static_cast<float>(h);
    const double lp = seq_loss(
        lstm_forward_standard(x, pp, LstmState::zeros(B, H), mask).h_seq, u);
    const double lm = seq_loss(
        lstm_forward_standard(x, pm, LstmState::zeros(B, H), mask).h_seq, u);
    const double n = (lp - lm) / (2.0 * h);
    CHECK(std::fabs(g.d_wx[i] - n) / std::max(1.0, std::fabs(n)) < 2e-3);
  }
}

TEST_CASE("parameter validation rejects inconsistent shapes") {
  LstmParams p;
  p.w_x = Tensor({3, 8});
  p.w_h = Tensor({2, 8});
  p.bias = Tensor({8});
  CHECK_NOTHROW(p.validate());
  p.bias = Tensor({7});
  CHECK_THROWS(p.validate());
  p.bias = Tensor({8});
  p.w_h = Tensor({2, 12});
  CHECK_THROWS(p.validate());
}
