#include "podscale/models.hpp"

#include <cmath>
#include <stdexcept>

#include "podscale/rng.hpp"

namespace podscale {

double softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels, int64_t offset,
                             int64_t count, Tensor& d_logits) {
  const int64_t N = logits.shape[0], C = logits.shape[1];
  if (count != N) throw std::invalid_argument("label count mismatch");
  if (C == 0) throw std::invalid_argument("zero classes");
  d_logits = Tensor({N, C});
  double loss = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const int y = labels[static_cast<size_t>(offset + n)];
    if (y < 0 || y >= C) throw std::invalid_argument("label out of range");
    double mx = logits[n * C];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(logits[n * C + c]));
    double z = 0.0;
    for (int64_t c = 0; c < C; ++c) z += std::exp(static_cast<double>(logits[n * C + c]) - mx);
    loss += -(static_cast<double>(logits[n * C + y]) - mx - std::log(z));
    for (int64_t c = 0; c < C; ++c) {
      const double p = std::exp(static_cast<double>(logits[n * C + c]) - mx) / z;
      d_logits[n * C + c] = static_cast<float>(p - (c == y ? 1.0 : 0.0));
    }
  }
  return loss;
}

GradientSet Model::zero_grads() const {
  GradientSet g;
  for (const auto& nt : weights_) {
    g.tensors.push_back({nt.name, Tensor(nt.tensor.shape)});
  }
  return g;
}

namespace {

Tensor randn(std::vector<int64_t> shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(rng.normal() * scale);
  return t;
}

}  // namespace

CnnModel::CnnModel(const Config& cfg, uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  const int64_t fan_in = 9 * cfg.in_channels;
  weights_.push_back({"conv_kernel",
                      randn({3, 3, cfg.in_channels, cfg.conv_channels}, rng,
                            std::sqrt(2.0 / static_cast<double>(fan_in)))});
  Tensor gamma({cfg.conv_channels});
  for (float& v : gamma.data) v = 1.0f;
  weights_.push_back({"bn_gamma", gamma});
  weights_.push_back({"bn_beta", Tensor({cfg.conv_channels})});
  const int64_t flat = cfg.height * cfg.width * cfg.conv_channels;
  weights_.push_back({"dense_w",
                      randn({flat, cfg.classes}, rng,
                            std::sqrt(1.0 / static_cast<double>(flat)))});
  weights_.push_back({"dense_b", Tensor({cfg.classes})});
}

struct CnnModel::Forward {
  Tensor conv_in;      // possibly bf16-rounded input
  Tensor conv_kernel;  // possibly bf16-rounded kernel
  Tensor conv_out;     // [N,H,W,Cc]
  std::vector<double> mean, var, inv_std;  // per channel
  Tensor xhat;         // normalized conv_out
  Tensor relu_in;      // gamma*xhat + beta
  Tensor act;          // [N, H*W*Cc] flattened relu output
  Tensor logits;       // [N, classes]
};

CnnModel::Forward CnnModel::forward(const Tensor& inputs) const {
  const auto& kernel = weights_[0].tensor;
  const auto& gamma = weights_[1].tensor;
  const auto& beta = weights_[2].tensor;
  const auto& dense_w = weights_[3].tensor;
  const auto& dense_b = weights_[4].tensor;

  Forward f;
  f.conv_in = cfg_.conv_bf16 ? to_bf16(inputs) : inputs;
  f.conv_kernel = cfg_.conv_bf16 ? to_bf16(kernel) : kernel;
  ConvParams cp;
  cp.kernel_size = 3;
  cp.stride = 1;
  cp.padding = Padding::SAME;
  cp.in_channels = static_cast<int>(cfg_.in_channels);
  cp.out_channels = static_cast<int>(cfg_.conv_channels);
  f.conv_out = conv2d(f.conv_in, f.conv_kernel, cp);

  const int64_t N = inputs.shape[0];
  const int64_t Cc = cfg_.conv_channels;
  const int64_t M = N * cfg_.height * cfg_.width;  // elements per channel
  f.mean.assign(static_cast<size_t>(Cc), 0.0);
  f.var.assign(static_cast<size_t>(Cc), 0.0);
  f.inv_std.assign(static_cast<size_t>(Cc), 0.0);
  for (int64_t c = 0; c < Cc; ++c) {
    double sum = 0.0, sumsq = 0.0;
    for (int64_t e = 0; e < M; ++e) {
      const double v = f.conv_out[e * Cc + c];
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / static_cast<double>(M);
    double var = sumsq / static_cast<double>(M) - mean * mean;
    if (var < 0.0) var = 0.0;
    f.mean[static_cast<size_t>(c)] = mean;
    f.var[static_cast<size_t>(c)] = var;
    f.inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var + cfg_.bn_epsilon);
  }

  f.xhat = Tensor(f.conv_out.shape);
  f.relu_in = Tensor(f.conv_out.shape);
  const int64_t flat = cfg_.height * cfg_.width * Cc;
  f.act = Tensor({N, flat});
  for (int64_t e = 0; e < M; ++e) {
    for (int64_t c = 0; c < Cc; ++c) {
      const size_t idx = static_cast<size_t>(e * Cc + c);
      const double xh =
          (f.conv_out.data[idx] - f.mean[static_cast<size_t>(c)]) *
          f.inv_std[static_cast<size_t>(c)];
      f.xhat.data[idx] = static_cast<float>(xh);
      const float y = gamma[c] * f.xhat.data[idx] + beta[c];
      f.relu_in.data[idx] = y;
      f.act.data[idx] = y > 0.0f ? y : 0.0f;
    }
  }
  Tensor logits = matmul(f.act, dense_w);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < cfg_.classes; ++c) logits[n * cfg_.classes + c] += dense_b[c];
  f.logits = std::move(logits);
  return f;
}

Tensor CnnModel::logits(const Tensor& inputs) const {
  return forward(inputs).logits;
}

double CnnModel::loss_and_grad(const Tensor& inputs,
                               const std::vector<int>& labels, int64_t offset,
                               GradientSet& grads) const {
  const auto& gamma = weights_[1].tensor;
  const auto& dense_w = weights_[3].tensor;

  Forward f = forward(inputs);
  const int64_t N = inputs.shape[0];
  const int64_t Cc = cfg_.conv_channels;
  const int64_t M = N * cfg_.height * cfg_.width;
  const int64_t flat = cfg_.height * cfg_.width * Cc;

  Tensor d_logits;
  const double loss = softmax_cross_entropy(f.logits, labels, offset, N, d_logits);

  Tensor& d_kernel = grads.tensors[0].tensor;
  Tensor& d_gamma = grads.tensors[1].tensor;
  Tensor& d_beta = grads.tensors[2].tensor;
  Tensor& d_dense_w = grads.tensors[3].tensor;
  Tensor& d_dense_b = grads.tensors[4].tensor;

  // Dense layer.
  {
    Tensor act_t({flat, N});
    for (int64_t n = 0; n < N; ++n)
      for (int64_t d = 0; d < flat; ++d) act_t[d * N + n] = f.act[n * flat + d];
    Tensor dw = matmul(act_t, d_logits);
    for (int64_t e = 0; e < flat * cfg_.classes; ++e) d_dense_w[e] += dw[e];
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < cfg_.classes; ++c) d_dense_b[c] += d_logits[n * cfg_.classes + c];
  }
  Tensor dense_w_t({static_cast<int64_t>(cfg_.classes), flat});
  for (int64_t d = 0; d < flat; ++d)
    for (int64_t c = 0; c < cfg_.classes; ++c)
      dense_w_t[c * flat + d] = dense_w[d * cfg_.classes + c];
  Tensor d_act = matmul(d_logits, dense_w_t);  // [N, flat]

  // ReLU.
  Tensor dy(f.relu_in.shape);
  for (int64_t e = 0; e < M * Cc; ++e) {
    dy[e] = f.relu_in[e] > 0.0f ? d_act[e] : 0.0f;
  }

  // Batch norm backward per channel, double reductions.
  Tensor d_conv(f.conv_out.shape);
  for (int64_t c = 0; c < Cc; ++c) {
    const double inv = f.inv_std[static_cast<size_t>(c)];
    double dgamma = 0.0, dbeta = 0.0, dxhat_sum = 0.0, dxhat_xhat_sum = 0.0;
    for (int64_t e = 0; e < M; ++e) {
      const size_t idx = static_cast<size_t>(e * Cc + c);
      const double dyv = dy.data[idx];
      const double xh = f.xhat.data[idx];
      dgamma += dyv * xh;
      dbeta += dyv;
      const double dxh = dyv * gamma[c];
      dxhat_sum += dxh;
      dxhat_xhat_sum += dxh * xh;
    }
    d_gamma[c] += static_cast<float>(dgamma);
    d_beta[c] += static_cast<float>(dbeta);
    const double Md = static_cast<double>(M);
    // dx = inv/M * (M*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
    for (int64_t e = 0; e < M; ++e) {
      const size_t idx = static_cast<size_t>(e * Cc + c);
      const double dxh = static_cast<double>(dy.data[idx]) * gamma[c];
      const double xh = f.xhat.data[idx];
      d_conv.data[idx] = static_cast<float>(
          inv / Md * (Md * dxh - dxhat_sum - xh * dxhat_xhat_sum));
    }
  }

  // Conv kernel gradient (SAME, stride 1, K=3).
  {
    const int64_t H = cfg_.height, W = cfg_.width, Cin = cfg_.in_channels;
    const int64_t K = 3, off = -1;
    for (int64_t ky = 0; ky < K; ++ky) {
      for (int64_t kx = 0; kx < K; ++kx) {
        for (int64_t ci = 0; ci < Cin; ++ci) {
          for (int64_t co = 0; co < Cc; ++co) {
            double acc = 0.0;
            for (int64_t n = 0; n < N; ++n) {
              for (int64_t ho = 0; ho < H; ++ho) {
                const int64_t hi = ho + off + ky;
                if (hi < 0 || hi >= H) continue;
                for (int64_t wo = 0; wo < W; ++wo) {
                  const int64_t wi = wo + off + kx;
                  if (wi < 0 || wi >= W) continue;
                  acc += static_cast<double>(f.conv_in.data[static_cast<size_t>(
                             ((n * H + hi) * W + wi) * Cin + ci)]) *
                         d_conv.data[static_cast<size_t>(
                             ((n * H + ho) * W + wo) * Cc + co)];
                }
              }
            }
            d_kernel[((ky * K + kx) * Cin + ci) * Cc + co] +=
                static_cast<float>(acc);
          }
        }
      }
    }
  }
  return loss;
}

LstmClassifier::LstmClassifier(const Config& cfg, uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  const int64_t H4 = 4 * cfg.hidden;
  weights_.push_back({"lstm_wx",
                      randn({cfg.vocab, H4}, rng,
                            std::sqrt(1.0 / static_cast<double>(cfg.vocab)))});
  weights_.push_back({"lstm_wh",
                      randn({cfg.hidden, H4}, rng,
                            std::sqrt(1.0 / static_cast<double>(cfg.hidden)))});
  weights_.push_back({"lstm_bias", Tensor({H4})});
  weights_.push_back({"dense_w",
                      randn({cfg.hidden, cfg.classes}, rng,
                            std::sqrt(1.0 / static_cast<double>(cfg.hidden)))});
  weights_.push_back({"dense_b", Tensor({cfg.classes})});
}

Tensor LstmClassifier::one_hot_seq(const Tensor& inputs) const {
  if (inputs.shape.size() != 2 || inputs.shape[1] != cfg_.seq_len) {
    throw std::invalid_argument("LstmClassifier expects [B,T] token ids");
  }
  const int64_t B = inputs.shape[0], T = cfg_.seq_len, V = cfg_.vocab;
  Tensor x({T, B, V});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t t = 0; t < T; ++t) {
      const int tok = static_cast<int>(inputs[b * T + t]);
      if (tok < 0 || tok >= V) throw std::invalid_argument("token id out of range");
      x[(t * B + b) * V + tok] = 1.0f;
    }
  }
  return x;
}

LstmParams LstmClassifier::current_params() const {
  return {weights_[0].tensor, weights_[1].tensor, weights_[2].tensor};
}

Tensor LstmClassifier::logits(const Tensor& inputs) const {
  const int64_t B = inputs.shape[0];
  LstmForwardResult fwd = lstm_forward_hoisted(
      one_hot_seq(inputs), current_params(), LstmState::zeros(B, cfg_.hidden));
  Tensor logits = matmul(fwd.final_state.h, weights_[3].tensor);
  const auto& bias = weights_[4].tensor;
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < cfg_.classes; ++c) logits[n * cfg_.classes + c] += bias[c];
  return logits;
}

double LstmClassifier::loss_and_grad(const Tensor& inputs,
                                     const std::vector<int>& labels,
                                     int64_t offset, GradientSet& grads) const {
  const int64_t B = inputs.shape[0], H = cfg_.hidden, T = cfg_.seq_len;
  LstmParams params = current_params();
  LstmForwardResult fwd = lstm_forward_hoisted(one_hot_seq(inputs), params,
                                               LstmState::zeros(B, H));
  Tensor logits = matmul(fwd.final_state.h, weights_[3].tensor);
  const auto& bias = weights_[4].tensor;
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < cfg_.classes; ++c) logits[n * cfg_.classes + c] += bias[c];

  Tensor d_logits;
  const double loss = softmax_cross_entropy(logits, labels, offset, B, d_logits);

  // Dense layer on the final hidden state.
  const auto& dense_w = weights_[3].tensor;
  Tensor h_t({H, B});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t h = 0; h < H; ++h) h_t[h * B + n] = fwd.final_state.h[n * H + h];
  Tensor dw = matmul(h_t, d_logits);
  for (int64_t e = 0; e < H * cfg_.classes; ++e) grads.tensors[3].tensor[e] += dw[e];
  for (int64_t n = 0; n < B; ++n)
    for (int64_t c = 0; c < cfg_.classes; ++c)
      grads.tensors[4].tensor[c] += d_logits[n * cfg_.classes + c];

  Tensor dense_w_t({static_cast<int64_t>(cfg_.classes), H});
  for (int64_t h = 0; h < H; ++h)
    for (int64_t c = 0; c < cfg_.classes; ++c)
      dense_w_t[c * H + h] = dense_w[h * cfg_.classes + c];
  Tensor d_last = matmul(d_logits, dense_w_t);  // [B,H]

  Tensor upstream({T, B, H});
  std::copy(d_last.data.begin(), d_last.data.end(),
            upstream.data.begin() + (T - 1) * B * H);
  LstmGrads lg = lstm_backward_deferred(fwd, params, upstream);
  for (int64_t e = 0; e < lg.d_wx.size(); ++e) grads.tensors[0].tensor[e] += lg.d_wx[e];
  for (int64_t e = 0; e < lg.d_wh.size(); ++e) grads.tensors[1].tensor[e] += lg.d_wh[e];
  for (int64_t e = 0; e < lg.d_bias.size(); ++e) grads.tensors[2].tensor[e] += lg.d_bias[e];
  return loss;
}

}  // namespace podscale
