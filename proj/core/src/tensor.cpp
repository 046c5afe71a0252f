#include "podscale/tensor.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace podscale {

float bf16_round(float x) {
  uint32_t bits;
  std::memcpy(&bits, &x, sizeof(bits));
  if (std::isnan(x)) {
    uint32_t qnan = (bits & 0x80000000u) | 0x7FC00000u;
    float out;
    std::memcpy(&out, &qnan, sizeof(out));
    return out;
  }
  uint32_t rounding_bias = 0x7FFFu + ((bits >> 16) & 1u);
  bits += rounding_bias;
  bits &= 0xFFFF0000u;
  float out;
  std::memcpy(&out, &bits, sizeof(out));
  return out;
}

int64_t shape_product(const std::vector<int64_t>& shape) {
  int64_t p = 1;
  for (int64_t e : shape) p *= e;
  return p;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> s, DType dt)
    : shape(std::move(s)), dtype(dt) {
  for (int64_t e : shape) {
    if (e < 0) throw std::invalid_argument("negative tensor extent");
  }
  data.assign(static_cast<size_t>(shape_product(shape)), 0.0f);
}

Tensor Tensor::zeros(std::vector<int64_t> s, DType dt) {
  return Tensor(std::move(s), dt);
}

Tensor Tensor::from_values(std::vector<int64_t> s, std::vector<float> values,
                           DType dt) {
  Tensor t;
  t.shape = std::move(s);
  t.dtype = dt;
  if (shape_product(t.shape) != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("value count does not match shape " +
                                shape_to_string(t.shape));
  }
  t.data = std::move(values);
  return t;
}

Tensor to_bf16(const Tensor& t) {
  Tensor out = t;
  out.dtype = DType::BF16;
  for (float& v : out.data) v = bf16_round(v);
  return out;
}

int64_t conv_out_extent(int64_t in, const ConvParams& params) {
  if (params.padding == Padding::SAME) {
    return (in + params.stride - 1) / params.stride;
  }
  return (in - params.kernel_size) / params.stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel,
              const ConvParams& params) {
  if (input.shape.size() != 4) {
    throw std::invalid_argument("conv2d input must be NHWC, got " +
                                shape_to_string(input.shape));
  }
  if (kernel.shape.size() != 4) {
    throw std::invalid_argument("conv2d kernel must be [K,K,Cin,Cout], got " +
                                shape_to_string(kernel.shape));
  }
  const int64_t N = input.shape[0], H = input.shape[1], W = input.shape[2],
                Cin = input.shape[3];
  const int64_t K = params.kernel_size;
  if (K < 1 || K % 2 == 0) throw std::invalid_argument("kernel_size must be positive odd");
  if (kernel.shape[0] != K || kernel.shape[1] != K) {
    throw std::invalid_argument("kernel spatial extent mismatch (dim 0/1): expected " +
                                std::to_string(K));
  }
  if (kernel.shape[2] != Cin) {
    throw std::invalid_argument("kernel in_channels (dim 2) " +
                                std::to_string(kernel.shape[2]) +
                                " != input channels " + std::to_string(Cin));
  }
  const int64_t Cout = kernel.shape[3];
  if (params.in_channels != Cin || params.out_channels != Cout) {
    throw std::invalid_argument("ConvParams channel fields disagree with tensor shapes");
  }
  const int64_t Ho = conv_out_extent(H, params);
  const int64_t Wo = conv_out_extent(W, params);
  // SAME anchors output o at input o*stride - K/2.
  const int64_t off = params.padding == Padding::SAME ? -(K / 2) : 0;

  Tensor out({N, Ho, Wo, Cout});
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t ho = 0; ho < Ho; ++ho) {
      for (int64_t wo = 0; wo < Wo; ++wo) {
        for (int64_t co = 0; co < Cout; ++co) {
          float acc = 0.0f;
          for (int64_t ky = 0; ky < K; ++ky) {
            const int64_t hi = ho * params.stride + off + ky;
            for (int64_t kx = 0; kx < K; ++kx) {
              const int64_t wi = wo * params.stride + off + kx;
              const bool in_bounds = hi >= 0 && hi < H && wi >= 0 && wi < W;
              for (int64_t ci = 0; ci < Cin; ++ci) {
                const float v = in_bounds
                                    ? input.data[static_cast<size_t>(
                                          ((n * H + hi) * W + wi) * Cin + ci)]
                                    : 0.0f;
                const float k = kernel.data[static_cast<size_t>(
                    ((ky * K + kx) * Cin + ci) * Cout + co)];
                acc += v * k;
              }
            }
          }
          out.data[static_cast<size_t>(((n * Ho + ho) * Wo + wo) * Cout + co)] =
              acc;
        }
      }
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2) {
    throw std::invalid_argument("matmul expects rank-2 tensors");
  }
  const int64_t M = a.shape[0], K = a.shape[1];
  if (b.shape[0] != K) {
    throw std::invalid_argument("matmul inner extent mismatch: " +
                                std::to_string(K) + " vs " +
                                std::to_string(b.shape[0]));
  }
  const int64_t N = b.shape[1];
  Tensor out({M, N});
  for (int64_t i = 0; i < M; ++i) {
    for (int64_t j = 0; j < N; ++j) {
      float acc = 0.0f;
      for (int64_t k = 0; k < K; ++k) {
        acc += a.data[static_cast<size_t>(i * K + k)] *
               b.data[static_cast<size_t>(k * N + j)];
      }
      out.data[static_cast<size_t>(i * N + j)] = acc;
    }
  }
  return out;
}

BatchStats batch_stats(const Tensor& x) {
  if (x.shape.size() != 2) throw std::invalid_argument("batch_stats expects [N,F]");
  const int64_t N = x.shape[0], F = x.shape[1];
  if (N == 0) throw std::invalid_argument("batch_stats: empty batch");
  BatchStats s;
  s.mean = Tensor({F});
  s.var = Tensor({F});
  s.count = N;
  for (int64_t f = 0; f < F; ++f) {
    double sum = 0.0, sumsq = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      double v = x.data[static_cast<size_t>(n * F + f)];
      sum += v;
      sumsq += v * v;
    }
    double mean = sum / static_cast<double>(N);
    double var = sumsq / static_cast<double>(N) - mean * mean;
    if (var < 0.0) var = 0.0;
    s.mean.data[static_cast<size_t>(f)] = static_cast<float>(mean);
    s.var.data[static_cast<size_t>(f)] = static_cast<float>(var);
  }
  return s;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  uint64_t ndim = t.shape.size();
  os.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
  for (int64_t e : t.shape) {
    uint64_t u = static_cast<uint64_t>(e);
    os.write(reinterpret_cast<const char*>(&u), sizeof(u));
  }
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

Tensor read_tensor(std::istream& is) {
  uint64_t ndim = 0;
  is.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
  if (!is) throw std::runtime_error("tensor header truncated");
  std::vector<int64_t> shape(ndim);
  for (uint64_t i = 0; i < ndim; ++i) {
    uint64_t u = 0;
    is.read(reinterpret_cast<char*>(&u), sizeof(u));
    if (!is) throw std::runtime_error("tensor shape truncated");
    shape[i] = static_cast<int64_t>(u);
  }
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!is) throw std::runtime_error("tensor payload truncated");
  return t;
}

}  // namespace podscale
