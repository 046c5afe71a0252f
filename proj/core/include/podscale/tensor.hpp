#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace podscale {

enum class DType { F32, BF16 };

// Round an f32 to the nearest bfloat16-representable value
// (round-to-nearest-even on the truncated 16 mantissa bits).
// NaN maps to a bf16 quiet NaN, +/-inf are preserved. Subnormals are
// rounded like any other value, no flush-to-zero.
float bf16_round(float x);

// Dense n-dimensional row-major f32 array. BF16 tensors store values already
// rounded to bf16-representable floats, so re-rounding is a no-op.
struct Tensor {
  std::vector<int64_t> shape;
  DType dtype = DType::F32;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, DType dt = DType::F32);

  static Tensor zeros(std::vector<int64_t> s, DType dt = DType::F32);
  static Tensor from_values(std::vector<int64_t> s, std::vector<float> values,
                            DType dt = DType::F32);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t extent(size_t axis) const { return shape.at(axis); }

  float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }
};

int64_t shape_product(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

// Elementwise bf16 rounding; result is tagged BF16.
Tensor to_bf16(const Tensor& t);

enum class Padding { SAME, VALID };

struct ConvParams {
  int kernel_size = 1;  // K, odd
  int stride = 1;
  Padding padding = Padding::SAME;
  int in_channels = 1;
  int out_channels = 1;
};

// Output spatial extent for one axis under the standard conv arithmetic.
int64_t conv_out_extent(int64_t in, const ConvParams& params);

// NHWC cross-correlation, f32 accumulation regardless of input dtype.
// Accumulation order is fixed: ky, kx, cin ascending, out-of-range taps
// contribute an explicit 0.0f term (never skipped) so that sharded execution
// over zero-padded halos reproduces the identical float-add sequence.
Tensor conv2d(const Tensor& input, const Tensor& kernel,
              const ConvParams& params);

// [M,K]x[K,N] with fixed ascending-k accumulation in f32; bitwise
// deterministic across invocations.
Tensor matmul(const Tensor& a, const Tensor& b);

struct BatchStats {
  Tensor mean;  // [F]
  Tensor var;   // [F], biased
  int64_t count = 0;
};

// Per-feature mean and biased variance over axis 0 of x: [N,F].
// Accumulated in double via (sum, sum-of-squares) so partial stats from
// disjoint batches can be merged exactly.
BatchStats batch_stats(const Tensor& x);

// Fixture wire format: u64 extent count, u64 extents, raw little-endian f32.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

}  // namespace podscale
