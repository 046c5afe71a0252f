#pragma once

#include <cstdint>
#include <vector>

#include "podscale/lstm.hpp"
#include "podscale/torus.hpp"

namespace podscale {

// Sum-reduced softmax cross-entropy. Returns the loss sum over rows and
// writes dL/dlogits (softmax - onehot, no batch scaling) into d_logits.
double softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels, int64_t offset,
                             int64_t count, Tensor& d_logits);

// Fixed toy model family for the training loop. Inputs are a single tensor
// whose first extent is the batch; gradients are sum-reduced so data-parallel
// partial gradients add exactly.
class Model {
 public:
  virtual ~Model() = default;
  std::vector<NamedTensor>& weights() { return weights_; }
  const std::vector<NamedTensor>& weights() const { return weights_; }

  virtual Tensor logits(const Tensor& inputs) const = 0;
  virtual double loss_and_grad(const Tensor& inputs,
                               const std::vector<int>& labels, int64_t offset,
                               GradientSet& grads) const = 0;

  GradientSet zero_grads() const;

 protected:
  std::vector<NamedTensor> weights_;
};

// conv K=3 SAME -> per-channel batch norm -> relu -> dense -> softmax.
// Backward implemented by hand; loss and batch norm stay in f32/f64 while
// the convolution can optionally run on bf16-rounded inputs and weights.
class CnnModel : public Model {
 public:
  struct Config {
    int64_t height = 8, width = 8, in_channels = 1;
    int64_t conv_channels = 4;
    int classes = 4;
    bool conv_bf16 = false;
    double bn_epsilon = 1e-5;
  };

  CnnModel(const Config& cfg, uint64_t seed);

  Tensor logits(const Tensor& inputs) const override;
  double loss_and_grad(const Tensor& inputs, const std::vector<int>& labels,
                       int64_t offset, GradientSet& grads) const override;

  const Config& config() const { return cfg_; }

 private:
  struct Forward;
  Forward forward(const Tensor& inputs) const;
  Config cfg_;
};

// Token sequence -> one-hot features -> 1-layer LSTM (hoisted projection) ->
// dense on the final hidden state -> softmax.
class LstmClassifier : public Model {
 public:
  struct Config {
    int64_t seq_len = 8;
    int vocab = 16;
    int64_t hidden = 8;
    int classes = 4;
  };

  LstmClassifier(const Config& cfg, uint64_t seed);

  Tensor logits(const Tensor& inputs) const override;
  double loss_and_grad(const Tensor& inputs, const std::vector<int>& labels,
                       int64_t offset, GradientSet& grads) const override;

  const Config& config() const { return cfg_; }

 private:
  Tensor one_hot_seq(const Tensor& inputs) const;  // [B,T] ids -> [T,B,V]
  LstmParams current_params() const;
  Config cfg_;
};

}  // namespace podscale
