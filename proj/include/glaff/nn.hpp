// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "glaff/random.hpp"
#include "glaff/tensor.hpp"

namespace glaff::nn {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

std::size_t parameter_count(const ParameterList& params);

/// y = x W + b with W stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  /// Weights uniform in +-1/sqrt(in), zero bias.
  static Linear create(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  static LayerNorm create(std::size_t dim);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Inverted dropout: in training each element is zeroed with probability
/// `p` and survivors are scaled by 1/(1-p). Identity in evaluation or
/// when p == 0. The mask is drawn from `rng` in element order.
Tensor dropout(const Tensor& x, double p, bool train, Rng& rng);

/// Post-norm transformer encoder block with multi-head self-attention.
struct EncoderLayer {
  std::size_t heads = 1;
  double dropout = 0.0;
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  Linear ff_in;
  Linear ff_out;
  LayerNorm norm1;
  LayerNorm norm2;

  static EncoderLayer create(std::size_t dim, std::size_t ff_dim, std::size_t heads, double dropout, Rng& rng);

  std::size_t model_dim() const { return query.in_features(); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Closed-form parameter count of one EncoderLayer.
std::size_t encoder_layer_parameter_count(std::size_t dim, std::size_t ff_dim);

struct AttentionResult {
  Tensor output;   // [b x n x d]
  Tensor weights;  // [b x heads x n x n], rows sum to one
};

/// Scaled dot-product self-attention over all positions (no mask).
AttentionResult mhsa_forward(const EncoderLayer& layer, const Tensor& h, bool train);

/// u = LN1(h + Drop(MSA(h))); out = LN2(u + Drop(FFN(u))) with
/// FFN = Linear -> GELU -> Drop -> Linear.
Tensor encoder_layer_forward(const EncoderLayer& layer, const Tensor& h, bool train, Rng& rng);

/// Adam with bias correction.
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::vector<Tensor> params, Options options);

  /// Updates every parameter from its accumulated gradient.
  void step();
  /// Updates from explicit gradients aligned with the parameter list.
  void step(std::span<const Tensor> grads);
  void zero_grad();

  std::size_t steps() const noexcept { return steps_; }
  const Options& options() const noexcept { return options_; }

 private:
  void apply(std::size_t index, std::span<const double> grad, double c1, double c2);

  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  Options options_;
  std::size_t steps_ = 0;
};

}  // namespace glaff::nn
