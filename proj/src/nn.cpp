// SPDX-License-Identifier: Apache-2.0
#include "glaff/nn.hpp"

#include <cmath>

#include "glaff/error.hpp"
#include "glaff/ops.hpp"

namespace glaff::nn {

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Linear Linear::create(std::size_t in, std::size_t out, Rng& rng) {
  if (in == 0 || out == 0) throw ConfigError("linear layer dimensions must be positive");
  Linear layer;
  layer.weight = Tensor::empty({in, out});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : layer.weight.mutable_data()) w = rng.uniform(-bound, bound);
  layer.bias = Tensor::zeros({out});
  layer.weight.set_requires_grad();
  layer.bias.set_requires_grad();
  return layer;
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::create(std::size_t dim) {
  LayerNorm ln;
  ln.gain = Tensor::full({dim}, 1.0);
  ln.bias = Tensor::zeros({dim});
  ln.gain.set_requires_grad();
  ln.bias.set_requires_grad();
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

Tensor dropout(const Tensor& x, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  if (!train || p == 0.0) return x;
  return glaff::dropout(x, p, rng.next_u64());
}

EncoderLayer EncoderLayer::create(std::size_t dim, std::size_t ff_dim, std::size_t heads, double dropout,
                                  Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("model dimension " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (ff_dim == 0) throw ConfigError("feed-forward dimension must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  EncoderLayer layer;
  layer.heads = heads;
  layer.dropout = dropout;
  layer.query = Linear::create(dim, dim, rng);
  layer.key = Linear::create(dim, dim, rng);
  layer.value = Linear::create(dim, dim, rng);
  layer.output = Linear::create(dim, dim, rng);
  layer.ff_in = Linear::create(dim, ff_dim, rng);
  layer.ff_out = Linear::create(ff_dim, dim, rng);
  layer.norm1 = LayerNorm::create(dim);
  layer.norm2 = LayerNorm::create(dim);
  return layer;
}

void EncoderLayer::collect(const std::string& prefix, ParameterList& out) const {
  query.collect(prefix + ".attn.query", out);
  key.collect(prefix + ".attn.key", out);
  value.collect(prefix + ".attn.value", out);
  output.collect(prefix + ".attn.output", out);
  ff_in.collect(prefix + ".ffn.in", out);
  ff_out.collect(prefix + ".ffn.out", out);
  norm1.collect(prefix + ".norm1", out);
  norm2.collect(prefix + ".norm2", out);
}

std::size_t encoder_layer_parameter_count(std::size_t dim, std::size_t ff_dim) {
  return 4 * (dim * dim + dim) + (dim * ff_dim + ff_dim) + (ff_dim * dim + dim) + 4 * dim;
}

namespace {

// [b x n x d] -> [b x heads x n x d/heads]
Tensor split_heads(const Tensor& x, std::size_t heads) {
  const auto& s = x.shape();
  return permute(reshape(x, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const auto& s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

}  // namespace

AttentionResult mhsa_forward(const EncoderLayer& layer, const Tensor& h, bool /*train*/) {
  const std::size_t d = layer.model_dim();
  if (h.dim() != 3 || h.shape()[2] != d) {
    throw DimensionError("attention input " + shape_str(h.shape()) + " does not end in model dimension " +
                         std::to_string(d));
  }
  if (layer.heads == 0 || d % layer.heads != 0) throw ConfigError("model dimension not divisible by heads");
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d / layer.heads));
  Tensor q = scale(split_heads(layer.query.forward(h), layer.heads), scale_factor);
  Tensor k = split_heads(layer.key.forward(h), layer.heads);
  Tensor v = split_heads(layer.value.forward(h), layer.heads);
  Tensor weights = softmax_lastdim(matmul_nt(q, k));
  Tensor context = merge_heads(matmul(weights, v));
  return {layer.output.forward(context), weights};
}

Tensor encoder_layer_forward(const EncoderLayer& layer, const Tensor& h, bool train, Rng& rng) {
  const double p = layer.dropout;
  Tensor attended = mhsa_forward(layer, h, train).output;
  Tensor u = layer.norm1.forward(add(h, dropout(attended, p, train, rng)));
  Tensor hidden = dropout(gelu(layer.ff_in.forward(u)), p, train, rng);
  Tensor ff = layer.ff_out.forward(hidden);
  return layer.norm2.forward(add(u, dropout(ff, p, train, rng)));
}

Adam::Adam(std::vector<Tensor> params, Options options) : params_(std::move(params)), options_(options) {
  if (!(options_.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::apply(std::size_t index, std::span<const double> grad, double c1, double c2) {
  auto theta = params_[index].mutable_data();
  auto& m = m_[index];
  auto& v = v_[index];
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    theta[i] -= options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
  }
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    if (g.empty()) continue;
    apply(i, g, c1, c2);
  }
}

void Adam::step(std::span<const Tensor> grads) {
  if (grads.size() != params_.size()) {
    throw DimensionError("adam: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params_.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].shape() != params_[i].shape()) {
      throw DimensionError("adam: gradient " + shape_str(grads[i].shape()) + " does not match parameter " +
                           shape_str(params_[i].shape()));
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) apply(i, grads[i].data(), c1, c2);
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace glaff::nn
