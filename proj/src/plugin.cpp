// SPDX-License-Identifier: Apache-2.0
#include "glaff/plugin.hpp"

#include <cmath>

#include "glaff/error.hpp"
#include "glaff/ops.hpp"

namespace glaff::plugin {

void GlaffConfig::validate() const {
  if (dim == 0) throw ConfigError("glaff.dim must be positive");
  if (ff_dim == 0) throw ConfigError("glaff.ff_dim must be positive");
  if (layers == 0) throw ConfigError("glaff.layers must be positive");
  if (!ablations.no_attention && (heads == 0 || dim % heads != 0)) {
    throw ConfigError("glaff.dim " + std::to_string(dim) + " is not divisible by glaff.heads " +
                      std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("glaff.dropout must lie in [0, 1)");
  if (!(quantile > 0.5 && quantile < 1.0)) {
    throw ConfigError("glaff.quantile must lie in (0.5, 1), got " + std::to_string(quantile));
  }
}

MlpBlock MlpBlock::create(std::size_t dim, std::size_t width, double dropout, Rng& rng) {
  MlpBlock block;
  block.up = nn::Linear::create(dim, width, rng);
  block.down = nn::Linear::create(width, dim, rng);
  block.norm = nn::LayerNorm::create(dim);
  block.dropout = dropout;
  return block;
}

void MlpBlock::collect(const std::string& prefix, nn::ParameterList& out) const {
  up.collect(prefix + ".mlp.up", out);
  down.collect(prefix + ".mlp.down", out);
  norm.collect(prefix + ".norm", out);
}

std::size_t matched_mlp_width(std::size_t dim, std::size_t ff_dim) {
  // An MlpBlock holds w (2d + 1) + 3d parameters.
  const double target = static_cast<double>(nn::encoder_layer_parameter_count(dim, ff_dim));
  const double d = static_cast<double>(dim);
  const double w = std::round((target - 3.0 * d) / (2.0 * d + 1.0));
  return w < 1.0 ? 1 : static_cast<std::size_t>(w);
}

Mapper Mapper::create(const GlaffConfig& config, std::size_t channels, Rng& rng) {
  config.validate();
  if (channels == 0) throw ConfigError("mapper needs at least one channel");
  Mapper m;
  m.embedding = nn::Linear::create(timefeat::kFeatureCount, config.dim, rng);
  if (config.ablations.no_attention) {
    const std::size_t width = matched_mlp_width(config.dim, config.ff_dim);
    for (std::size_t i = 0; i < config.layers; ++i) {
      m.mlp_blocks.push_back(MlpBlock::create(config.dim, width, config.dropout, rng));
    }
  } else {
    for (std::size_t i = 0; i < config.layers; ++i) {
      m.layers.push_back(nn::EncoderLayer::create(config.dim, config.ff_dim, config.heads, config.dropout, rng));
    }
  }
  m.final_norm = nn::LayerNorm::create(config.dim);
  m.projection = nn::Linear::create(config.dim, channels, rng);
  return m;
}

void Mapper::collect(const std::string& prefix, nn::ParameterList& out) const {
  embedding.collect(prefix + ".embedding", out);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layers." + std::to_string(i), out);
  for (std::size_t i = 0; i < mlp_blocks.size(); ++i) {
    mlp_blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
  }
  final_norm.collect(prefix + ".final_norm", out);
  projection.collect(prefix + ".projection", out);
}

std::size_t mapper_parameter_count(std::size_t dim, std::size_t ff_dim, std::size_t layers, std::size_t channels) {
  return (timefeat::kFeatureCount * dim + dim) + layers * nn::encoder_layer_parameter_count(dim, ff_dim) +
         2 * dim + (dim * channels + channels);
}

Tensor map_timestamps(const Mapper& mapper, const Tensor& features, bool train, Rng& rng) {
  if (features.dim() != 3 || features.shape()[2] != timefeat::kFeatureCount) {
    throw DimensionError("timestamp features must be [b x n x 6], got " + shape_str(features.shape()));
  }
  Tensor h = mapper.embedding.forward(features);
  for (const auto& layer : mapper.layers) h = nn::encoder_layer_forward(layer, h, train, rng);
  for (const auto& block : mapper.mlp_blocks) {
    Tensor hidden = nn::dropout(gelu(block.up.forward(h)), block.dropout, train, rng);
    Tensor update = nn::dropout(block.down.forward(hidden), block.dropout, train, rng);
    h = block.norm.forward(add(h, update));
  }
  return mapper.projection.forward(mapper.final_norm.forward(h));
}

Combiner Combiner::create(std::size_t hist_len, std::size_t ff_dim, Rng& rng) {
  Combiner c;
  c.hidden = nn::Linear::create(hist_len, ff_dim, rng);
  c.out = nn::Linear::create(ff_dim, 2, rng);
  return c;
}

void Combiner::collect(const std::string& prefix, nn::ParameterList& out) const {
  hidden.collect(prefix + ".hidden", out);
  this->out.collect(prefix + ".out", out);
}

namespace {

void check_denorm_shapes(const Tensor& hist_map, const Tensor& pred_map, const Tensor& hist_obs) {
  if (hist_map.dim() != 3 || pred_map.dim() != 3 || hist_obs.dim() != 3) {
    throw DimensionError("denormalizer expects rank-3 [b x n x c] tensors");
  }
  if (hist_map.shape() != hist_obs.shape()) {
    throw DimensionError("history mapping " + shape_str(hist_map.shape()) + " does not match observations " +
                         shape_str(hist_obs.shape()));
  }
  if (pred_map.shape()[0] != hist_map.shape()[0] || pred_map.shape()[2] != hist_map.shape()[2]) {
    throw DimensionError("future mapping " + shape_str(pred_map.shape()) + " does not match history mapping " +
                         shape_str(hist_map.shape()));
  }
  if (hist_map.shape()[1] < 2) throw ConfigError("denormalizer needs a history of at least 2 steps");
}

Denormalized transport(const Tensor& hist_map, const Tensor& pred_map, const Tensor& center_map,
                       const Tensor& spread_map, const Tensor& center_obs, const Tensor& spread_obs) {
  Tensor ratio = div(add_scalar(spread_obs, kScaleGuard), add_scalar(spread_map, kScaleGuard));
  Denormalized out;
  out.hist = add(mul(sub(hist_map, center_map), ratio), center_obs);
  out.pred = add(mul(sub(pred_map, center_map), ratio), center_obs);
  return out;
}

}  // namespace

Denormalized robust_denormalize(const Tensor& hist_map, const Tensor& pred_map, const Tensor& hist_obs, double q) {
  if (!(q > 0.5 && q < 1.0)) throw ConfigError("quantile must lie in (0.5, 1), got " + std::to_string(q));
  check_denorm_shapes(hist_map, pred_map, hist_obs);
  const Tensor obs = detach(hist_obs);
  Tensor center_map = median_lower(hist_map, 1);
  Tensor spread_map = sub(quantile_interp(hist_map, q, 1), quantile_interp(hist_map, 1.0 - q, 1));
  Tensor center_obs = median_lower(obs, 1);
  Tensor spread_obs = sub(quantile_interp(obs, q, 1), quantile_interp(obs, 1.0 - q, 1));
  return transport(hist_map, pred_map, center_map, spread_map, center_obs, spread_obs);
}

Denormalized moment_denormalize(const Tensor& hist_map, const Tensor& pred_map, const Tensor& hist_obs) {
  check_denorm_shapes(hist_map, pred_map, hist_obs);
  const Tensor obs = detach(hist_obs);
  return transport(hist_map, pred_map, mean_axis(hist_map, 1), std_axis(hist_map, 1), mean_axis(obs, 1),
                   std_axis(obs, 1));
}

namespace {

void check_combine_shapes(const Tensor& pred_final, const Tensor& local_pred) {
  if (!local_pred.defined()) throw UsageError("combination requires a backbone forecast");
  if (pred_final.shape() != local_pred.shape()) {
    throw DimensionError("backbone forecast " + shape_str(local_pred.shape()) + " does not match mapping " +
                         shape_str(pred_final.shape()));
  }
}

// weights [b x c x 2] -> prediction w0 * mapped + w1 * local.
Tensor weighted_sum(const Tensor& weights, const Tensor& pred_final, const Tensor& local_pred) {
  const std::size_t b = weights.shape()[0];
  const std::size_t c = weights.shape()[1];
  Tensor w_map = reshape(narrow(weights, 2, 0, 1), {b, 1, c});
  Tensor w_local = reshape(narrow(weights, 2, 1, 1), {b, 1, c});
  return add(mul(pred_final, w_map), mul(local_pred, w_local));
}

}  // namespace

Combined combine(const Combiner& combiner, const Tensor& hist_final, const Tensor& hist_obs, const Tensor& pred_final,
                 const Tensor& local_pred) {
  check_combine_shapes(pred_final, local_pred);
  if (hist_final.shape() != hist_obs.shape()) {
    throw DimensionError("history mapping " + shape_str(hist_final.shape()) + " does not match observations " +
                         shape_str(hist_obs.shape()));
  }
  if (hist_final.shape()[1] != combiner.hidden.in_features()) {
    throw DimensionError("combiner built for history " + std::to_string(combiner.hidden.in_features()) +
                         ", got " + std::to_string(hist_final.shape()[1]));
  }
  Tensor error = permute(sub(detach(hist_obs), hist_final), {0, 2, 1});
  Tensor logits = combiner.out.forward(gelu(combiner.hidden.forward(error)));
  Combined out;
  out.weights = softmax_lastdim(logits);
  out.prediction = weighted_sum(out.weights, pred_final, local_pred);
  return out;
}

Combined average_combine(const Tensor& pred_final, const Tensor& local_pred) {
  check_combine_shapes(pred_final, local_pred);
  Combined out;
  out.weights = Tensor::full({pred_final.shape()[0], pred_final.shape()[2], 2}, 0.5);
  out.prediction = weighted_sum(out.weights, pred_final, local_pred);
  return out;
}

Glaff::Glaff(const GlaffConfig& config, std::size_t hist_len, std::size_t pred_len, std::size_t channels,
             std::uint64_t seed)
    : config_(config), hist_len_(hist_len), pred_len_(pred_len), channels_(channels),
      dropout_rng_(seed ^ 0x9e3779b97f4a7c15ULL) {
  config_.validate();
  if (hist_len < 2) throw ConfigError("history length must be at least 2");
  if (pred_len == 0) throw ConfigError("prediction length must be positive");
  Rng init(seed);
  mapper_ = Mapper::create(config_, channels, init);
  if (!config_.ablations.no_adaptive && !config_.ablations.no_backbone) {
    combiner_ = Combiner::create(hist_len, config_.ff_dim, init);
  }
}

GlaffOutput Glaff::forward(const Tensor& hist_obs, const Tensor& hist_features, const Tensor& future_features,
                           const Tensor& local_pred, bool train) {
  if (hist_obs.dim() != 3 || hist_obs.shape()[1] != hist_len_ || hist_obs.shape()[2] != channels_) {
    throw DimensionError("history " + shape_str(hist_obs.shape()) + " does not match [b x " +
                         std::to_string(hist_len_) + " x " + std::to_string(channels_) + "]");
  }
  if (future_features.dim() != 3 || future_features.shape()[1] != pred_len_) {
    throw DimensionError("future features " + shape_str(future_features.shape()) + " do not cover " +
                         std::to_string(pred_len_) + " steps");
  }
  GlaffOutput out;
  out.hist_map = map_timestamps(mapper_, hist_features, train, dropout_rng_);
  out.pred_map = map_timestamps(mapper_, future_features, train, dropout_rng_);
  const Denormalized d = config_.ablations.no_quantile
                             ? moment_denormalize(out.hist_map, out.pred_map, hist_obs)
                             : robust_denormalize(out.hist_map, out.pred_map, hist_obs, config_.quantile);
  out.hist_final = d.hist;
  out.pred_final = d.pred;
  if (config_.ablations.no_backbone) {
    out.prediction = out.pred_final;
    return out;
  }
  const Combined c = config_.ablations.no_adaptive
                         ? average_combine(out.pred_final, local_pred)
                         : combine(combiner_, out.hist_final, hist_obs, out.pred_final, local_pred);
  out.prediction = c.prediction;
  out.weights = c.weights;
  return out;
}

nn::ParameterList Glaff::parameters() const {
  nn::ParameterList params;
  mapper_.collect("glaff.mapper", params);
  if (combiner_.hidden.weight.defined()) combiner_.collect("glaff.combiner", params);
  return params;
}

}  // namespace glaff::plugin
