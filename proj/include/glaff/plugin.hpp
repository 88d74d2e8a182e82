// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "glaff/nn.hpp"
#include "glaff/random.hpp"
#include "glaff/tensor.hpp"
#include "glaff/timefeat.hpp"

namespace glaff::plugin {

/// Degenerate-scale guard added to both spreads in the denormalizer.
inline constexpr double kScaleGuard = 1e-8;

/// Component switches used by the ablation study.
struct Ablations {
  bool no_attention = false;  // encoder blocks replaced by MLP blocks of equal size
  bool no_quantile = false;   // mean / standard deviation instead of median / quantile range
  bool no_adaptive = false;   // fixed 0.5 / 0.5 combination
  bool no_backbone = false;   // the mapping alone is the forecast
};

struct GlaffConfig {
  std::size_t dim = 512;
  std::size_t ff_dim = 2048;
  std::size_t heads = 8;
  std::size_t layers = 2;
  double dropout = 0.1;
  double quantile = 0.75;
  timefeat::FeatureMode feature_mode = timefeat::FeatureMode::raw;
  Ablations ablations;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

/// Token-wise block used instead of attention when `no_attention` is set:
/// h <- LN(h + Drop(down(Drop(GELU(up(h)))))).
struct MlpBlock {
  nn::Linear up;
  nn::Linear down;
  nn::LayerNorm norm;
  double dropout = 0.0;

  static MlpBlock create(std::size_t dim, std::size_t width, double dropout, Rng& rng);
  void collect(const std::string& prefix, nn::ParameterList& out) const;
};

/// Hidden width that gives an MlpBlock the parameter count of one
/// encoder layer with the same model and feed-forward dimensions.
std::size_t matched_mlp_width(std::size_t dim, std::size_t ff_dim);

/// Timestamp features -> initial mapping: embedding, l encoder blocks,
/// final layer norm, projection onto the data channels.
struct Mapper {
  nn::Linear embedding;
  std::vector<nn::EncoderLayer> layers;
  std::vector<MlpBlock> mlp_blocks;
  nn::LayerNorm final_norm;
  nn::Linear projection;

  static Mapper create(const GlaffConfig& config, std::size_t channels, Rng& rng);
  void collect(const std::string& prefix, nn::ParameterList& out) const;
};

/// Closed-form parameter count of an attention Mapper.
std::size_t mapper_parameter_count(std::size_t dim, std::size_t ff_dim, std::size_t layers, std::size_t channels);

/// [b x n x 6] features -> [b x n x c] initial mapping.
Tensor map_timestamps(const Mapper& mapper, const Tensor& features, bool train, Rng& rng);

struct Combiner {
  nn::Linear hidden;  // history length -> ff_dim
  nn::Linear out;     // ff_dim -> 2

  static Combiner create(std::size_t hist_len, std::size_t ff_dim, Rng& rng);
  void collect(const std::string& prefix, nn::ParameterList& out) const;
};

struct Denormalized {
  Tensor hist;  // final history mapping  [b x h x c]
  Tensor pred;  // final future mapping   [b x p x c]
};

/// Transports the initial mappings onto the scale of the observations using
/// per-sample, per-channel medians and q / (1-q) quantile ranges over the
/// history axis: out = (m - med(m_hist)) (iqr(x) + g) / (iqr(m_hist) + g) + med(x).
/// Observation statistics are constants; mapping statistics carry gradients.
Denormalized robust_denormalize(const Tensor& hist_map, const Tensor& pred_map, const Tensor& hist_obs, double q);

/// Same transport with mean and population standard deviation.
Denormalized moment_denormalize(const Tensor& hist_map, const Tensor& pred_map, const Tensor& hist_obs);

struct Combined {
  Tensor prediction;  // [b x p x c]
  Tensor weights;     // [b x c x 2]: (mapping weight, backbone weight)
};

/// Weights from the history error X - X_hat, one pair per sample and channel.
Combined combine(const Combiner& combiner, const Tensor& hist_final, const Tensor& hist_obs, const Tensor& pred_final,
                 const Tensor& local_pred);

/// Fixed 0.5 / 0.5 combination.
Combined average_combine(const Tensor& pred_final, const Tensor& local_pred);

struct GlaffOutput {
  Tensor prediction;
  Tensor weights;  // undefined when the backbone is removed
  Tensor hist_map;
  Tensor pred_map;
  Tensor hist_final;
  Tensor pred_final;
};

/// The plugin: mapper, denormalizer and combiner around a local forecast.
class Glaff {
 public:
  Glaff(const GlaffConfig& config, std::size_t hist_len, std::size_t pred_len, std::size_t channels,
        std::uint64_t seed);

  /// `local_pred` may be undefined when the backbone is ablated.
  GlaffOutput forward(const Tensor& hist_obs, const Tensor& hist_features, const Tensor& future_features,
                      const Tensor& local_pred, bool train);

  nn::ParameterList parameters() const;

  const GlaffConfig& config() const noexcept { return config_; }
  std::size_t hist_len() const noexcept { return hist_len_; }
  std::size_t pred_len() const noexcept { return pred_len_; }
  std::size_t channels() const noexcept { return channels_; }
  const Mapper& mapper() const noexcept { return mapper_; }
  const Combiner& combiner() const noexcept { return combiner_; }

 private:
  GlaffConfig config_;
  std::size_t hist_len_;
  std::size_t pred_len_;
  std::size_t channels_;
  Mapper mapper_;
  Combiner combiner_;
  Rng dropout_rng_;
};

}  // namespace glaff::plugin
