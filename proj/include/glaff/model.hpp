// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

#include "glaff/backbones.hpp"
#include "glaff/data.hpp"
#include "glaff/nn.hpp"
#include "glaff/plugin.hpp"

namespace glaff {

/// What gets trained: the backbone alone, the full plugin around it, or
/// one of the four ablations.
enum class Variant { backbone, full, no_backbone, no_attention, no_quantile, no_adaptive };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);
/// The plugin switches a variant turns on.
plugin::Ablations ablations_for(Variant v);

struct ModelSpec {
  Variant variant = Variant::full;
  plugin::GlaffConfig glaff;
  backbones::BackboneConfig backbone;
  std::size_t hist_len = 96;
  std::size_t pred_len = 96;
  std::size_t channels = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Derives an independent stream seed from a run seed and a purpose tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

struct Prediction {
  Tensor value;    // [b x p x c]
  Tensor weights;  // [b x c x 2] when the adaptive or averaging combiner ran
};

/// Backbone and plugin composed according to a ModelSpec.
class Forecaster {
 public:
  explicit Forecaster(const ModelSpec& spec);

  Prediction forward(const data::Batch& batch, bool train);

  /// Backbone parameters first, then plugin parameters.
  nn::ParameterList parameters() const;
  /// Parameters the optimizer updates; excludes a frozen backbone.
  std::vector<Tensor> trainable() const;

  const ModelSpec& spec() const noexcept { return spec_; }
  bool has_backbone() const noexcept { return backbone_ != nullptr; }
  bool has_plugin() const noexcept { return plugin_ != nullptr; }

 private:
  ModelSpec spec_;
  std::unique_ptr<backbones::Backbone> backbone_;
  std::unique_ptr<plugin::Glaff> plugin_;
};

}  // namespace glaff
