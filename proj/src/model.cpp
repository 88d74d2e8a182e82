// SPDX-License-Identifier: Apache-2.0
#include "glaff/model.hpp"

#include <array>
#include <utility>

#include "glaff/error.hpp"

namespace glaff {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 6> kVariants{{
    {Variant::backbone, "backbone"},
    {Variant::full, "full"},
    {Variant::no_backbone, "no_backbone"},
    {Variant::no_attention, "no_attention"},
    {Variant::no_quantile, "no_quantile"},
    {Variant::no_adaptive, "no_adaptive"},
}};

}  // namespace

Variant parse_variant(std::string_view name) {
  for (const auto& [v, n] : kVariants) {
    if (n == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected backbone, full, no_backbone, no_attention, no_quantile or no_adaptive)");
}

std::string_view variant_name(Variant v) {
  for (const auto& [x, n] : kVariants) {
    if (x == v) return n;
  }
  return "?";
}

plugin::Ablations ablations_for(Variant v) {
  plugin::Ablations a;
  a.no_backbone = v == Variant::no_backbone;
  a.no_attention = v == Variant::no_attention;
  a.no_quantile = v == Variant::no_quantile;
  a.no_adaptive = v == Variant::no_adaptive;
  return a;
}

void ModelSpec::validate() const {
  if (hist_len < 2) throw ConfigError("history length must be at least 2");
  if (pred_len == 0) throw ConfigError("prediction length must be positive");
  if (channels == 0) throw ConfigError("model needs at least one channel");
  if (variant != Variant::no_backbone) backbone.validate(hist_len);
  if (variant != Variant::backbone) {
    plugin::GlaffConfig g = glaff;
    g.ablations = ablations_for(variant);
    g.validate();
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  // FNV-1a over the tag, mixed with the seed through splitmix64.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : purpose) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed + h + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Forecaster::Forecaster(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  spec_.glaff.ablations = ablations_for(spec_.variant);
  if (spec_.variant != Variant::no_backbone) {
    Rng rng(derive_seed(spec_.seed, "backbone"));
    backbone_ = backbones::make_backbone(spec_.backbone, spec_.hist_len, spec_.pred_len, rng);
    if (spec_.backbone.freeze) {
      for (auto& p : backbone_->parameters()) p.tensor.set_requires_grad(false);
    }
  }
  if (spec_.variant != Variant::backbone) {
    plugin_ = std::make_unique<plugin::Glaff>(spec_.glaff, spec_.hist_len, spec_.pred_len, spec_.channels,
                                              derive_seed(spec_.seed, "plugin"));
  }
}

Prediction Forecaster::forward(const data::Batch& batch, bool train) {
  if (batch.history.shape()[2] != spec_.channels) {
    throw DimensionError("batch has " + std::to_string(batch.history.shape()[2]) + " channels, model expects " +
                         std::to_string(spec_.channels));
  }
  Tensor local;
  if (backbone_) local = backbone_->forecast(batch.history, batch.history_features, batch.future_features, train);
  if (!plugin_) return {local, Tensor()};
  auto out = plugin_->forward(batch.history, batch.history_features, batch.future_features, local, train);
  return {out.prediction, out.weights};
}

nn::ParameterList Forecaster::parameters() const {
  nn::ParameterList params;
  if (backbone_) params = backbone_->parameters();
  if (plugin_) {
    auto p = plugin_->parameters();
    params.insert(params.end(), p.begin(), p.end());
  }
  return params;
}

std::vector<Tensor> Forecaster::trainable() const {
  std::vector<Tensor> out;
  if (backbone_ && !spec_.backbone.freeze) {
    for (auto& p : backbone_->parameters()) out.push_back(p.tensor);
  }
  if (plugin_) {
    for (auto& p : plugin_->parameters()) out.push_back(p.tensor);
  }
  return out;
}

}  // namespace glaff
