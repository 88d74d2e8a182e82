// SPDX-License-Identifier: Apache-2.0
#include "glaff/backbones.hpp"

#include <algorithm>

#include "glaff/error.hpp"
#include "glaff/ops.hpp"

namespace glaff::backbones {

void BackboneConfig::validate(std::size_t hist_len) const {
  if (kind == "dlinear") {
    if (kernel == 0 || kernel % 2 == 0) {
      throw ConfigError("backbone.kernel must be odd, got " + std::to_string(kernel));
    }
    if (kernel > hist_len) {
      throw ConfigError("backbone.kernel " + std::to_string(kernel) + " exceeds history length " +
                        std::to_string(hist_len));
    }
  } else if (kind == "naive") {
    if (period == 0 || period > hist_len) {
      throw ConfigError("backbone.period must lie in [1, " + std::to_string(hist_len) + "]");
    }
  } else {
    throw ConfigError("unknown backbone '" + kind + "' (expected dlinear or naive)");
  }
}

namespace {

void check_history(const Tensor& hist, std::size_t hist_len) {
  if (hist.dim() != 3 || hist.shape()[1] != hist_len) {
    throw DimensionError("backbone history " + shape_str(hist.shape()) + " is not [b x " +
                         std::to_string(hist_len) + " x c]");
  }
}

}  // namespace

Tensor DLinear::averaging_matrix(std::size_t hist_len, std::size_t kernel) {
  if (kernel == 0 || kernel % 2 == 0 || kernel > hist_len) {
    throw ConfigError("moving-average kernel must be odd and at most the history length");
  }
  const std::size_t half = kernel / 2;
  const double w = 1.0 / static_cast<double>(kernel);
  Tensor m = Tensor::zeros({hist_len, hist_len});
  auto data = m.mutable_data();
  for (std::size_t t = 0; t < hist_len; ++t) {
    for (std::size_t j = 0; j < kernel; ++j) {
      // Positions outside the series replicate the nearest edge value.
      const auto pos = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(half);
      const auto s = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(pos, 0, hist_len - 1));
      data[s * hist_len + t] += w;
    }
  }
  return m;
}

DLinear::DLinear(std::size_t hist_len, std::size_t pred_len, std::size_t kernel, Rng& rng)
    : hist_len_(hist_len), pred_len_(pred_len), averaging_(averaging_matrix(hist_len, kernel)) {
  if (pred_len == 0) throw ConfigError("prediction length must be positive");
  trend_map_ = nn::Linear::create(hist_len, pred_len, rng);
  seasonal_map_ = nn::Linear::create(hist_len, pred_len, rng);
}

Tensor DLinear::trend(const Tensor& hist) const {
  check_history(hist, hist_len_);
  return permute(matmul(permute(hist, {0, 2, 1}), averaging_), {0, 2, 1});
}

Tensor DLinear::forecast(const Tensor& hist, const Tensor& /*hist_features*/, const Tensor& /*future_features*/,
                         bool /*train*/) {
  check_history(hist, hist_len_);
  Tensor rows = permute(hist, {0, 2, 1});  // [b x c x h]
  Tensor trend_rows = matmul(rows, averaging_);
  Tensor seasonal_rows = sub(rows, trend_rows);
  Tensor out = add(trend_map_.forward(trend_rows), seasonal_map_.forward(seasonal_rows));
  return permute(out, {0, 2, 1});
}

nn::ParameterList DLinear::parameters() const {
  nn::ParameterList params;
  trend_map_.collect("backbone.trend", params);
  seasonal_map_.collect("backbone.seasonal", params);
  return params;
}

SeasonalNaive::SeasonalNaive(std::size_t hist_len, std::size_t pred_len, std::size_t period)
    : hist_len_(hist_len), pred_len_(pred_len), period_(period) {
  if (period == 0 || period > hist_len) throw ConfigError("season length must lie in [1, history length]");
}

Tensor SeasonalNaive::forecast(const Tensor& hist, const Tensor& /*hist_features*/,
                               const Tensor& /*future_features*/, bool /*train*/) {
  check_history(hist, hist_len_);
  const std::size_t b = hist.shape()[0];
  const std::size_t c = hist.shape()[2];
  Tensor out = Tensor::empty({b, pred_len_, c});
  auto src = hist.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = 0; t < pred_len_; ++t) {
      const std::size_t s = hist_len_ - period_ + t % period_;
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((i * hist_len_ + s) * c), c,
                  dst.begin() + static_cast<std::ptrdiff_t>((i * pred_len_ + t) * c));
    }
  }
  return out;
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, std::size_t hist_len, std::size_t pred_len,
                                        Rng& rng) {
  config.validate(hist_len);
  if (config.kind == "dlinear") return std::make_unique<DLinear>(hist_len, pred_len, config.kernel, rng);
  return std::make_unique<SeasonalNaive>(hist_len, pred_len, config.period);
}

}  // namespace glaff::backbones
