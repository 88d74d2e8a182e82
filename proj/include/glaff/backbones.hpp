// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "glaff/nn.hpp"
#include "glaff/random.hpp"
#include "glaff/tensor.hpp"

namespace glaff::backbones {

struct BackboneConfig {
  std::string kind = "dlinear";  // dlinear | naive
  std::size_t kernel = 25;       // moving-average window of DLinear
  std::size_t period = 24;       // season length of the naive forecaster
  bool freeze = false;           // keep backbone weights fixed during training

  void validate(std::size_t hist_len) const;
};

/// Local forecaster: history [b x h x c] -> forecast [b x p x c]. Timestamp
/// features of both windows are offered; a backbone may ignore them.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::string_view kind() const = 0;
  virtual Tensor forecast(const Tensor& hist, const Tensor& hist_features, const Tensor& future_features,
                          bool train) = 0;
  virtual nn::ParameterList parameters() const = 0;
};

/// Series decomposition into a moving-average trend and the remainder,
/// each mapped by a channel-shared linear layer over the time axis.
class DLinear final : public Backbone {
 public:
  DLinear(std::size_t hist_len, std::size_t pred_len, std::size_t kernel, Rng& rng);

  std::string_view kind() const override { return "dlinear"; }
  Tensor forecast(const Tensor& hist, const Tensor& hist_features, const Tensor& future_features,
                  bool train) override;
  nn::ParameterList parameters() const override;

  /// Moving average with edge replication, [b x h x c] -> [b x h x c].
  Tensor trend(const Tensor& hist) const;

  /// [h x h] matrix M with trend_row = x_row . M for a series row x.
  static Tensor averaging_matrix(std::size_t hist_len, std::size_t kernel);

  nn::Linear& trend_map() noexcept { return trend_map_; }
  nn::Linear& seasonal_map() noexcept { return seasonal_map_; }

 private:
  std::size_t hist_len_;
  std::size_t pred_len_;
  Tensor averaging_;
  nn::Linear trend_map_;
  nn::Linear seasonal_map_;
};

/// Repeats the last observed season: y[t] = x[h - period + (t mod period)].
class SeasonalNaive final : public Backbone {
 public:
  SeasonalNaive(std::size_t hist_len, std::size_t pred_len, std::size_t period);

  std::string_view kind() const override { return "naive"; }
  Tensor forecast(const Tensor& hist, const Tensor& hist_features, const Tensor& future_features,
                  bool train) override;
  nn::ParameterList parameters() const override { return {}; }

 private:
  std::size_t hist_len_;
  std::size_t pred_len_;
  std::size_t period_;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config, std::size_t hist_len, std::size_t pred_len,
                                        Rng& rng);

}  // namespace glaff::backbones
