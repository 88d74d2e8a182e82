// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "glaff/tensor.hpp"
#include "glaff/timefeat.hpp"

namespace glaff::data {

/// A multichannel series. `values` is the ground truth, row-major [n x c].
/// `observed` is either empty or an [n x c] copy carrying injected anomalies;
/// model inputs read the observed copy, targets always read `values`.
struct Dataset {
  std::vector<timefeat::Timestamp> timestamps;
  std::vector<std::string> channels;
  std::vector<double> values;
  std::vector<double> observed;

  std::size_t length() const noexcept { return timestamps.size(); }
  std::size_t channel_count() const noexcept { return channels.size(); }
  double value(std::size_t t, std::size_t c) const { return values[t * channels.size() + c]; }
  bool polluted() const noexcept { return !observed.empty(); }
  std::span<const double> observations() const { return observed.empty() ? values : observed; }

  /// Throws DataError when the fields disagree in size.
  void validate() const;
};

/// Reads the conventional benchmark layout: header row, first column "date",
/// then one numeric column per channel.
Dataset load_csv(const std::filesystem::path& path);
Dataset parse_csv(std::istream& in, const std::string& source);
/// Writes the observed values (ground truth when unpolluted). Numbers use
/// the shortest round-trip representation.
std::string format_csv(const Dataset& ds);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

struct SplitSpec {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  void validate() const;
  static SplitSpec parse(const std::string& text);  // "0.6,0.2,0.2"
};

/// Target rows [begin, end). Windows may take history from `context` rows
/// before `begin`.
struct Split {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t context = 0;

  std::size_t length() const noexcept { return end - begin; }
  std::size_t first_row() const noexcept { return begin - context; }
};

struct Splits {
  Split train;
  Split val;
  Split test;
};

/// Boundaries at floor(n r_train) and floor(n (r_train + r_val)). With
/// `reach_back` > 0 the validation and test splits may borrow that many
/// preceding rows as history.
Splits chrono_split(const Dataset& ds, const SplitSpec& spec, std::size_t reach_back = 0);

/// Guard added to the standard deviation.
inline constexpr double kStdGuard = 1e-8;

struct Standardized {
  Dataset data;
  std::vector<double> mean;
  std::vector<double> std;
};

/// z-scores every row with per-channel statistics of the training rows.
Standardized standardize(const Dataset& ds, const Split& train);

struct Window {
  Tensor history;          // [h x c]
  Tensor history_features; // [h x 6]
  Tensor future_features;  // [p x 6]
  Tensor target;           // [p x c]
  std::size_t start = 0;   // row of the first history step
};

struct Batch {
  Tensor history;          // [b x h x c]
  Tensor history_features; // [b x h x 6]
  Tensor future_features;  // [b x p x 6]
  Tensor target;           // [b x p x c]
  std::size_t size() const { return history.shape()[0]; }
};

/// Every stride-offset window of a split. Holds a pointer to the dataset,
/// which must outlive it.
class WindowSet {
 public:
  WindowSet(const Dataset& ds, const Split& split, std::size_t hist_len, std::size_t pred_len,
            std::size_t stride = 1, timefeat::FeatureMode mode = timefeat::FeatureMode::raw);

  std::size_t size() const noexcept { return count_; }
  std::size_t hist_len() const noexcept { return hist_len_; }
  std::size_t pred_len() const noexcept { return pred_len_; }
  std::size_t channels() const noexcept { return ds_->channel_count(); }
  std::size_t start(std::size_t i) const { return first_ + i * stride_; }

  Window at(std::size_t i) const;
  Batch batch(std::span<const std::size_t> indices) const;
  /// Windows [first, first + count).
  Batch range(std::size_t first, std::size_t count) const;

 private:
  const Dataset* ds_;
  std::size_t hist_len_;
  std::size_t pred_len_;
  std::size_t stride_;
  std::size_t first_;
  std::size_t count_;
  std::vector<double> features_;  // [rows x 6] from first_
};

/// Convenience wrapper around WindowSet.
inline WindowSet window_iter(const Dataset& ds, const Split& split, std::size_t hist_len, std::size_t pred_len,
                             std::size_t stride = 1) {
  return WindowSet(ds, split, hist_len, pred_len, stride);
}

struct SynthProfile {
  timefeat::Timestamp start{2016, 7, 1, 0, 0, 0};
  double weekday_amplitude = 1.0;
  double weekend_amplitude = 0.3;
  double noise = 0.1;
  double drift = 0.0;   // per step
  double level = 0.0;
};

/// Daily sinusoid whose amplitude switches between weekdays and weekends,
/// plus Gaussian noise and linear drift. Channel k is shifted in level,
/// phase and scale so channels are distinguishable.
Dataset synth_generate(std::size_t n, std::size_t channels, std::int64_t granularity_seconds,
                       const SynthProfile& profile, std::uint64_t seed);

/// Amplitude multiplier and phase of synthetic channel k.
double synth_channel_scale(std::size_t k);
double synth_channel_phase(std::size_t k);

enum class AnomalyKind { point, contextual };

struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::point;
  double rate = 0.0;
  double magnitude = 8.0;  // IQR multiple (point) or amplitude factor (contextual)
  std::uint64_t seed = 7;

  void validate() const;
  /// "kind:rate:magnitude[:seed]".
  static AnomalySpec parse(const std::string& text);
  std::string str() const;
};

/// Comma-separated list of specs; empty text gives an empty list.
std::vector<AnomalySpec> parse_anomaly_list(const std::string& text);
std::string format_anomaly_list(const std::vector<AnomalySpec>& specs);

struct InjectionReport {
  std::size_t eligible = 0;
  std::vector<std::size_t> windows;    // history start rows of the polluted windows
  std::vector<std::size_t> rows;       // polluted rows, one entry per (row, channel) change
  std::vector<std::size_t> channels;
};

/// Pollutes the history parts of a selection of windows of `region`.
/// Only the observed copy changes; ground truth stays intact.
Dataset inject_anomalies(const Dataset& ds, const AnomalySpec& spec, const Split& region, std::size_t hist_len,
                         std::size_t pred_len, InjectionReport* report = nullptr);

}  // namespace glaff::data
