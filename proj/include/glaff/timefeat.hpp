// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "glaff/tensor.hpp"

namespace glaff::timefeat {

/// Naive civil time (proleptic Gregorian, no timezone).
struct Timestamp {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;
  unsigned hour = 0;
  unsigned minute = 0;
  unsigned second = 0;

  auto operator<=>(const Timestamp&) const = default;
};

inline constexpr std::size_t kFeatureCount = 6;
using Features = std::array<double, kFeatureCount>;

enum class FeatureMode { raw, scaled };

/// Accepts "YYYY-MM-DD HH:MM:SS" or "YYYY-MM-DD" (midnight).
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(const Timestamp& ts);
bool is_valid(const Timestamp& ts);

std::int64_t to_epoch_seconds(const Timestamp& ts);
Timestamp from_epoch_seconds(std::int64_t seconds);

/// Monday = 0 ... Sunday = 6.
unsigned weekday(const Timestamp& ts);

/// [month, day, weekday, hour, minute, second].
Features extract_features(const Timestamp& ts);

/// Affine map of each raw component onto [-0.5, 0.5] by its calendar range.
Features scale_features(const Features& raw);
Features unscale_features(const Features& scaled);

/// Stacks the features of every timestamp into an [n x 6] tensor.
Tensor featurize_window(std::span<const Timestamp> timestamps, FeatureMode mode);

FeatureMode parse_feature_mode(std::string_view name);
std::string_view feature_mode_name(FeatureMode mode);

}  // namespace glaff::timefeat
