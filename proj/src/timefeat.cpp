// SPDX-License-Identifier: Apache-2.0
#include "glaff/timefeat.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

#include "glaff/error.hpp"

namespace glaff::timefeat {

namespace {

namespace chr = std::chrono;

// Calendar ranges [lo, hi] of the six raw components.
constexpr std::array<double, kFeatureCount> kLow{1, 1, 0, 0, 0, 0};
constexpr std::array<double, kFeatureCount> kHigh{12, 31, 6, 23, 59, 59};

template <class T>
bool read_field(std::string_view text, std::size_t pos, std::size_t width, T& out) {
  if (pos + width > text.size()) return false;
  const char* first = text.data() + pos;
  const char* last = first + width;
  for (const char* c = first; c != last; ++c) {
    if (*c < '0' || *c > '9') return false;
  }
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

chr::sys_days civil_days(const Timestamp& ts) {
  return chr::sys_days{chr::year{ts.year} / chr::month{ts.month} / chr::day{ts.day}};
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  // Tolerate surrounding whitespace and a trailing CR from CRLF files.
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);

  const auto fail = [&](const char* why) {
    return ParseError("invalid timestamp '" + std::string(text) + "': " + why);
  };
  if (text.size() != 10 && text.size() != 19) throw fail("expected YYYY-MM-DD or YYYY-MM-DD HH:MM:SS");
  Timestamp ts;
  if (!read_field(text, 0, 4, ts.year) || text[4] != '-' || !read_field(text, 5, 2, ts.month) ||
      text[7] != '-' || !read_field(text, 8, 2, ts.day)) {
    throw fail("malformed date");
  }
  if (text.size() == 19) {
    if ((text[10] != ' ' && text[10] != 'T') || !read_field(text, 11, 2, ts.hour) || text[13] != ':' ||
        !read_field(text, 14, 2, ts.minute) || text[16] != ':' || !read_field(text, 17, 2, ts.second)) {
      throw fail("malformed time of day");
    }
  }
  if (!is_valid(ts)) throw fail("not a calendar date and time");
  return ts;
}

std::string format_timestamp(const Timestamp& ts) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02u:%02u:%02u", ts.year, ts.month, ts.day, ts.hour, ts.minute,
                ts.second);
  return buf;
}

bool is_valid(const Timestamp& ts) {
  const chr::year_month_day ymd{chr::year{ts.year}, chr::month{ts.month}, chr::day{ts.day}};
  return ymd.ok() && ts.hour < 24 && ts.minute < 60 && ts.second < 60;
}

std::int64_t to_epoch_seconds(const Timestamp& ts) {
  const auto days = civil_days(ts).time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + ts.hour * 3600 + ts.minute * 60 + ts.second;
}

Timestamp from_epoch_seconds(std::int64_t seconds) {
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const chr::year_month_day ymd{chr::sys_days{chr::days{days}}};
  Timestamp ts;
  ts.year = static_cast<int>(ymd.year());
  ts.month = static_cast<unsigned>(ymd.month());
  ts.day = static_cast<unsigned>(ymd.day());
  ts.hour = static_cast<unsigned>(rem / 3600);
  ts.minute = static_cast<unsigned>(rem % 3600 / 60);
  ts.second = static_cast<unsigned>(rem % 60);
  return ts;
}

unsigned weekday(const Timestamp& ts) { return chr::weekday{civil_days(ts)}.iso_encoding() - 1; }

Features extract_features(const Timestamp& ts) {
  return {static_cast<double>(ts.month),  static_cast<double>(ts.day),    static_cast<double>(weekday(ts)),
          static_cast<double>(ts.hour),   static_cast<double>(ts.minute), static_cast<double>(ts.second)};
}

Features scale_features(const Features& raw) {
  Features out;
  for (std::size_t i = 0; i < kFeatureCount; ++i) out[i] = (raw[i] - kLow[i]) / (kHigh[i] - kLow[i]) - 0.5;
  return out;
}

Features unscale_features(const Features& scaled) {
  Features out;
  for (std::size_t i = 0; i < kFeatureCount; ++i) out[i] = (scaled[i] + 0.5) * (kHigh[i] - kLow[i]) + kLow[i];
  return out;
}

Tensor featurize_window(std::span<const Timestamp> timestamps, FeatureMode mode) {
  if (timestamps.empty()) throw DataError("featurize_window: no timestamps");
  Tensor out = Tensor::empty({timestamps.size(), kFeatureCount});
  auto dst = out.mutable_data();
  for (std::size_t r = 0; r < timestamps.size(); ++r) {
    Features f = extract_features(timestamps[r]);
    if (mode == FeatureMode::scaled) f = scale_features(f);
    std::copy(f.begin(), f.end(), dst.begin() + static_cast<std::ptrdiff_t>(r * kFeatureCount));
  }
  return out;
}

FeatureMode parse_feature_mode(std::string_view name) {
  if (name == "raw") return FeatureMode::raw;
  if (name == "scaled") return FeatureMode::scaled;
  throw ConfigError("unknown feature mode '" + std::string(name) + "' (expected raw or scaled)");
}

std::string_view feature_mode_name(FeatureMode mode) { return mode == FeatureMode::raw ? "raw" : "scaled"; }

}  // namespace glaff::timefeat
