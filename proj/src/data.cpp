// SPDX-License-Identifier: Apache-2.0
#include "glaff/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include "glaff/error.hpp"
#include "glaff/io.hpp"
#include "glaff/ops.hpp"
#include "glaff/random.hpp"

namespace glaff::data {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string at_line(std::size_t line, const std::string& source) {
  return source + ":" + std::to_string(line) + ": ";
}

}  // namespace

void Dataset::validate() const {
  const std::size_t n = timestamps.size();
  const std::size_t c = channels.size();
  if (c == 0) throw DataError("dataset has no channels");
  if (values.size() != n * c) throw DataError("dataset values do not match " + std::to_string(n) + " x " +
                                              std::to_string(c));
  if (!observed.empty() && observed.size() != values.size()) throw DataError("observed copy has the wrong size");
}

Dataset parse_csv(std::istream& in, const std::string& source) {
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = line;
    if (line_no == 1 && view.starts_with("\xEF\xBB\xBF")) view.remove_prefix(3);
    if (trim(view).empty()) continue;
    auto fields = split_fields(view);
    if (!header) {
      if (fields.front() != "date") {
        throw IngestionError(at_line(line_no, source) + "first column must be 'date', found '" +
                             std::string(fields.front()) + "'");
      }
      if (fields.size() < 2) throw IngestionError(at_line(line_no, source) + "no value columns");
      for (std::size_t i = 1; i < fields.size(); ++i) ds.channels.emplace_back(fields[i]);
      header = true;
      continue;
    }
    if (fields.size() != ds.channels.size() + 1) {
      throw IngestionError(at_line(line_no, source) + "expected " + std::to_string(ds.channels.size() + 1) +
                           " fields, found " + std::to_string(fields.size()));
    }
    timefeat::Timestamp ts;
    try {
      ts = timefeat::parse_timestamp(fields[0]);
    } catch (const ParseError& e) {
      throw IngestionError(at_line(line_no, source) + e.what());
    }
    if (!ds.timestamps.empty() && !(ds.timestamps.back() < ts)) {
      throw IngestionError(at_line(line_no, source) + "timestamp " + timefeat::format_timestamp(ts) +
                           " does not follow " + timefeat::format_timestamp(ds.timestamps.back()));
    }
    ds.timestamps.push_back(ts);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const std::string_view cell = fields[i];
      double v = 0.0;
      const char* first = cell.data();
      if (!cell.empty() && cell.front() == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw IngestionError(at_line(line_no, source) + "column '" + ds.channels[i - 1] + "': '" +
                             std::string(cell) + "' is not a number");
      }
      if (!std::isfinite(v)) {
        throw IngestionError(at_line(line_no, source) + "column '" + ds.channels[i - 1] + "': missing value");
      }
      ds.values.push_back(v);
    }
  }
  if (!header) throw IngestionError(source + ": empty file");
  if (ds.timestamps.empty()) throw IngestionError(source + ": no data rows");
  return ds;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

std::string format_csv(const Dataset& ds) {
  ds.validate();
  std::string out = "date";
  for (const auto& name : ds.channels) out += "," + name;
  out += "\n";
  const auto obs = ds.observations();
  const std::size_t c = ds.channel_count();
  for (std::size_t t = 0; t < ds.length(); ++t) {
    out += timefeat::format_timestamp(ds.timestamps[t]);
    for (std::size_t k = 0; k < c; ++k) {
      out += ",";
      out += io::format_double(obs[t * c + k]);
    }
    out += "\n";
  }
  return out;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) { io::write_file_atomic(path, format_csv(ds)); }

void SplitSpec::validate() const {
  if (!(train > 0 && val > 0 && test > 0)) throw ConfigError("split ratios must be positive");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

SplitSpec SplitSpec::parse(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = trim(item);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
      throw ConfigError("invalid split ratio '" + item + "'");
    }
    parts.push_back(v);
  }
  if (parts.size() != 3) throw ConfigError("split needs three ratios, got '" + text + "'");
  SplitSpec spec{parts[0], parts[1], parts[2]};
  spec.validate();
  return spec;
}

Splits chrono_split(const Dataset& ds, const SplitSpec& spec, std::size_t reach_back) {
  spec.validate();
  const std::size_t n = ds.length();
  if (n < 10) throw ConfigError("dataset of " + std::to_string(n) + " rows is too short to split (need 10)");
  const auto a = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train));
  const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (spec.train + spec.val)));
  Splits s;
  s.train = {0, a, 0};
  s.val = {a, b, std::min(reach_back, a)};
  s.test = {b, n, std::min(reach_back, b)};
  return s;
}

Standardized standardize(const Dataset& ds, const Split& train) {
  ds.validate();
  if (train.length() == 0 || train.end > ds.length()) throw ConfigError("training split is empty");
  const std::size_t c = ds.channel_count();
  Standardized out;
  out.mean.assign(c, 0.0);
  out.std.assign(c, 0.0);
  const double count = static_cast<double>(train.length());
  for (std::size_t k = 0; k < c; ++k) {
    double s = 0.0;
    for (std::size_t t = train.begin; t < train.end; ++t) s += ds.value(t, k);
    const double m = s / count;
    double v = 0.0;
    for (std::size_t t = train.begin; t < train.end; ++t) v += (ds.value(t, k) - m) * (ds.value(t, k) - m);
    out.mean[k] = m;
    out.std[k] = std::sqrt(v / count);
  }
  out.data = ds;
  const auto apply = [&](std::vector<double>& rows) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t k = i % c;
      rows[i] = (rows[i] - out.mean[k]) / (out.std[k] + kStdGuard);
    }
  };
  apply(out.data.values);
  apply(out.data.observed);
  return out;
}

WindowSet::WindowSet(const Dataset& ds, const Split& split, std::size_t hist_len, std::size_t pred_len,
                     std::size_t stride, timefeat::FeatureMode mode)
    : ds_(&ds), hist_len_(hist_len), pred_len_(pred_len), stride_(stride), first_(split.first_row()) {
  ds.validate();
  if (hist_len == 0 || pred_len == 0) throw ConfigError("window lengths must be positive");
  if (stride == 0) throw ConfigError("window stride must be positive");
  if (split.end > ds.length() || split.context > split.begin) throw ConfigError("split lies outside the dataset");
  const std::size_t rows = split.end - first_;
  if (rows < hist_len + pred_len) {
    throw ConfigError("split of " + std::to_string(rows) + " rows is shorter than the required minimum of " +
                      std::to_string(hist_len + pred_len) + " (history + prediction)");
  }
  count_ = (rows - hist_len - pred_len) / stride + 1;
  features_.resize(rows * timefeat::kFeatureCount);
  for (std::size_t r = 0; r < rows; ++r) {
    auto f = timefeat::extract_features(ds.timestamps[first_ + r]);
    if (mode == timefeat::FeatureMode::scaled) f = timefeat::scale_features(f);
    std::copy(f.begin(), f.end(), features_.begin() + static_cast<std::ptrdiff_t>(r * timefeat::kFeatureCount));
  }
}

Window WindowSet::at(std::size_t i) const {
  const std::size_t idx[1] = {i};
  Batch b = batch(idx);
  const std::size_t c = channels();
  constexpr std::size_t F = timefeat::kFeatureCount;
  return {reshape(b.history, {hist_len_, c}), reshape(b.history_features, {hist_len_, F}),
          reshape(b.future_features, {pred_len_, F}), reshape(b.target, {pred_len_, c}), start(i)};
}

Batch WindowSet::batch(std::span<const std::size_t> indices) const {
  const std::size_t b = indices.size();
  const std::size_t c = channels();
  const std::size_t h = hist_len_;
  const std::size_t p = pred_len_;
  constexpr std::size_t F = timefeat::kFeatureCount;
  Batch out;
  out.history = Tensor::empty({b, h, c});
  out.history_features = Tensor::empty({b, h, F});
  out.future_features = Tensor::empty({b, p, F});
  out.target = Tensor::empty({b, p, c});
  const auto obs = ds_->observations();
  const auto& truth = ds_->values;
  auto xh = out.history.mutable_data();
  auto sh = out.history_features.mutable_data();
  auto st = out.future_features.mutable_data();
  auto yt = out.target.mutable_data();
  for (std::size_t j = 0; j < b; ++j) {
    if (indices[j] >= count_) throw UsageError("window index " + std::to_string(indices[j]) + " out of range");
    const std::size_t s = start(indices[j]);
    const std::size_t local = s - first_;
    std::copy_n(obs.begin() + static_cast<std::ptrdiff_t>(s * c), h * c,
                xh.begin() + static_cast<std::ptrdiff_t>(j * h * c));
    std::copy_n(truth.begin() + static_cast<std::ptrdiff_t>((s + h) * c), p * c,
                yt.begin() + static_cast<std::ptrdiff_t>(j * p * c));
    std::copy_n(features_.begin() + static_cast<std::ptrdiff_t>(local * F), h * F,
                sh.begin() + static_cast<std::ptrdiff_t>(j * h * F));
    std::copy_n(features_.begin() + static_cast<std::ptrdiff_t>((local + h) * F), p * F,
                st.begin() + static_cast<std::ptrdiff_t>(j * p * F));
  }
  return out;
}

Batch WindowSet::range(std::size_t first, std::size_t count) const {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), first);
  return batch(idx);
}

double synth_channel_scale(std::size_t k) { return 1.0 + 0.25 * static_cast<double>(k); }
double synth_channel_phase(std::size_t k) { return 0.5 * static_cast<double>(k); }

Dataset synth_generate(std::size_t n, std::size_t channels, std::int64_t granularity_seconds,
                       const SynthProfile& profile, std::uint64_t seed) {
  if (channels == 0) throw ConfigError("synthetic data needs at least one channel");
  if (granularity_seconds <= 0) throw ConfigError("granularity must be positive");
  if (static_cast<std::int64_t>(n) * granularity_seconds < 7 * 86400) {
    throw ConfigError("synthetic series must cover at least one week, got " + std::to_string(n) + " points");
  }
  if (!(profile.noise >= 0.0)) throw ConfigError("noise level must be non-negative");
  Dataset ds;
  for (std::size_t k = 0; k < channels; ++k) ds.channels.push_back("ch" + std::to_string(k));
  ds.timestamps.reserve(n);
  ds.values.resize(n * channels);
  Rng rng(seed);
  const std::int64_t t0 = timefeat::to_epoch_seconds(profile.start);
  for (std::size_t t = 0; t < n; ++t) {
    const auto ts = timefeat::from_epoch_seconds(t0 + static_cast<std::int64_t>(t) * granularity_seconds);
    ds.timestamps.push_back(ts);
    const double hour = ts.hour + ts.minute / 60.0 + ts.second / 3600.0;
    const double amplitude = timefeat::weekday(ts) < 5 ? profile.weekday_amplitude : profile.weekend_amplitude;
    for (std::size_t k = 0; k < channels; ++k) {
      const double angle = 2.0 * std::numbers::pi * hour / 24.0 + synth_channel_phase(k);
      double v = profile.level + 0.5 * static_cast<double>(k) +
                 synth_channel_scale(k) * amplitude * std::sin(angle) + profile.drift * static_cast<double>(t);
      if (profile.noise > 0.0) v += profile.noise * rng.normal();
      ds.values[t * channels + k] = v;
    }
  }
  return ds;
}

void AnomalySpec::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("anomaly rate must lie in [0, 1]");
  if (!std::isfinite(magnitude) || magnitude < 0.0) throw ConfigError("anomaly magnitude must be non-negative");
}

AnomalySpec AnomalySpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.emplace_back(trim(item));
  if (parts.size() < 3 || parts.size() > 4) {
    throw ConfigError("anomaly spec '" + text + "' is not kind:rate:magnitude[:seed]");
  }
  AnomalySpec spec;
  if (parts[0] == "point") spec.kind = AnomalyKind::point;
  else if (parts[0] == "contextual") spec.kind = AnomalyKind::contextual;
  else throw ConfigError("unknown anomaly kind '" + parts[0] + "'");
  const auto number = [&](const std::string& s, auto& out) {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("anomaly spec '" + text + "': invalid number '" + s + "'");
    }
  };
  number(parts[1], spec.rate);
  number(parts[2], spec.magnitude);
  if (parts.size() == 4) number(parts[3], spec.seed);
  spec.validate();
  return spec;
}

std::string AnomalySpec::str() const {
  return std::string(kind == AnomalyKind::point ? "point" : "contextual") + ":" + io::format_double(rate) + ":" +
         io::format_double(magnitude) + ":" + std::to_string(seed);
}

std::vector<AnomalySpec> parse_anomaly_list(const std::string& text) {
  std::vector<AnomalySpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(AnomalySpec::parse(std::string(trim(item))));
  }
  return out;
}

std::string format_anomaly_list(const std::vector<AnomalySpec>& specs) {
  std::string out;
  for (const auto& s : specs) out += (out.empty() ? "" : ",") + s.str();
  return out;
}

namespace {

// Rows [first, last) of calendar days lying completely inside [lo, hi).
struct Day {
  std::size_t first;
  std::size_t last;
  bool weekday;
};

std::vector<Day> full_days(const Dataset& ds, std::size_t lo, std::size_t hi, std::size_t per_day) {
  std::vector<Day> out;
  std::size_t t = lo;
  while (t < hi) {
    std::size_t e = t + 1;
    const auto& ts = ds.timestamps[t];
    while (e < hi && ds.timestamps[e].year == ts.year && ds.timestamps[e].month == ts.month &&
           ds.timestamps[e].day == ts.day) {
      ++e;
    }
    if (e - t == per_day && per_day >= 2) out.push_back({t, e, timefeat::weekday(ts) < 5});
    t = e;
  }
  return out;
}

}  // namespace

Dataset inject_anomalies(const Dataset& ds, const AnomalySpec& spec, const Split& region, std::size_t hist_len,
                         std::size_t pred_len, InjectionReport* report) {
  spec.validate();
  ds.validate();
  WindowSet windows(ds, region, hist_len, pred_len);
  const std::size_t c = ds.channel_count();

  std::size_t per_day = 0;
  if (ds.length() >= 2) {
    const auto step = timefeat::to_epoch_seconds(ds.timestamps[1]) - timefeat::to_epoch_seconds(ds.timestamps[0]);
    if (step > 0 && 86400 % step == 0) per_day = static_cast<std::size_t>(86400 / step);
  }

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const std::size_t s = windows.start(i);
    if (spec.kind == AnomalyKind::point || !full_days(ds, s, s + hist_len, per_day).empty()) eligible.push_back(i);
  }
  InjectionReport local;
  InjectionReport& rep = report ? *report : local;
  rep = InjectionReport{};
  rep.eligible = eligible.size();
  if (spec.rate == 0.0) return ds;
  if (eligible.empty()) throw ConfigError("no window in the region is eligible for " + spec.str());

  Rng rng(spec.seed);
  rng.shuffle(std::span<std::size_t>(eligible));
  const auto k = static_cast<std::size_t>(std::llround(spec.rate * static_cast<double>(eligible.size())));
  std::vector<std::size_t> chosen(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(chosen.begin(), chosen.end());

  Dataset out = ds;
  if (out.observed.empty()) out.observed = out.values;

  // Clean per-channel location and spread for point anomalies.
  std::vector<double> median(c), iqr(c);
  if (spec.kind == AnomalyKind::point) {
    std::vector<double> col(ds.length());
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t t = 0; t < ds.length(); ++t) col[t] = ds.value(t, ch);
      Tensor v = Tensor::from({col.size()}, std::span<const double>(col));
      median[ch] = median_lower(v).item();
      iqr[ch] = quantile_interp(v, 0.75).item() - quantile_interp(v, 0.25).item();
    }
  }

  for (std::size_t w : chosen) {
    const std::size_t s = windows.start(w);
    rep.windows.push_back(s);
    if (spec.kind == AnomalyKind::point) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t t = s + static_cast<std::size_t>(rng.below(hist_len));
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        out.observed[t * c + ch] = median[ch] + sign * spec.magnitude * iqr[ch];
        rep.rows.push_back(t);
        rep.channels.push_back(ch);
      }
    } else {
      auto days = full_days(ds, s, s + hist_len, per_day);
      std::vector<Day> weekdays;
      std::copy_if(days.begin(), days.end(), std::back_inserter(weekdays), [](const Day& d) { return d.weekday; });
      const auto& pool = weekdays.empty() ? days : weekdays;
      const Day day = pool[static_cast<std::size_t>(rng.below(pool.size()))];
      for (std::size_t ch = 0; ch < c; ++ch) {
        double m = 0.0;
        for (std::size_t t = day.first; t < day.last; ++t) m += ds.value(t, ch);
        m /= static_cast<double>(day.last - day.first);
        for (std::size_t t = day.first; t < day.last; ++t) {
          out.observed[t * c + ch] = m + (ds.value(t, ch) - m) * spec.magnitude;
          rep.rows.push_back(t);
          rep.channels.push_back(ch);
        }
      }
    }
  }
  return out;
}

}  // namespace glaff::data
