// SPDX-License-Identifier: Apache-2.0
#include "glaff/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "glaff/error.hpp"
#include "glaff/io.hpp"

namespace glaff {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

template <class T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, std::is_signed_v<T> ? "an integer" : "a non-negative integer");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out)) {
    bad_value(key, value, "a finite number");
  }
  return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

std::string show(bool v) { return v ? "true" : "false"; }
std::string show(double v) { return io::format_double(v); }
template <class T>
  requires std::is_integral_v<T>
std::string show(T v) {
  return std::to_string(v);
}

// Field bound to a member reached through `access`.
template <class T, class Access>
Field field(std::string key, Access access) {
  Field f;
  f.key = key;
  f.get = [access](const RunConfig& c) { return show(access(const_cast<RunConfig&>(c))); };
  f.set = [access, key](RunConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) access(c) = parse_flag(key, v);
    else if constexpr (std::is_same_v<T, double>) access(c) = parse_real(key, v);
    else access(c) = parse_integer<T>(key, v);
  };
  return f;
}

Field text(std::string key, std::function<std::string&(RunConfig&)> access) {
  return {key, [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); },
          [access](RunConfig& c, const std::string& v) { access(c) = v; }};
}

const std::vector<Field>& registry() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back(field<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.seed; }));
    f.push_back({"variant", [](const RunConfig& c) { return std::string(variant_name(c.variant)); },
                 [](RunConfig& c, const std::string& v) { c.variant = parse_variant(v); }});
    f.push_back(field<std::size_t>("window.hist", [](RunConfig& c) -> auto& { return c.hist_len; }));
    f.push_back(field<std::size_t>("window.pred", [](RunConfig& c) -> auto& { return c.pred_len; }));
    f.push_back({"data.source", [](const RunConfig& c) { return c.data.source; },
                 [](RunConfig& c, const std::string& v) {
                   if (v != "synth" && v != "csv") bad_value("data.source", v, "synth or csv");
                   c.data.source = v;
                 }});
    f.push_back(text("data.path", [](RunConfig& c) -> std::string& { return c.data.path; }));
    f.push_back(field<std::size_t>("data.length", [](RunConfig& c) -> auto& { return c.data.length; }));
    f.push_back(field<std::size_t>("data.channels", [](RunConfig& c) -> auto& { return c.data.channels; }));
    f.push_back(field<std::int64_t>("data.granularity", [](RunConfig& c) -> auto& { return c.data.granularity; }));
    f.push_back(field<std::uint64_t>("data.synth_seed", [](RunConfig& c) -> auto& { return c.data.synth_seed; }));
    f.push_back({"data.start", [](const RunConfig& c) { return timefeat::format_timestamp(c.data.synth.start); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.data.synth.start = timefeat::parse_timestamp(v);
                   } catch (const ParseError& e) {
                     throw ConfigError(std::string("data.start: ") + e.what());
                   }
                 }});
    f.push_back(field<double>("data.weekday_amplitude",
                              [](RunConfig& c) -> auto& { return c.data.synth.weekday_amplitude; }));
    f.push_back(field<double>("data.weekend_amplitude",
                              [](RunConfig& c) -> auto& { return c.data.synth.weekend_amplitude; }));
    f.push_back(field<double>("data.noise", [](RunConfig& c) -> auto& { return c.data.synth.noise; }));
    f.push_back(field<double>("data.drift", [](RunConfig& c) -> auto& { return c.data.synth.drift; }));
    f.push_back(field<double>("data.level", [](RunConfig& c) -> auto& { return c.data.synth.level; }));
    f.push_back({"data.split",
                 [](const RunConfig& c) {
                   return show(c.data.split.train) + "," + show(c.data.split.val) + "," + show(c.data.split.test);
                 },
                 [](RunConfig& c, const std::string& v) { c.data.split = data::SplitSpec::parse(v); }});
    f.push_back(field<bool>("data.reach_back", [](RunConfig& c) -> auto& { return c.data.reach_back; }));
    f.push_back(field<std::size_t>("glaff.dim", [](RunConfig& c) -> auto& { return c.glaff.dim; }));
    f.push_back(field<std::size_t>("glaff.ff_dim", [](RunConfig& c) -> auto& { return c.glaff.ff_dim; }));
    f.push_back(field<std::size_t>("glaff.heads", [](RunConfig& c) -> auto& { return c.glaff.heads; }));
    f.push_back(field<std::size_t>("glaff.layers", [](RunConfig& c) -> auto& { return c.glaff.layers; }));
    f.push_back(field<double>("glaff.dropout", [](RunConfig& c) -> auto& { return c.glaff.dropout; }));
    f.push_back(field<double>("glaff.quantile", [](RunConfig& c) -> auto& { return c.glaff.quantile; }));
    f.push_back({"glaff.features",
                 [](const RunConfig& c) { return std::string(timefeat::feature_mode_name(c.glaff.feature_mode)); },
                 [](RunConfig& c, const std::string& v) { c.glaff.feature_mode = timefeat::parse_feature_mode(v); }});
    f.push_back({"backbone.kind", [](const RunConfig& c) { return c.backbone.kind; },
                 [](RunConfig& c, const std::string& v) {
                   if (v != "dlinear" && v != "naive") bad_value("backbone.kind", v, "dlinear or naive");
                   c.backbone.kind = v;
                 }});
    f.push_back(field<std::size_t>("backbone.kernel", [](RunConfig& c) -> auto& { return c.backbone.kernel; }));
    f.push_back(field<std::size_t>("backbone.period", [](RunConfig& c) -> auto& { return c.backbone.period; }));
    f.push_back(field<bool>("backbone.freeze", [](RunConfig& c) -> auto& { return c.backbone.freeze; }));
    f.push_back(field<double>("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; }));
    f.push_back(field<std::size_t>("train.batch", [](RunConfig& c) -> auto& { return c.train.batch; }));
    f.push_back(field<std::size_t>("train.epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    f.push_back({"anomaly.inject", [](const RunConfig& c) { return data::format_anomaly_list(c.anomalies); },
                 [](RunConfig& c, const std::string& v) { c.anomalies = data::parse_anomaly_list(v); }});
    f.push_back(field<bool>("metrics.seconds", [](RunConfig& c) -> auto& { return c.metrics_seconds; }));
    return f;
  }();
  return fields;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : registry()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::validate() const {
  if (hist_len == 0 || pred_len == 0) throw ConfigError("window.hist and window.pred must be positive");
  if (train.batch == 0) throw ConfigError("train.batch must be positive");
  if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
  if (!(train.lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
  data.split.validate();
  if (data.source == "csv") {
    if (data.path.empty()) throw ConfigError("data.path is required when data.source = csv");
    if (!std::filesystem::exists(data.path)) throw IoError("data file " + data.path + " does not exist");
  } else if (data.source == "synth") {
    if (data.channels == 0) throw ConfigError("data.channels must be positive");
    if (data.granularity <= 0) throw ConfigError("data.granularity must be positive");
  } else {
    throw ConfigError("data.source must be synth or csv");
  }
  for (const auto& a : anomalies) a.validate();
  model_spec(1).validate();
}

ModelSpec RunConfig::model_spec(std::size_t channels) const {
  ModelSpec spec;
  spec.variant = variant;
  spec.glaff = glaff;
  spec.glaff.ablations = ablations_for(variant);
  spec.backbone = backbone;
  spec.hist_len = hist_len;
  spec.pred_len = pred_len;
  spec.channels = channels;
  spec.seed = seed;
  return spec;
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
  find_field(key).set(config, trim(value));
}

void apply_assignment(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_override(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      apply_override(config, full, t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(io::read_file(path), path.string()); }

std::string to_config_text(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : registry()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string key = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : registry()) keys.push_back(f.key);
  return keys;
}

std::string config_digest(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : to_config_text(config)) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace glaff
