// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glaff/backbones.hpp"
#include "glaff/data.hpp"
#include "glaff/model.hpp"
#include "glaff/plugin.hpp"

namespace glaff {

struct DataConfig {
  std::string source = "synth";  // synth | csv
  std::string path;
  std::size_t length = 2240;
  std::size_t channels = 3;
  std::int64_t granularity = 3600;
  std::uint64_t synth_seed = 1;
  data::SynthProfile synth;
  data::SplitSpec split;
  bool reach_back = true;
};

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 32;
  std::size_t epochs = 10;
};

/// Everything that determines a run. Serialized as a sectioned key = value
/// text; every field has a dotted key ("glaff.dim", "train.lr", "seed").
struct RunConfig {
  std::uint64_t seed = 1;
  Variant variant = Variant::full;
  std::size_t hist_len = 96;
  std::size_t pred_len = 96;
  DataConfig data;
  plugin::GlaffConfig glaff;
  backbones::BackboneConfig backbone;
  TrainConfig train;
  std::vector<data::AnomalySpec> anomalies;
  bool metrics_seconds = false;  // copy wall-clock seconds into metrics records

  /// Throws ConfigError (or IoError for a missing data file).
  void validate() const;
  ModelSpec model_spec(std::size_t channels) const;
};

/// Applies one dotted-key override; unknown keys and ill-typed values are
/// rejected with ConfigError.
void apply_override(RunConfig& config, const std::string& key, const std::string& value);
/// "key=value".
void apply_assignment(RunConfig& config, const std::string& assignment);

RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);
/// Complete text form; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const RunConfig& config);

/// Every accepted dotted key, in serialization order.
std::vector<std::string> config_keys();

/// Stable identifier of a configuration (hex digest of its text form).
std::string config_digest(const RunConfig& config);

}  // namespace glaff
