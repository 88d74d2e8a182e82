// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "glaff/model.hpp"

namespace glaff {

/// Binary layout: "GLAFFCKP", u32 version, u64 manifest length, JSON
/// manifest, then the parameters as little-endian float32 in manifest order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Forecaster& model);
std::unique_ptr<Forecaster> deserialize_checkpoint(const std::string& bytes, const std::string& source = "checkpoint");

void save_checkpoint(const Forecaster& model, const std::filesystem::path& path);
std::unique_ptr<Forecaster> load_checkpoint(const std::filesystem::path& path);

/// Reads only the model spec stored in a checkpoint.
ModelSpec checkpoint_spec(const std::filesystem::path& path);

/// Throws CheckpointError unless the model fits windows of the given shape.
void check_compatible(const ModelSpec& spec, std::size_t channels, std::size_t hist_len, std::size_t pred_len);

}  // namespace glaff
