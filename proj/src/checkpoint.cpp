// SPDX-License-Identifier: Apache-2.0
#include "glaff/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "glaff/error.hpp"
#include "glaff/io.hpp"

namespace glaff {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'G', 'L', 'A', 'F', 'F', 'C', 'K', 'P'};
constexpr std::size_t kHeader = sizeof kMagic + 4 + 8;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

json spec_to_json(const ModelSpec& s) {
  return json{
      {"variant", std::string(variant_name(s.variant))},
      {"hist_len", s.hist_len},
      {"pred_len", s.pred_len},
      {"channels", s.channels},
      {"seed", s.seed},
      {"glaff",
       {{"dim", s.glaff.dim},
        {"ff_dim", s.glaff.ff_dim},
        {"heads", s.glaff.heads},
        {"layers", s.glaff.layers},
        {"dropout", s.glaff.dropout},
        {"quantile", s.glaff.quantile},
        {"features", std::string(timefeat::feature_mode_name(s.glaff.feature_mode))}}},
      {"backbone",
       {{"kind", s.backbone.kind},
        {"kernel", s.backbone.kernel},
        {"period", s.backbone.period},
        {"freeze", s.backbone.freeze}}},
  };
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.hist_len = j.at("hist_len").get<std::size_t>();
  s.pred_len = j.at("pred_len").get<std::size_t>();
  s.channels = j.at("channels").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& g = j.at("glaff");
  s.glaff.dim = g.at("dim").get<std::size_t>();
  s.glaff.ff_dim = g.at("ff_dim").get<std::size_t>();
  s.glaff.heads = g.at("heads").get<std::size_t>();
  s.glaff.layers = g.at("layers").get<std::size_t>();
  s.glaff.dropout = g.at("dropout").get<double>();
  s.glaff.quantile = g.at("quantile").get<double>();
  s.glaff.feature_mode = timefeat::parse_feature_mode(g.at("features").get<std::string>());
  s.glaff.ablations = ablations_for(s.variant);
  const auto& b = j.at("backbone");
  s.backbone.kind = b.at("kind").get<std::string>();
  s.backbone.kernel = b.at("kernel").get<std::size_t>();
  s.backbone.period = b.at("period").get<std::size_t>();
  s.backbone.freeze = b.at("freeze").get<bool>();
  return s;
}

struct Parsed {
  json manifest;
  std::size_t payload = 0;  // byte offset of the payload
};

Parsed parse_header(const std::string& bytes, const std::string& source) {
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(source + ": not a checkpoint file");
  }
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&length, bytes.data() + 12, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (length > bytes.size() - kHeader) throw CheckpointError(source + ": truncated manifest");
  Parsed out;
  try {
    out.manifest = json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + length));
  } catch (const json::exception& e) {
    throw CheckpointError(source + ": malformed manifest: " + e.what());
  }
  out.payload = kHeader + length;
  return out;
}

ModelSpec manifest_spec(const json& manifest, const std::string& source) {
  try {
    return spec_from_json(manifest.at("model"));
  } catch (const json::exception& e) {
    throw CheckpointError(source + ": malformed model spec: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(source + ": invalid model spec: " + e.what());
  }
}

}  // namespace

std::string serialize_checkpoint(const Forecaster& model) {
  json tensors = json::array();
  std::string payload;
  for (const auto& p : model.parameters()) {
    const auto values = p.tensor.data();
    const std::size_t offset = payload.size();
    for (double v : values) {
      const float f = static_cast<float>(v);
      char raw[4];
      std::memcpy(raw, &f, 4);
      payload.append(raw, 4);
    }
    tensors.push_back(json{{"name", p.name},
                           {"shape", p.tensor.shape()},
                           {"dtype", "f32"},
                           {"offset", offset},
                           {"nbytes", values.size() * 4}});
  }
  const json manifest{{"format", "glaff-checkpoint"}, {"model", spec_to_json(model.spec())}, {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::string out(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  out.append(reinterpret_cast<const char*>(&version), 4);
  out.append(reinterpret_cast<const char*>(&length), 8);
  out += text;
  out += payload;
  return out;
}

std::unique_ptr<Forecaster> deserialize_checkpoint(const std::string& bytes, const std::string& source) {
  const Parsed parsed = parse_header(bytes, source);
  const ModelSpec spec = manifest_spec(parsed.manifest, source);
  auto model = std::make_unique<Forecaster>(spec);
  const auto params = model->parameters();

  const json* tensors = nullptr;
  try {
    tensors = &parsed.manifest.at("tensors");
  } catch (const json::exception&) {
    throw CheckpointError(source + ": manifest lists no tensors");
  }
  if (!tensors->is_array() || tensors->size() != params.size()) {
    throw CheckpointError(source + ": manifest lists " + std::to_string(tensors->size()) + " tensors, model has " +
                          std::to_string(params.size()));
  }
  const std::size_t available = bytes.size() - parsed.payload;
  std::size_t expected_end = 0;
  // Validate the whole manifest before touching any parameter.
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = (*tensors)[i];
    const auto& p = params[i];
    try {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      if (name != p.name) throw CheckpointError(source + ": tensor " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
      if (dtype != "f32") throw CheckpointError(source + ": tensor '" + name + "' has dtype " + dtype + ", expected f32");
      if (shape != p.tensor.shape()) {
        throw CheckpointError(source + ": tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                              shape_str(p.tensor.shape()));
      }
      if (nbytes != p.tensor.numel() * 4 || offset != expected_end) {
        throw CheckpointError(source + ": tensor '" + name + "' has an inconsistent byte range");
      }
      expected_end = offset + nbytes;
    } catch (const json::exception& e) {
      throw CheckpointError(source + ": malformed tensor entry " + std::to_string(i) + ": " + e.what());
    }
  }
  if (expected_end > available) throw CheckpointError(source + ": truncated payload");
  if (expected_end < available) throw CheckpointError(source + ": trailing bytes after payload");

  const char* base = bytes.data() + parsed.payload;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    auto dst = t.mutable_data();
    for (double& v : dst) {
      float f;
      std::memcpy(&f, base, 4);
      base += 4;
      v = static_cast<double>(f);
    }
  }
  return model;
}

void save_checkpoint(const Forecaster& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_checkpoint(model));
}

std::unique_ptr<Forecaster> load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return deserialize_checkpoint(bytes, path.string());
}

ModelSpec checkpoint_spec(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = io::read_file(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return manifest_spec(parse_header(bytes, path.string()).manifest, path.string());
}

void check_compatible(const ModelSpec& spec, std::size_t channels, std::size_t hist_len, std::size_t pred_len) {
  if (spec.channels != channels) {
    throw CheckpointError("checkpoint was trained on " + std::to_string(spec.channels) + " channels, dataset has " +
                          std::to_string(channels));
  }
  if (spec.hist_len != hist_len || spec.pred_len != pred_len) {
    throw CheckpointError("checkpoint window " + std::to_string(spec.hist_len) + "/" + std::to_string(spec.pred_len) +
                          " does not match requested " + std::to_string(hist_len) + "/" + std::to_string(pred_len));
  }
}

}  // namespace glaff
