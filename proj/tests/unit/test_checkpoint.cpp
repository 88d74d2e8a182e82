#include <doctest.h>

#include <cstring>

#include "fixtures.hpp"
#include "glaff/checkpoint.hpp"
#include "glaff/error.hpp"
#include "glaff/harness.hpp"
#include "glaff/io.hpp"

using glaff::Forecaster;

namespace {

glaff::ModelSpec small_spec() {
  return test::tiny_config().model_spec(2);
}

}  // namespace

TEST_CASE("save, load, save is byte-identical") {
  for (auto variant : {glaff::Variant::full, glaff::Variant::backbone, glaff::Variant::no_attention,
                       glaff::Variant::no_backbone}) {
    glaff::RunConfig cfg = test::tiny_config();
    cfg.variant = variant;
    Forecaster model(cfg.model_spec(2));
    const std::string first = glaff::serialize_checkpoint(model);
    auto loaded = glaff::deserialize_checkpoint(first);
    CHECK(loaded->spec().variant == variant);
    CHECK(glaff::serialize_checkpoint(*loaded) == first);

    // Parameters equal the originals rounded to f32.
    const auto a = model.parameters();
    const auto b = loaded->parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].name == b[i].name);
      const auto x = a[i].tensor.data();
      const auto y = b[i].tensor.data();
      REQUIRE(x.size() == y.size());
      for (std::size_t j = 0; j < x.size(); ++j) CHECK(y[j] == static_cast<double>(static_cast<float>(x[j])));
    }
  }
}

TEST_CASE("file round trip and spec access") {
  test::TempDir dir("ckpt");
  Forecaster model(small_spec());
  glaff::save_checkpoint(model, dir / "m.ckpt");
  const auto spec = glaff::checkpoint_spec(dir / "m.ckpt");
  CHECK(spec.channels == 2);
  CHECK(spec.hist_len == 24);
  CHECK(spec.glaff.dim == 8);
  auto loaded = glaff::load_checkpoint(dir / "m.ckpt");
  glaff::save_checkpoint(*loaded, dir / "n.ckpt");
  CHECK(glaff::io::read_file(dir / "m.ckpt") == glaff::io::read_file(dir / "n.ckpt"));
  CHECK_THROWS_AS(glaff::load_checkpoint(dir / "absent.ckpt"), glaff::CheckpointError);
}

TEST_CASE("compatibility checks") {
  const auto spec = small_spec();
  CHECK_NOTHROW(glaff::check_compatible(spec, 2, 24, 12));
  CHECK_THROWS_AS(glaff::check_compatible(spec, 3, 24, 12), glaff::CheckpointError);
  CHECK_THROWS_AS(glaff::check_compatible(spec, 2, 48, 12), glaff::CheckpointError);
  CHECK_THROWS_AS(glaff::check_compatible(spec, 2, 24, 24), glaff::CheckpointError);
}

TEST_CASE("malformed files are rejected") {
  Forecaster model(small_spec());
  const std::string bytes = glaff::serialize_checkpoint(model);

  CHECK_THROWS_AS(glaff::deserialize_checkpoint(bytes.substr(0, bytes.size() - 4)), glaff::CheckpointError);
  CHECK_THROWS_AS(glaff::deserialize_checkpoint(bytes.substr(0, 10)), glaff::CheckpointError);
  CHECK_THROWS_AS(glaff::deserialize_checkpoint(bytes + "x"), glaff::CheckpointError);
  CHECK_THROWS_AS(glaff::deserialize_checkpoint(""), glaff::CheckpointError);

  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(glaff::deserialize_checkpoint(magic), glaff::CheckpointError);

  std::string version = bytes;
  version[8] = 9;
  CHECK_THROWS_AS(glaff::deserialize_checkpoint(version), glaff::CheckpointError);

  // A manifest shape that disagrees with the spec.
  std::string shape = bytes;
  const auto pos = shape.find("\"shape\":[");
  REQUIRE(pos != std::string::npos);
  const auto digit = shape.find_first_of("0123456789", pos);
  shape[digit] = shape[digit] == '9' ? '8' : static_cast<char>(shape[digit] + 1);
  CHECK_THROWS_AS(glaff::deserialize_checkpoint(shape), glaff::CheckpointError);
}

TEST_CASE("evaluation survives the round trip") {
  glaff::RunConfig cfg = test::tiny_config();
  cfg.train.epochs = 1;
  const auto prepared = glaff::harness::prepare_data(cfg);
  auto trained = glaff::harness::train(cfg, prepared);
  const auto before = glaff::harness::evaluate(*trained.model, prepared.data, prepared.splits.test);
  auto loaded = glaff::deserialize_checkpoint(glaff::serialize_checkpoint(*trained.model));
  const auto after = glaff::harness::evaluate(*loaded, prepared.data, prepared.splits.test);
  CHECK(after.mse == doctest::Approx(before.mse).epsilon(1e-6));
  CHECK(after.mae == doctest::Approx(before.mae).epsilon(1e-6));
}
