#include <doctest.h>

#include <fstream>

#include "fixtures.hpp"
#include "glaff/config.hpp"
#include "glaff/error.hpp"

using glaff::RunConfig;

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.train.lr == 1e-4);
  CHECK(c.train.batch == 32);
  CHECK(c.train.epochs == 10);
  CHECK(c.glaff.quantile == 0.75);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("text form round trips every key") {
  RunConfig c = test::tiny_config();
  glaff::apply_assignment(c, "seed=42");
  glaff::apply_assignment(c, "variant = no_quantile");
  glaff::apply_assignment(c, "data.split=0.7,0.1,0.2");
  glaff::apply_assignment(c, "data.start=2020-02-29 13:00:00");
  glaff::apply_assignment(c, "data.noise=0.123456789");
  glaff::apply_assignment(c, "glaff.features=scaled");
  glaff::apply_assignment(c, "backbone.freeze=true");
  glaff::apply_assignment(c, "anomaly.inject=point:0.1:8,contextual:0.05:3:11");
  const std::string text = glaff::to_config_text(c);
  const RunConfig back = glaff::parse_config(text);
  CHECK(glaff::to_config_text(back) == text);
  CHECK(back.seed == 42);
  CHECK(back.variant == glaff::Variant::no_quantile);
  CHECK(back.data.synth.noise == 0.123456789);
  CHECK(back.backbone.freeze);
  REQUIRE(back.anomalies.size() == 2);
  CHECK(back.anomalies[1].seed == 11);
  CHECK(glaff::config_digest(back) == glaff::config_digest(c));

  // Every registered key appears exactly once in the text.
  for (const auto& key : glaff::config_keys()) {
    const auto dot = key.find('.');
    const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
    CHECK_MESSAGE(("\n" + text).find("\n" + leaf + " = ") != std::string::npos, key);
  }
}

TEST_CASE("sections, comments and blank lines") {
  const RunConfig c = glaff::parse_config("# run\nseed = 3\n\n[glaff]\n; comment\ndim = 16\nheads=4\n[train]\nlr = 0.01\n");
  CHECK(c.seed == 3);
  CHECK(c.glaff.dim == 16);
  CHECK(c.glaff.heads == 4);
  CHECK(c.train.lr == 0.01);
}

TEST_CASE("rejections") {
  RunConfig c;
  CHECK_THROWS_AS(glaff::apply_assignment(c, "nope=1"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::apply_assignment(c, "glaff.dim=-4"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::apply_assignment(c, "glaff.dim=4.5"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::apply_assignment(c, "train.lr=fast"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::apply_assignment(c, "train.lr=nan"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::apply_assignment(c, "backbone.freeze=maybe"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::apply_assignment(c, "backbone.kind=lstm"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::apply_assignment(c, "variant=w/o_everything"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::apply_assignment(c, "seed"), glaff::ConfigError);

  try {
    glaff::parse_config("seed = 1\n\n[glaff]\nwidth = 3\n", "run.cfg");
    FAIL("accepted an unknown key");
  } catch (const glaff::ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:4:") != std::string::npos);
    CHECK(std::string(e.what()).find("glaff.width") != std::string::npos);
  }
  CHECK_THROWS_AS(glaff::parse_config("[glaff\n"), glaff::ConfigError);
  CHECK_THROWS_AS(glaff::parse_config("seed 1\n"), glaff::ConfigError);
}

TEST_CASE("validation") {
  RunConfig c;
  c.hist_len = 0;
  CHECK_THROWS_AS(c.validate(), glaff::ConfigError);
  c = RunConfig{};
  c.glaff.dim = 10;
  c.glaff.heads = 4;
  CHECK_THROWS_AS(c.validate(), glaff::ConfigError);
  c = RunConfig{};
  c.data.source = "csv";
  c.data.path = "/nonexistent/file.csv";
  CHECK_THROWS_AS(c.validate(), glaff::IoError);
}

TEST_CASE("load_config reads files") {
  test::TempDir dir("config");
  {
    std::ofstream(dir / "run.cfg") << "[window]\nhist = 48\npred = 24\n";
  }
  const RunConfig c = glaff::load_config(dir / "run.cfg");
  CHECK(c.hist_len == 48);
  CHECK(c.pred_len == 24);
  CHECK_THROWS_AS(glaff::load_config(dir / "missing.cfg"), glaff::IoError);
}
