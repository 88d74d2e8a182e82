#include <doctest.h>

#include <json.hpp>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "glaff/error.hpp"
#include "glaff/harness.hpp"
#include "glaff/io.hpp"

namespace h = glaff::harness;
using glaff::RunConfig;
using glaff::Variant;

namespace {

std::vector<double> flat_parameters(const glaff::Forecaster& model) {
  std::vector<double> out;
  for (const auto& p : model.parameters()) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

// Mean squared target over every stride-1 window of a split.
double mean_square_targets(const glaff::data::Dataset& ds, const glaff::data::Split& split, std::size_t hist,
                           std::size_t pred) {
  const std::size_t c = ds.channel_count();
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t start = split.first_row(); start + hist + pred <= split.end; ++start) {
    if (start + hist < split.begin) continue;
    for (std::size_t t = start + hist; t < start + hist + pred; ++t)
      for (std::size_t k = 0; k < c; ++k) {
        sum += ds.value(t, k) * ds.value(t, k);
        ++n;
      }
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("prepared data is standardized with training statistics") {
  const RunConfig cfg = test::tiny_config();
  const auto p = h::prepare_data(cfg);
  CHECK(p.data.length() == cfg.data.length);
  CHECK(p.splits.val.context == cfg.hist_len);
  CHECK(p.splits.test.context == cfg.hist_len);
  for (std::size_t k = 0; k < 2; ++k) {
    double m = 0.0;
    for (std::size_t t = p.splits.train.begin; t < p.splits.train.end; ++t) m += p.data.value(t, k);
    CHECK(m / static_cast<double>(p.splits.train.length()) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  }
  RunConfig no_reach = cfg;
  no_reach.data.reach_back = false;
  CHECK(h::prepare_data(no_reach).splits.test.context == 0);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  RunConfig cfg = test::tiny_config();
  cfg.train.lr = 0.0;
  const auto prepared = h::prepare_data(cfg);
  const auto result = h::train(cfg, prepared);
  glaff::Forecaster fresh(cfg.model_spec(2));
  CHECK(flat_parameters(*result.model) == flat_parameters(fresh));
  CHECK(result.curve.size() == cfg.train.epochs);
}

TEST_CASE("training reduces the error on noiseless periodic data") {
  RunConfig cfg = test::tiny_config();
  cfg.variant = Variant::no_backbone;
  cfg.data.length = 24 * 28;
  cfg.data.synth.noise = 0.0;
  cfg.glaff.dim = 16;
  cfg.glaff.ff_dim = 32;
  cfg.train.epochs = 10;
  const auto prepared = h::prepare_data(cfg);
  glaff::Forecaster untrained(cfg.model_spec(2));
  const double initial = h::evaluate(untrained, prepared.data, prepared.splits.train).mse;
  const auto result = h::train(cfg, prepared);
  const double final_mse = h::evaluate(*result.model, prepared.data, prepared.splits.train).mse;
  MESSAGE("train mse " << initial << " -> " << final_mse);
  CHECK(final_mse <= 0.5 * initial);
  CHECK(result.curve.back().train_loss < result.curve.front().train_loss);
}

TEST_CASE("best validation epoch is restored") {
  RunConfig cfg = test::tiny_config();
  cfg.train.epochs = 3;
  const auto prepared = h::prepare_data(cfg);
  const auto result = h::train(cfg, prepared);
  double best = result.curve.front().val_mse;
  for (const auto& e : result.curve) best = std::min(best, e.val_mse);
  CHECK(result.best_val_mse == best);
  CHECK(result.curve[result.best_epoch - 1].val_mse == best);
  CHECK(h::evaluate(*result.model, prepared.data, prepared.splits.val).mse == best);
}

TEST_CASE("training is deterministic") {
  RunConfig cfg = test::tiny_config();
  const auto prepared = h::prepare_data(cfg);
  const auto a = h::train(cfg, prepared);
  const auto b = h::train(cfg, prepared);
  CHECK(flat_parameters(*a.model) == flat_parameters(*b.model));
  CHECK(h::format_curve(a.curve) == h::format_curve(b.curve));
  cfg.seed = 2;
  const auto c = h::train(cfg, prepared);
  CHECK(flat_parameters(*a.model) != flat_parameters(*c.model));
}

TEST_CASE("divergence names the batch") {
  RunConfig cfg = test::tiny_config();
  cfg.train.lr = 1e300;
  cfg.variant = Variant::backbone;
  const auto prepared = h::prepare_data(cfg);
  try {
    h::train(cfg, prepared);
    FAIL("training did not diverge");
  } catch (const glaff::DivergenceError& e) {
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("evaluation identities") {
  SUBCASE("zero forecast gives the mean squared target") {
    RunConfig cfg = test::tiny_config();
    cfg.variant = Variant::backbone;
    const auto prepared = h::prepare_data(cfg);
    glaff::Forecaster model(cfg.model_spec(2));
    for (auto& p : model.parameters()) {
      for (double& v : p.tensor.mutable_data()) v = 0.0;
    }
    for (const auto* split : {&prepared.splits.train, &prepared.splits.test}) {
      const auto ev = h::evaluate(model, prepared.data, *split);
      CHECK(ev.mse == doctest::Approx(mean_square_targets(prepared.data, *split, 24, 12)).epsilon(1e-12));
      CHECK_FALSE(ev.has_weights);
    }
    CHECK(h::evaluate(model, prepared.data, prepared.splits.train).mse == doctest::Approx(1.0).epsilon(0.1));
  }
  SUBCASE("seasonal naive on an exactly periodic series") {
    RunConfig cfg = test::tiny_config();
    cfg.variant = Variant::backbone;
    cfg.backbone.kind = "naive";
    cfg.backbone.period = 24;
    cfg.data.synth.noise = 0.0;
    cfg.data.synth.weekend_amplitude = cfg.data.synth.weekday_amplitude;
    const auto prepared = h::prepare_data(cfg);
    glaff::Forecaster model(cfg.model_spec(2));
    const auto ev = h::evaluate(model, prepared.data, prepared.splits.test);
    CHECK(ev.mse == 0.0);
    CHECK(ev.mae == 0.0);
  }
  SUBCASE("averaging variant reports weights of one half") {
    RunConfig cfg = test::tiny_config();
    cfg.variant = Variant::no_adaptive;
    const auto prepared = h::prepare_data(cfg);
    glaff::Forecaster model(cfg.model_spec(2));
    const auto ev = h::evaluate(model, prepared.data, prepared.splits.test);
    REQUIRE(ev.has_weights);
    CHECK(ev.weight_min == 0.5);
    CHECK(ev.weight_max == 0.5);
  }
  SUBCASE("adaptive weights are a distribution") {
    RunConfig cfg = test::tiny_config();
    const auto prepared = h::prepare_data(cfg);
    glaff::Forecaster model(cfg.model_spec(2));
    const auto ev = h::evaluate(model, prepared.data, prepared.splits.test);
    REQUIRE(ev.has_weights);
    CHECK(ev.weight_min >= 0.0);
    CHECK(ev.weight_max <= 1.0);
    CHECK(ev.weight_map_mean + ev.weight_pred_mean == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("mlp ablation matches the parameter budget") {
  RunConfig cfg;  // default sizes
  cfg.glaff.dim = 64;
  cfg.glaff.ff_dim = 256;
  cfg.glaff.heads = 4;
  const auto count = [&](Variant v) {
    cfg.variant = v;
    return static_cast<double>(glaff::nn::parameter_count(glaff::Forecaster(cfg.model_spec(3)).parameters()));
  };
  const double full = count(Variant::full);
  const double mlp = count(Variant::no_attention);
  CHECK(std::abs(mlp - full) / full < 0.05);
}

TEST_CASE("pollution touches only the observed copy of the test region") {
  RunConfig cfg = test::tiny_config();
  const auto prepared = h::prepare_data(cfg);
  const auto cond = h::make_condition(glaff::data::parse_anomaly_list("point:0.3:8"));
  CHECK(cond.name == "point:0.3:8:7");
  const auto dirty = h::pollute(prepared.data, cond, prepared.splits.test, 24, 12);
  CHECK(dirty.values == prepared.data.values);
  REQUIRE(dirty.polluted());
  const std::size_t c = 2;
  bool changed = false;
  for (std::size_t t = 0; t < dirty.length(); ++t)
    for (std::size_t k = 0; k < c; ++k) {
      const bool diff = dirty.observed[t * c + k] != dirty.values[t * c + k];
      changed = changed || diff;
      if (diff) CHECK(t >= prepared.splits.test.first_row());
    }
  CHECK(changed);
  CHECK(h::pollute(prepared.data, h::clean_condition(), prepared.splits.test, 24, 12).observed.empty());
}

TEST_CASE("run artifacts") {
  test::TempDir dir("run");
  RunConfig cfg = test::tiny_config();
  cfg.anomalies = glaff::data::parse_anomaly_list("point:0.1:8");
  const auto outcome = h::run_train(cfg, dir.path());
  for (const char* f : {"config.ini", "model.ckpt", "metrics.jsonl", "curve.csv", "timing.jsonl"}) {
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  }
  // The snapshot replays the run.
  const RunConfig replay = glaff::load_config(dir / "config.ini");
  CHECK(glaff::config_digest(replay) == glaff::config_digest(cfg));

  std::istringstream metrics(glaff::io::read_file(dir / "metrics.jsonl"));
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(metrics, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["condition"] == "clean");
  CHECK(rows[1]["condition"] == "point:0.1:8:7");
  CHECK(rows[0]["horizon"] == 12);
  CHECK_FALSE(rows[0].contains("seconds"));
  CHECK(rows[0]["mse"].get<double>() >= 0.0);

  const std::string curve = glaff::io::read_file(dir / "curve.csv");
  CHECK(curve.rfind("epoch,train_loss,val_mse\n", 0) == 0);
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 3);

  // Evaluating the checkpoint on the test split reproduces the clean metrics.
  test::TempDir eval_dir("eval");
  const auto records = h::run_evaluate(replay, dir / "model.ckpt", eval_dir.path(), "test");
  REQUIRE(records.size() == 2);
  CHECK(records[0].mse == doctest::Approx(rows[0]["mse"].get<double>()).epsilon(1e-6));

  RunConfig other = replay;
  other.data.channels = 3;
  CHECK_THROWS_AS(h::run_evaluate(other, dir / "model.ckpt", eval_dir.path()), glaff::CheckpointError);
  CHECK_THROWS_AS(h::run_evaluate(replay, dir / "model.ckpt", eval_dir.path(), "holdout"), glaff::ConfigError);
}

TEST_CASE("ablation table") {
  RunConfig cfg = test::tiny_config();
  cfg.train.epochs = 1;
  const std::vector<Variant> variants{Variant::full, Variant::no_quantile};
  const std::vector<std::uint64_t> seeds{1, 2};
  const std::vector<h::Condition> conditions{h::clean_condition(),
                                             h::make_condition(glaff::data::parse_anomaly_list("point:0.1:8"))};
  const auto serial = h::ablate(cfg, variants, seeds, conditions, {}, 1);
  CHECK(serial.variants == std::vector<std::string>{"full", "no_quantile"});
  CHECK(serial.conditions.size() == 2);
  CHECK(serial.cells.size() == 4);
  CHECK(serial.cell(1, 1).mse.size() == 2);
  const auto threaded = h::ablate(cfg, variants, seeds, conditions, {}, 3);
  CHECK(h::format_ablation_csv(serial) == h::format_ablation_csv(threaded));

  // A single-seed cell equals a standalone training with that seed.
  RunConfig single = cfg;
  single.seed = 2;
  single.variant = Variant::no_quantile;
  const auto prepared = h::prepare_data(single);
  auto trained = h::train(single, prepared);
  CHECK(h::evaluate(*trained.model, prepared.data, prepared.splits.test).mse == serial.cell(0, 1).mse[1]);

  const std::string md = h::format_ablation_markdown(serial);
  CHECK(md.find("| full MSE | full MAE | no_quantile MSE | no_quantile MAE |") != std::string::npos);
}

TEST_CASE("summary statistics") {
  CHECK(h::mean_of({1.0, 2.0, 6.0}) == 3.0);
  CHECK(h::stddev_of({1.0, 2.0, 6.0}) == doctest::Approx(std::sqrt(7.0)));
  CHECK(h::stddev_of({4.0}) == 0.0);
  CHECK(h::resolve_jobs(3) == 3);
  CHECK(h::resolve_jobs(0) >= 1);
}
