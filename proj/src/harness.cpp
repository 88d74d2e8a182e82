// SPDX-License-Identifier: Apache-2.0
#include "glaff/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "glaff/checkpoint.hpp"
#include "glaff/error.hpp"
#include "glaff/io.hpp"
#include "glaff/ops.hpp"

namespace glaff::harness {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

void emit(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

std::vector<std::vector<double>> snapshot(const nn::ParameterList& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.to_vector());
  return out;
}

void restore(const nn::ParameterList& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

PreparedData prepare_data(const RunConfig& config) {
  config.validate();
  data::Dataset raw;
  if (config.data.source == "csv") {
    raw = data::load_csv(config.data.path);
  } else {
    raw = data::synth_generate(config.data.length, config.data.channels, config.data.granularity, config.data.synth,
                               config.data.synth_seed);
  }
  const std::size_t reach = config.data.reach_back ? config.hist_len : 0;
  auto splits = data::chrono_split(raw, config.data.split, reach);
  auto standardized = data::standardize(raw, splits.train);
  return {std::move(standardized.data), splits, std::move(standardized.mean), std::move(standardized.std)};
}

Condition clean_condition() { return {"clean", {}}; }

Condition make_condition(const std::vector<data::AnomalySpec>& anomalies) {
  if (anomalies.empty()) return clean_condition();
  return {data::format_anomaly_list(anomalies), anomalies};
}

data::Dataset pollute(const data::Dataset& ds, const Condition& condition, const data::Split& region,
                      std::size_t hist_len, std::size_t pred_len) {
  data::Dataset out = ds;
  for (const auto& spec : condition.anomalies) out = data::inject_anomalies(out, spec, region, hist_len, pred_len);
  return out;
}

TrainResult train(const RunConfig& config, const PreparedData& prepared, const LogFn& log) {
  const auto start = Clock::now();
  const std::size_t channels = prepared.data.channel_count();
  const auto mode = config.glaff.feature_mode;
  data::WindowSet train_set(prepared.data, prepared.splits.train, config.hist_len, config.pred_len, 1, mode);
  data::WindowSet val_set(prepared.data, prepared.splits.val, config.hist_len, config.pred_len, 1, mode);

  TrainResult result;
  result.model = std::make_unique<Forecaster>(config.model_spec(channels));
  Forecaster& model = *result.model;
  const auto params = model.parameters();
  nn::Adam adam(model.trainable(), {.lr = config.train.lr});

  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(train_set.size());
  std::vector<std::vector<double>> best;
  result.best_val_mse = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += config.train.batch, ++batch_index) {
      const std::size_t count = std::min(config.train.batch, order.size() - first);
      const auto batch = train_set.batch(std::span<const std::size_t>(order).subspan(first, count));
      Graph graph;
      double loss_value = 0.0;
      {
        GraphScope scope(graph);
        const auto pred = model.forward(batch, true);
        const Tensor loss = mse_loss(pred.value, batch.target);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch_index));
        }
        if (loss.requires_grad()) graph.backward(loss);
      }
      adam.step();
      adam.zero_grad();
      loss_sum += loss_value * static_cast<double>(count);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    const double val_mse = evaluate(model, prepared.data, prepared.splits.val, config.train.batch).mse;
    if (!std::isfinite(val_mse)) {
      throw DivergenceError("non-finite validation error after epoch " + std::to_string(epoch));
    }
    result.curve.push_back({epoch, train_loss, val_mse});
    if (val_mse < result.best_val_mse) {
      result.best_val_mse = val_mse;
      result.best_epoch = epoch;
      best = snapshot(params);
    }
    emit(log, "epoch " + std::to_string(epoch) + " train_loss " + fixed(train_loss, 6) + " val_mse " +
                  fixed(val_mse, 6) + " (" + fixed(elapsed(start), 1) + "s)");
  }
  restore(params, best);
  result.seconds = elapsed(start);
  return result;
}

Evaluation evaluate(Forecaster& model, const data::Dataset& ds, const data::Split& split, std::size_t batch) {
  const auto& spec = model.spec();
  check_compatible(spec, ds.channel_count(), spec.hist_len, spec.pred_len);
  data::WindowSet set(ds, split, spec.hist_len, spec.pred_len, 1, spec.glaff.feature_mode);
  Evaluation ev;
  ev.windows = set.size();
  double se = 0.0;
  double ae = 0.0;
  double wmap = 0.0;
  double wpred = 0.0;
  ev.weight_min = std::numeric_limits<double>::infinity();
  ev.weight_max = -std::numeric_limits<double>::infinity();
  std::size_t weight_pairs = 0;
  for (std::size_t first = 0; first < set.size(); first += batch) {
    const std::size_t count = std::min(batch, set.size() - first);
    const auto b = set.range(first, count);
    const auto pred = model.forward(b, false);
    const auto y = pred.value.data();
    const auto t = b.target.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double e = y[i] - t[i];
      se += e * e;
      ae += std::abs(e);
    }
    if (pred.weights.defined()) {
      ev.has_weights = true;
      const auto w = pred.weights.data();
      for (std::size_t i = 0; i + 1 < w.size(); i += 2) {
        wmap += w[i];
        wpred += w[i + 1];
        ev.weight_min = std::min({ev.weight_min, w[i], w[i + 1]});
        ev.weight_max = std::max({ev.weight_max, w[i], w[i + 1]});
        ++weight_pairs;
      }
    }
  }
  const double n = static_cast<double>(set.size() * spec.pred_len * spec.channels);
  ev.mse = se / n;
  ev.mae = ae / n;
  if (weight_pairs > 0) {
    ev.weight_map_mean = wmap / static_cast<double>(weight_pairs);
    ev.weight_pred_mean = wpred / static_cast<double>(weight_pairs);
  } else {
    ev.weight_min = ev.weight_max = 0.0;
  }
  return ev;
}

std::string format_metrics(const std::vector<MetricsRecord>& records, bool with_seconds) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j{{"run_id", r.run_id},       {"variant", r.variant}, {"seed", r.seed},
                             {"horizon", r.horizon},     {"condition", r.condition},
                             {"mse", r.mse},             {"mae", r.mae}};
    if (with_seconds) j["seconds"] = r.seconds;
    out += j.dump() + "\n";
  }
  return out;
}

std::string format_curve(const std::vector<EpochRecord>& curve) {
  std::string out = "epoch,train_loss,val_mse\n";
  for (const auto& e : curve) {
    out += std::to_string(e.epoch) + "," + io::format_double(e.train_loss) + "," + io::format_double(e.val_mse) + "\n";
  }
  return out;
}

std::vector<Condition> run_conditions(const RunConfig& config) {
  std::vector<Condition> out{clean_condition()};
  if (!config.anomalies.empty()) out.push_back(make_condition(config.anomalies));
  return out;
}

namespace {

std::vector<Evaluation> evaluate_conditions(Forecaster& model, const RunConfig& config, const PreparedData& prepared,
                                            const std::vector<Condition>& conditions, const data::Split& split) {
  std::vector<Evaluation> out;
  for (const auto& cond : conditions) {
    const auto ds = pollute(prepared.data, cond, split, config.hist_len, config.pred_len);
    out.push_back(evaluate(model, ds, split, config.train.batch));
  }
  return out;
}

std::string timing_line(const std::string& run_id, const std::string& phase, double seconds) {
  nlohmann::ordered_json j{{"run_id", run_id}, {"phase", phase}, {"seconds", seconds}};
  return j.dump() + "\n";
}

}  // namespace

RunOutcome run_train(const RunConfig& config, const std::filesystem::path& out_dir, const LogFn& log) {
  config.validate();
  RunOutcome outcome;
  outcome.run_id = config_digest(config);
  io::write_file_atomic(out_dir / "config.ini", to_config_text(config));

  const auto prepared = prepare_data(config);
  emit(log, "run " + outcome.run_id + ": " + std::string(variant_name(config.variant)) + ", " +
                std::to_string(prepared.data.length()) + " rows x " + std::to_string(prepared.data.channel_count()) +
                " channels");
  outcome.training = train(config, prepared, log);
  save_checkpoint(*outcome.training.model, out_dir / "model.ckpt");

  const auto eval_start = Clock::now();
  outcome.conditions = run_conditions(config);
  outcome.evaluations =
      evaluate_conditions(*outcome.training.model, config, prepared, outcome.conditions, prepared.splits.test);
  const double eval_seconds = elapsed(eval_start);

  for (std::size_t i = 0; i < outcome.conditions.size(); ++i) {
    const auto& ev = outcome.evaluations[i];
    outcome.records.push_back({outcome.run_id, std::string(variant_name(config.variant)), config.seed,
                               config.pred_len, outcome.conditions[i].name, ev.mse, ev.mae,
                               outcome.training.seconds + eval_seconds});
    emit(log, "test " + outcome.conditions[i].name + ": mse " + fixed(ev.mse, 6) + " mae " + fixed(ev.mae, 6));
  }
  io::write_file_atomic(out_dir / "metrics.jsonl", format_metrics(outcome.records, config.metrics_seconds));
  io::write_file_atomic(out_dir / "curve.csv", format_curve(outcome.training.curve));
  io::write_file_atomic(out_dir / "timing.jsonl", timing_line(outcome.run_id, "train", outcome.training.seconds) +
                                                      timing_line(outcome.run_id, "evaluate", eval_seconds));
  return outcome;
}

const data::Split& split_named(const PreparedData& prepared, const std::string& name) {
  if (name == "train") return prepared.splits.train;
  if (name == "val") return prepared.splits.val;
  if (name == "test") return prepared.splits.test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<MetricsRecord> run_evaluate(const RunConfig& config, const std::filesystem::path& checkpoint,
                                        const std::filesystem::path& out_dir, const std::string& split,
                                        const LogFn& log) {
  config.validate();
  const auto start = Clock::now();
  auto model = load_checkpoint(checkpoint);
  const auto prepared = prepare_data(config);
  const auto& region = split_named(prepared, split);
  check_compatible(model->spec(), prepared.data.channel_count(), config.hist_len, config.pred_len);
  const auto conditions = run_conditions(config);
  const auto evals = evaluate_conditions(*model, config, prepared, conditions, region);
  const double seconds = elapsed(start);
  const std::string run_id = config_digest(config);
  std::vector<MetricsRecord> records;
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    records.push_back({run_id, std::string(variant_name(model->spec().variant)), model->spec().seed,
                       config.pred_len, conditions[i].name, evals[i].mse, evals[i].mae, seconds});
    emit(log, split + " " + conditions[i].name + ": mse " + fixed(evals[i].mse, 6) + " mae " + fixed(evals[i].mae, 6));
  }
  io::write_file_atomic(out_dir / "metrics.jsonl", format_metrics(records, config.metrics_seconds));
  io::write_file_atomic(out_dir / "timing.jsonl", timing_line(run_id, "evaluate", seconds));
  return records;
}

std::size_t resolve_jobs(std::size_t jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

AblationTable ablate(const RunConfig& base, const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                     const std::vector<Condition>& conditions, const LogFn& log, std::size_t jobs) {
  if (variants.empty()) throw ConfigError("ablation needs at least one variant");
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (conditions.empty()) throw ConfigError("ablation needs at least one condition");
  base.validate();
  const auto prepared = prepare_data(base);

  AblationTable table;
  table.horizon = base.pred_len;
  table.seeds = seeds;
  for (const auto& c : conditions) table.conditions.push_back(c.name);
  for (auto v : variants) table.variants.emplace_back(variant_name(v));
  table.cells.resize(conditions.size() * variants.size());
  for (std::size_t r = 0; r < conditions.size(); ++r) {
    for (std::size_t c = 0; c < variants.size(); ++c) {
      auto& cell = table.cells[r * variants.size() + c];
      cell.condition = table.conditions[r];
      cell.variant = table.variants[c];
      cell.mse.assign(seeds.size(), 0.0);
      cell.mae.assign(seeds.size(), 0.0);
      cell.weight_map_mean.assign(seeds.size(), 0.0);
    }
  }

  // Polluted test sets depend only on the data, so build them once.
  std::vector<data::Dataset> test_sets;
  for (const auto& cond : conditions) {
    test_sets.push_back(pollute(prepared.data, cond, prepared.splits.test, base.hist_len, base.pred_len));
  }

  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    log(line);
  };

  // Job j trains variant j % V with seed j / V and fills its own cell slots.
  const std::size_t total = seeds.size() * variants.size();
  auto run_job = [&](std::size_t j) {
    const std::size_t si = j / variants.size();
    const std::size_t c = j % variants.size();
    RunConfig cfg = base;
    cfg.seed = seeds[si];
    cfg.variant = variants[c];
    const std::string tag = table.variants[c] + " seed " + std::to_string(seeds[si]);
    say("ablate: " + tag);
    auto trained = train(cfg, prepared, [&](const std::string& line) { say("  [" + tag + "] " + line); });
    for (std::size_t r = 0; r < conditions.size(); ++r) {
      const auto ev = evaluate(*trained.model, test_sets[r], prepared.splits.test, cfg.train.batch);
      auto& cell = table.cells[r * variants.size() + c];
      cell.mse[si] = ev.mse;
      cell.mae[si] = ev.mae;
      cell.weight_map_mean[si] = ev.has_weights ? ev.weight_map_mean : 0.0;
      say("  [" + tag + "] " + conditions[r].name + ": mse " + fixed(ev.mse, 6) + " mae " + fixed(ev.mae, 6));
    }
  };

  const std::size_t workers = std::min(resolve_jobs(jobs), total);
  if (workers <= 1) {
    for (std::size_t j = 0; j < total; ++j) run_job(j);
    return table;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(total);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t j = next++; j < total; j = next++) {
        try {
          run_job(j);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  // Report the failure of the earliest job, as a sequential run would.
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return table;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string format_ablation_csv(const AblationTable& table) {
  std::string out = "condition,horizon,variant,seeds,mse_mean,mse_std,mae_mean,mae_std\n";
  for (std::size_t r = 0; r < table.conditions.size(); ++r) {
    for (std::size_t c = 0; c < table.variants.size(); ++c) {
      const auto& cell = table.cell(r, c);
      out += "\"" + cell.condition + "\"," + std::to_string(table.horizon) + "," + cell.variant + "," +
             std::to_string(cell.mse.size()) + "," + io::format_double(mean_of(cell.mse)) + "," +
             io::format_double(stddev_of(cell.mse)) + "," + io::format_double(mean_of(cell.mae)) + "," +
             io::format_double(stddev_of(cell.mae)) + "\n";
    }
  }
  return out;
}

std::string format_ablation_markdown(const AblationTable& table) {
  std::string out = "| Setting | Horizon |";
  std::string rule = "|---|---|";
  for (const auto& v : table.variants) {
    out += " " + v + " MSE | " + v + " MAE |";
    rule += "---|---|";
  }
  out += "\n" + rule + "\n";
  for (std::size_t r = 0; r < table.conditions.size(); ++r) {
    out += "| " + table.conditions[r] + " | " + std::to_string(table.horizon) + " |";
    for (std::size_t c = 0; c < table.variants.size(); ++c) {
      const auto& cell = table.cell(r, c);
      out += " " + fixed(mean_of(cell.mse), 4) + " | " + fixed(mean_of(cell.mae), 4) + " |";
    }
    out += "\n";
  }
  out += "\nMean over seeds";
  for (std::size_t i = 0; i < table.seeds.size(); ++i) out += (i ? ", " : " ") + std::to_string(table.seeds[i]);
  out += ".\n";
  return out;
}

AblationTable run_ablate(const RunConfig& base, const std::vector<Variant>& variants,
                         const std::vector<std::uint64_t>& seeds, const std::vector<Condition>& conditions,
                         const std::filesystem::path& out_dir, const LogFn& log, std::size_t jobs) {
  io::write_file_atomic(out_dir / "config.ini", to_config_text(base));
  const auto start = Clock::now();
  auto table = ablate(base, variants, seeds, conditions, log, jobs);
  const double seconds = elapsed(start);
  const std::string run_id = config_digest(base);
  std::vector<MetricsRecord> records;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    for (std::size_t c = 0; c < table.variants.size(); ++c) {
      for (std::size_t r = 0; r < table.conditions.size(); ++r) {
        const auto& cell = table.cell(r, c);
        records.push_back({run_id, cell.variant, seeds[si], table.horizon, cell.condition, cell.mse[si], cell.mae[si],
                           seconds});
      }
    }
  }
  io::write_file_atomic(out_dir / "metrics.jsonl", format_metrics(records, base.metrics_seconds));
  io::write_file_atomic(out_dir / "ablation.csv", format_ablation_csv(table));
  io::write_file_atomic(out_dir / "ablation.md", format_ablation_markdown(table));
  io::write_file_atomic(out_dir / "timing.jsonl", timing_line(run_id, "ablate", seconds));
  return table;
}

}  // namespace glaff::harness
