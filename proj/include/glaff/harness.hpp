// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "glaff/config.hpp"
#include "glaff/data.hpp"
#include "glaff/model.hpp"

namespace glaff::harness {

using LogFn = std::function<void(const std::string&)>;

/// Standardized series with its chronological splits.
struct PreparedData {
  data::Dataset data;
  data::Splits splits;
  std::vector<double> mean;
  std::vector<double> std;
};

/// Loads or synthesizes the series named by the config, standardizes it with
/// training statistics and splits it. Validation and test windows reach back
/// into the preceding split for history when `data.reach_back` is set.
PreparedData prepare_data(const RunConfig& config);

/// A set of anomaly specs applied together to the test region.
struct Condition {
  std::string name;  // "clean" or the formatted spec list
  std::vector<data::AnomalySpec> anomalies;
};

Condition clean_condition();
Condition make_condition(const std::vector<data::AnomalySpec>& anomalies);

/// Copy of `ds` whose observed values in `region` carry the condition's anomalies.
data::Dataset pollute(const data::Dataset& ds, const Condition& condition, const data::Split& region,
                      std::size_t hist_len, std::size_t pred_len);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  std::unique_ptr<Forecaster> model;  // restored to the best validation epoch
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  double seconds = 0.0;
};

/// Adam on the mean squared error of the final prediction over shuffled
/// stride-1 training windows. Throws DivergenceError on a non-finite loss.
TrainResult train(const RunConfig& config, const PreparedData& prepared, const LogFn& log = {});

struct Evaluation {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
  bool has_weights = false;
  double weight_map_mean = 0.0;  // mean combiner weight on the mapping
  double weight_pred_mean = 0.0; // mean combiner weight on the backbone
  double weight_min = 0.0;
  double weight_max = 0.0;
};

/// Eval-mode pass over every stride-1 window of `split`.
Evaluation evaluate(Forecaster& model, const data::Dataset& ds, const data::Split& split, std::size_t batch = 32);

struct MetricsRecord {
  std::string run_id;
  std::string variant;
  std::uint64_t seed = 0;
  std::size_t horizon = 0;
  std::string condition;
  double mse = 0.0;
  double mae = 0.0;
  double seconds = 0.0;
};

/// One JSON object per line; `seconds` only when requested.
std::string format_metrics(const std::vector<MetricsRecord>& records, bool with_seconds);
std::string format_curve(const std::vector<EpochRecord>& curve);

/// Conditions evaluated by a run: clean, plus the configured anomalies if any.
std::vector<Condition> run_conditions(const RunConfig& config);

struct RunOutcome {
  std::string run_id;
  TrainResult training;
  std::vector<Condition> conditions;
  std::vector<Evaluation> evaluations;  // aligned with conditions
  std::vector<MetricsRecord> records;
};

/// Trains and evaluates one configuration, writing config.ini, model.ckpt,
/// metrics.jsonl, curve.csv and timing.jsonl under `out_dir`.
RunOutcome run_train(const RunConfig& config, const std::filesystem::path& out_dir, const LogFn& log = {});

/// Named split of prepared data: "train", "val" or "test".
const data::Split& split_named(const PreparedData& prepared, const std::string& name);

/// Evaluates a checkpoint on one split of the configured data, writing
/// metrics.jsonl under `out_dir`.
std::vector<MetricsRecord> run_evaluate(const RunConfig& config, const std::filesystem::path& checkpoint,
                                        const std::filesystem::path& out_dir, const std::string& split = "test",
                                        const LogFn& log = {});

struct AblationCell {
  std::string condition;
  std::string variant;
  std::vector<double> mse;  // one per seed
  std::vector<double> mae;
  std::vector<double> weight_map_mean;
};

struct AblationTable {
  std::size_t horizon = 0;
  std::vector<std::string> conditions;  // rows
  std::vector<std::string> variants;    // columns
  std::vector<std::uint64_t> seeds;
  std::vector<AblationCell> cells;      // row-major over conditions x variants

  const AblationCell& cell(std::size_t row, std::size_t col) const { return cells[row * variants.size() + col]; }
};

/// Trains every variant for every seed on identical data and evaluates each
/// trained model under every condition. Up to `jobs` trainings run on
/// separate threads (0: one per hardware thread); each training is itself
/// single-threaded, so the table does not depend on `jobs`.
AblationTable ablate(const RunConfig& base, const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                     const std::vector<Condition>& conditions, const LogFn& log = {}, std::size_t jobs = 1);

std::string format_ablation_csv(const AblationTable& table);
std::string format_ablation_markdown(const AblationTable& table);

/// Runs ablate() and writes ablation.csv, ablation.md and metrics.jsonl.
AblationTable run_ablate(const RunConfig& base, const std::vector<Variant>& variants,
                         const std::vector<std::uint64_t>& seeds, const std::vector<Condition>& conditions,
                         const std::filesystem::path& out_dir, const LogFn& log = {}, std::size_t jobs = 1);

/// Worker count for `jobs`: 0 means one per hardware thread.
std::size_t resolve_jobs(std::size_t jobs);

double mean_of(const std::vector<double>& v);
/// Sample standard deviation; zero for fewer than two values.
double stddev_of(const std::vector<double>& v);

}  // namespace glaff::harness
