// SPDX-License-Identifier: Apache-2.0
#include "glaff/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "glaff/config.hpp"
#include "glaff/data.hpp"
#include "glaff/error.hpp"
#include "glaff/gradcheck.hpp"
#include "glaff/harness.hpp"
#include "glaff/io.hpp"

namespace glaff::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  bool quiet = false;
};

void add_common(CLI::App& app, Common& c, bool with_config = true) {
  if (with_config) {
    app.add_option("-c,--config", c.config, "Run configuration file (sections of key = value)");
    app.add_option("-s,--set", c.sets, "Override a configuration key, e.g. --set glaff.dim=64 (repeatable)");
  }
  app.add_option("-o,--out", c.out, "Output directory (default: $GLAFF_OUT_DIR, else ./glaff_out)");
  app.add_flag("-q,--quiet", c.quiet, "Suppress progress output");
}

fs::path out_dir(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("GLAFF_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "glaff_out";
}

RunConfig effective_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& s : c.sets) apply_assignment(cfg, s);
  return cfg;
}

harness::LogFn logger(const Common& c, std::ostream& err) {
  if (c.quiet) return {};
  return [&err](const std::string& line) { err << line << '\n' << std::flush; };
}

template <class T>
std::vector<T> split_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(parse(item));
  }
  return out;
}

Variant variant_arg(const std::string& s) { return parse_variant(s); }

std::uint64_t seed_arg(const std::string& s) {
  std::uint64_t v = 0;
  std::size_t used = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || s[0] == '-') throw ConfigError("seed '" + s + "' is not a non-negative integer");
  return v;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Timestamp-driven global mapping plugin for time series forecasters", "glaff"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // train
  Common train_opts;
  std::string train_data, train_anomalies, train_variant;
  std::optional<std::uint64_t> train_seed;
  auto* train = app.add_subcommand("train", "Train a model, evaluate it on the test split and write run artifacts");
  add_common(*train, train_opts);
  train->add_option("--data", train_data, "CSV file to train on (sets data.source = csv)");
  train->add_option("--anomalies", train_anomalies, "Test-time pollution, e.g. point:0.1:8,contextual:0.1:0.3");
  train->add_option("--variant", train_variant, "backbone | full | no_backbone | no_attention | no_quantile | no_adaptive");
  train->add_option("--seed", train_seed, "Run seed");

  // evaluate
  Common eval_opts;
  std::string eval_ckpt, eval_split = "test", eval_data, eval_anomalies;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on one split");
  add_common(*evaluate, eval_opts);
  evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint written by train")->required();
  evaluate->add_option("--split", eval_split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--data", eval_data, "CSV file (sets data.source = csv)");
  evaluate->add_option("--anomalies", eval_anomalies, "Pollution applied to the evaluated split");

  // ablate
  Common abl_opts;
  std::string abl_variants = "full,no_backbone,no_attention,no_quantile,no_adaptive";
  std::string abl_seeds = "1,2,3";
  std::string abl_data, abl_anomalies;
  std::vector<std::string> abl_conditions;
  bool abl_no_clean = false;
  std::size_t abl_jobs = 0;
  auto* ablate = app.add_subcommand("ablate", "Train and compare variants across seeds and test conditions");
  add_common(*ablate, abl_opts);
  ablate->add_option("--variants", abl_variants, "Comma-separated variants (columns of the table)");
  ablate->add_option("--seeds", abl_seeds, "Comma-separated seeds");
  ablate->add_option("--data", abl_data, "CSV file (sets data.source = csv)");
  ablate->add_option("--anomalies", abl_anomalies, "Anomaly condition evaluated next to the clean one");
  ablate->add_option("--condition", abl_conditions, "Additional anomaly condition (repeatable)");
  ablate->add_flag("--no-clean", abl_no_clean, "Skip the clean test condition");
  ablate->add_option("-j,--jobs", abl_jobs, "Concurrent trainings (0: one per hardware thread)");

  // gradcheck
  Common gc_opts;
  GradcheckDims dims;
  std::uint64_t gc_seed = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare autodiff gradients with central finite differences");
  add_common(*gradcheck, gc_opts, false);
  gradcheck->add_option("--seed", gc_seed, "Seed of the random toy problems");
  gradcheck->add_option("--batch", dims.batch, "Batch size")->check(CLI::PositiveNumber);
  gradcheck->add_option("--hist", dims.hist_len, "History length")->check(CLI::Range(2, 64));
  gradcheck->add_option("--pred", dims.pred_len, "Prediction length")->check(CLI::PositiveNumber);
  gradcheck->add_option("--channels", dims.channels, "Channels")->check(CLI::PositiveNumber);
  gradcheck->add_option("--dim", dims.dim, "Model dimension")->check(CLI::PositiveNumber);
  gradcheck->add_option("--ff-dim", dims.ff_dim, "Feed-forward dimension")->check(CLI::PositiveNumber);
  gradcheck->add_option("--heads", dims.heads, "Attention heads")->check(CLI::PositiveNumber);
  gradcheck->add_option("--layers", dims.layers, "Encoder layers")->check(CLI::PositiveNumber);
  gradcheck->add_option("--kernel", dims.kernel, "DLinear moving-average kernel")->check(CLI::PositiveNumber);

  // synth
  Common synth_opts;
  RunConfig synth_cfg;
  std::string synth_start;
  auto* synth = app.add_subcommand("synth", "Write a synthetic series to <out>/synth.csv");
  add_common(*synth, synth_opts, false);
  synth->add_option("--n", synth_cfg.data.length, "Number of rows")->check(CLI::PositiveNumber);
  synth->add_option("--channels", synth_cfg.data.channels, "Number of channels")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_cfg.data.synth_seed, "Noise seed");
  synth->add_option("--granularity", synth_cfg.data.granularity, "Seconds between rows")->check(CLI::PositiveNumber);
  synth->add_option("--start", synth_start, "First timestamp, YYYY-MM-DD HH:MM:SS");
  synth->add_option("--noise", synth_cfg.data.synth.noise, "Noise standard deviation");
  synth->add_option("--weekday-amplitude", synth_cfg.data.synth.weekday_amplitude, "Daily amplitude on weekdays");
  synth->add_option("--weekend-amplitude", synth_cfg.data.synth.weekend_amplitude, "Daily amplitude on weekends");
  synth->add_option("--drift", synth_cfg.data.synth.drift, "Linear drift per row");
  synth->add_option("--level", synth_cfg.data.synth.level, "Base level");

  // inject
  Common inj_opts;
  std::string inj_data, inj_anomalies, inj_region = "test", inj_split = "0.6,0.2,0.2";
  std::size_t inj_hist = 96, inj_pred = 96;
  auto* inject = app.add_subcommand("inject", "Pollute the history windows of one split of a CSV file");
  add_common(*inject, inj_opts, false);
  inject->add_option("--data", inj_data, "Input CSV file")->required();
  inject->add_option("--anomalies", inj_anomalies, "Anomaly specs, e.g. point:0.1:8")->required();
  inject->add_option("--region", inj_region, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  inject->add_option("--hist", inj_hist, "History length")->check(CLI::PositiveNumber);
  inject->add_option("--pred", inj_pred, "Prediction length")->check(CLI::PositiveNumber);
  inject->add_option("--split", inj_split, "Split ratios train,val,test");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (train->parsed()) {
      RunConfig cfg = effective_config(train_opts);
      if (!train_data.empty()) {
        cfg.data.source = "csv";
        cfg.data.path = fs::absolute(train_data).lexically_normal().string();
      }
      if (!train_anomalies.empty()) cfg.anomalies = data::parse_anomaly_list(train_anomalies);
      if (!train_variant.empty()) cfg.variant = parse_variant(train_variant);
      if (train_seed) cfg.seed = *train_seed;
      const auto dir = out_dir(train_opts);
      const auto outcome = harness::run_train(cfg, dir, logger(train_opts, err));
      out << harness::format_metrics(outcome.records, cfg.metrics_seconds);
      return kOk;
    }
    if (evaluate->parsed()) {
      if (eval_opts.config.empty()) {
        // Fall back to the snapshot written next to the checkpoint.
        const auto sibling = fs::path(eval_ckpt).parent_path() / "config.ini";
        if (fs::exists(sibling)) eval_opts.config = sibling.string();
      }
      RunConfig cfg = effective_config(eval_opts);
      if (!eval_data.empty()) {
        cfg.data.source = "csv";
        cfg.data.path = fs::absolute(eval_data).lexically_normal().string();
      }
      if (!eval_anomalies.empty()) cfg.anomalies = data::parse_anomaly_list(eval_anomalies);
      const auto records =
          harness::run_evaluate(cfg, eval_ckpt, out_dir(eval_opts), eval_split, logger(eval_opts, err));
      out << harness::format_metrics(records, cfg.metrics_seconds);
      return kOk;
    }
    if (ablate->parsed()) {
      RunConfig cfg = effective_config(abl_opts);
      if (!abl_data.empty()) {
        cfg.data.source = "csv";
        cfg.data.path = fs::absolute(abl_data).lexically_normal().string();
      }
      if (!abl_anomalies.empty()) cfg.anomalies = data::parse_anomaly_list(abl_anomalies);
      const auto variants = split_list<Variant>(abl_variants, variant_arg);
      const auto seeds = split_list<std::uint64_t>(abl_seeds, seed_arg);
      std::vector<harness::Condition> conditions;
      if (!abl_no_clean) conditions.push_back(harness::clean_condition());
      if (!cfg.anomalies.empty()) conditions.push_back(harness::make_condition(cfg.anomalies));
      for (const auto& c : abl_conditions) conditions.push_back(harness::make_condition(data::parse_anomaly_list(c)));
      const auto table =
          harness::run_ablate(cfg, variants, seeds, conditions, out_dir(abl_opts), logger(abl_opts, err), abl_jobs);
      out << harness::format_ablation_markdown(table);
      return kOk;
    }
    if (gradcheck->parsed()) {
      const auto report = run_gradcheck(dims, gc_seed);
      const std::string text = report.format();
      io::write_file_atomic(out_dir(gc_opts) / "gradcheck.txt", text);
      out << text;
      require_passed(report);
      return kOk;
    }
    if (synth->parsed()) {
      if (!synth_start.empty()) apply_override(synth_cfg, "data.start", synth_start);
      const auto ds = data::synth_generate(synth_cfg.data.length, synth_cfg.data.channels, synth_cfg.data.granularity,
                                           synth_cfg.data.synth, synth_cfg.data.synth_seed);
      const auto path = out_dir(synth_opts) / "synth.csv";
      data::write_csv(ds, path);
      if (!synth_opts.quiet) err << "wrote " << path.string() << " (" << ds.length() << " rows)\n";
      return kOk;
    }
    if (inject->parsed()) {
      const auto specs = data::parse_anomaly_list(inj_anomalies);
      if (specs.empty()) throw ConfigError("--anomalies names no anomaly");
      auto ds = data::load_csv(inj_data);
      const auto splits = data::chrono_split(ds, data::SplitSpec::parse(inj_split), inj_hist);
      const auto& region = inj_region == "train" ? splits.train : inj_region == "val" ? splits.val : splits.test;
      nlohmann::ordered_json report = nlohmann::ordered_json::array();
      for (const auto& spec : specs) {
        data::InjectionReport rep;
        ds = data::inject_anomalies(ds, spec, region, inj_hist, inj_pred, &rep);
        report.push_back({{"spec", spec.str()},
                          {"eligible_windows", rep.eligible},
                          {"polluted_windows", rep.windows},
                          {"rows", rep.rows},
                          {"channels", rep.channels}});
      }
      const auto dir = out_dir(inj_opts);
      data::write_csv(ds, dir / "injected.csv");
      io::write_file_atomic(dir / "injection.json", report.dump(1) + "\n");
      if (!inj_opts.quiet) err << "wrote " << (dir / "injected.csv").string() << '\n';
      return kOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.category() << ": " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return kRuntimeError;
  }
  err << "error: usage: no subcommand\n";
  return kUsageError;
}

}  // namespace glaff::cli
