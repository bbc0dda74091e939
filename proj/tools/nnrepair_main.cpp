// nnrepair: command-line front end for data generation, subject training,
// localization, repair, evaluation and hyperparameter sweeps.
//
// Every verb accepts --config <experiment.json> and --seed <n>. The config
// file is the single source of hyperparameters; --seed overrides the seed
// relevant to the verb.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>

#include "nnrepair/dataset.hpp"
#include "nnrepair/errors.hpp"
#include "nnrepair/experiment.hpp"
#include "nnrepair/localization.hpp"
#include "nnrepair/metrics.hpp"
#include "nnrepair/pso_repair.hpp"
#include "nnrepair/serialize.hpp"
#include "nnrepair/subject.hpp"

namespace fs = std::filesystem;
using namespace nnrepair;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Seed override");
}

Splits load_splits(const fs::path& dir) {
  Splits s;
  for (std::size_t p = 0; p < 4; ++p) {
    s[static_cast<SplitPart>(p)] = load_dataset(dir / fmt::format("{}.csv", kSplitNames[p]));
  }
  return s;
}

void save_splits(const Splits& s, const fs::path& dir) {
  for (std::size_t p = 0; p < 4; ++p) {
    save_dataset(s[static_cast<SplitPart>(p)], dir / fmt::format("{}.csv", kSplitNames[p]));
  }
  for (std::size_t p = 0; p < 4; ++p) {
    const auto& d = s[static_cast<SplitPart>(p)];
    fmt::print("{:<10} {:>6} samples, class counts [{}]\n", kSplitNames[p], d.size(),
               fmt::join(d.class_counts(), " "));
  }
}

const GridPoint& pick_point(const ExperimentSpec& spec, std::size_t index) {
  if (index >= spec.grid.size()) {
    throw Error(fmt::format("grid index {} out of range ({} points)", index, spec.grid.size()));
  }
  return spec.grid[index];
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weight-level repair of feedforward classifiers"};
  app.require_subcommand(1);

  Common gen_c, split_c, drift_c, train_c, eval_c, loc_c, rep_c, sweep_c, report_c;
  std::string out, data_path, model_path, splits_dir, sweep_dir;
  std::size_t grid_index = 0, jobs = 1, pso_threads = 1;
  std::optional<std::size_t> n_g, count;
  bool no_resume = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic Gaussian-cluster dataset");
  add_common(gen, gen_c);
  gen->add_option("--out", out, "Output dataset CSV")->required();

  auto* split_cmd = app.add_subcommand("split", "Split a dataset into train/validation/repair/test");
  add_common(split_cmd, split_c);
  split_cmd->add_option("--data", data_path, "Dataset CSV")->required();
  split_cmd->add_option("--out", out, "Output directory")->required();

  auto* drift_cmd = app.add_subcommand("drift", "Split with the configured target-class drift");
  add_common(drift_cmd, drift_c);
  drift_cmd->add_option("--data", data_path, "Dataset CSV")->required();
  drift_cmd->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train the subject model on a train split");
  add_common(train, train_c);
  train->add_option("--data", data_path, "Training CSV")->required();
  train->add_option("--out", out, "Output model JSON")->required();

  auto* eval = app.add_subcommand("evaluate", "Evaluate a model on a dataset");
  add_common(eval, eval_c);
  eval->add_option("--model", model_path, "Model JSON")->required();
  eval->add_option("--data", data_path, "Dataset CSV")->required();
  eval->add_option("--out", out, "Optional report JSON");

  auto* loc = app.add_subcommand("localize", "Compute impacts and the localized weight set");
  add_common(loc, loc_c);
  loc->add_option("--model", model_path, "Model JSON")->required();
  loc->add_option("--splits", splits_dir, "Directory with split CSVs")->required();
  loc->add_option("--out", out, "Output directory")->required();
  auto* ng_opt = loc->add_option("--n-g", n_g, "Top-N cut per impact");
  loc->add_option("--count", count, "Target localized weight count (default: grid #lw)")->excludes(ng_opt);
  loc->add_option("--grid-index", grid_index, "Grid point supplying #lw");

  auto* rep = app.add_subcommand("repair", "Run one repair pipeline for a grid point");
  add_common(rep, rep_c);
  rep->add_option("--model", model_path, "Subject model JSON")->required();
  rep->add_option("--splits", splits_dir, "Directory with split CSVs")->required();
  rep->add_option("--out", out, "Output directory")->required();
  rep->add_option("--grid-index", grid_index, "Grid point to run");
  rep->add_option("--threads", pso_threads, "Concurrent fitness evaluations");

  auto* sweep = app.add_subcommand("sweep", "Run the repetitions x grid sweep");
  add_common(sweep, sweep_c);
  sweep->add_option("--out", out, "Sweep directory")->required();
  sweep->add_option("--jobs", jobs, "Concurrent runs");
  sweep->add_option("--threads", pso_threads, "Concurrent fitness evaluations per run");
  sweep->add_flag("--no-resume", no_resume, "Recompute runs already on disk");

  auto* report = app.add_subcommand("report", "Write report tables for a sweep directory");
  add_common(report, report_c);
  report->add_option("--sweep", sweep_dir, "Sweep directory")->required();
  report->add_option("--out", out, "Report directory (default: <sweep>/report)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto spec = load_spec(gen_c.config);
      if (gen_c.seed) spec.data.seed = *gen_c.seed;
      auto ds = make_synthetic(spec.data);
      save_dataset(ds, out);
      fmt::print("wrote {} samples ({} classes) to {}\n", ds.size(), ds.n_classes, out);
    } else if (split_cmd->parsed()) {
      auto spec = load_spec(split_c.config);
      if (split_c.seed) spec.split.seed = *split_c.seed;
      save_splits(split(load_dataset(data_path), spec.split), out);
    } else if (drift_cmd->parsed()) {
      auto spec = load_spec(drift_c.config);
      if (!spec.drift) throw Error("config has no drift section");
      if (drift_c.seed) spec.drift->seed = *drift_c.seed;
      save_splits(apply_drift(load_dataset(data_path), spec.split, *spec.drift), out);
    } else if (train->parsed()) {
      auto spec = load_spec(train_c.config);
      if (train_c.seed) spec.subject.seed = *train_c.seed;
      auto data = load_dataset(data_path);
      auto trained = train_subject(spec.subject, data);
      nlohmann::ordered_json prov;
      prov["seed"] = spec.subject.seed;
      prov["train_loss"] = trained.epoch_loss;
      save_model(trained.model, out, prov);
      fmt::print("train accuracy {:.4f}; wrote {}\n",
                 evaluate(trained.model, data).overall_accuracy, out);
    } else if (eval->parsed()) {
      auto model = load_model(model_path);
      auto report_data = evaluate(model, load_dataset(data_path));
      fmt::print("accuracy {:.6f} ({}/{})\n", report_data.overall_accuracy, report_data.passed,
                 report_data.total);
      for (std::size_t c = 0; c < report_data.per_class_accuracy.size(); ++c) {
        fmt::print("  class {}: {:.4f} ({}/{})\n", c, report_data.per_class_accuracy[c],
                   report_data.class_passed[c], report_data.class_total[c]);
      }
      if (!out.empty()) write_file(out, report_to_json(report_data).dump(2) + "\n");
    } else if (loc->parsed()) {
      auto spec = load_spec(loc_c.config);
      auto model = load_model(model_path);
      auto splits = load_splits(splits_dir);
      auto inputs = select_repair_inputs(model, splits.train, splits.repair, spec.target_class);
      const std::size_t layer = spec.repair_layer.value_or(model.last_layer());
      auto table = compute_impacts(model, inputs.negatives, inputs.positive_pool, layer);
      LocalizedSet set = n_g ? localize(table, *n_g)
                             : localize_to_count(table, count.value_or(pick_point(spec, grid_index).n_localized));
      write_file(fs::path(out) / "impacts.csv", impacts_to_csv(table));
      write_file(fs::path(out) / "localized.csv", localized_to_csv(table, set));
      fmt::print("{} failed / {} passed samples; n_g = {}; {} weights localized{}\n",
                 inputs.negatives.size(), inputs.positive_pool.size(), set.n_g, set.refs.size(),
                 set.warning ? fmt::format(" (warning: {})", set.note) : "");
    } else if (rep->parsed()) {
      auto spec = load_spec(rep_c.config);
      spec.swarm.threads = pso_threads;
      auto model = load_model(model_path);
      auto splits = load_splits(splits_dir);
      const auto& point = pick_point(spec, grid_index);
      const std::uint64_t seed = rep_c.seed.value_or(run_seed(spec.master_seed, grid_index, 0));
      RunArtifacts art;
      auto r = run_repair_pipeline(model, splits, point, spec, seed, &art);
      r.config_index = grid_index;
      fs::path dir(out);
      nlohmann::ordered_json prov;
      prov["config_id"] = r.config_id;
      prov["config_hash"] = r.config_hash;
      prov["seed"] = seed;
      save_model(art.repaired, dir / "model.json", prov);
      write_file(dir / "trace.csv", trace_to_csv(art.trace));
      write_file(dir / "localized.csv", art.localized_csv);
      write_file(dir / "result.json", run_to_json(r).dump(2) + "\n");
      fmt::print("status {}; {} failed inputs, {} localized weights, fallback {}\n",
                 to_string(r.status), r.n_negatives, r.n_localized, r.identity_fallback);
      for (std::size_t p = 0; p < 4; ++p) {
        const auto& s = r.splits[p];
        fmt::print("{:<10} acc {:.4f} -> {:.4f}  broken {}  repaired {}\n", kSplitNames[p],
                   s.accuracy_before, s.accuracy_after, s.broken(), s.repaired());
      }
    } else if (sweep->parsed()) {
      auto spec = load_spec(sweep_c.config);
      if (sweep_c.seed) spec.master_seed = *sweep_c.seed;
      auto agg = run_sweep(spec, out, {jobs, pso_threads, !no_resume});
      emit_report(agg, fs::path(out) / "report");
      for (const auto& c : agg.configs) {
        const auto t = static_cast<std::size_t>(SplitPart::test);
        fmt::print("{:<12} runs {:>3}  test broken {:.2f}  repaired {:.2f}  acc {:.4f} -> {:.4f}\n",
                   c.config_id, c.n_runs, c.mean_broken[t], c.mean_repaired[t],
                   c.mean_accuracy_before[t], c.mean_accuracy_after[t]);
      }
      if (agg.failures > 0) {
        fmt::print(stderr, "{} run(s) failed\n", agg.failures);
        return 1;
      }
    } else if (report->parsed()) {
      auto spec = load_spec(report_c.config);
      if (report_c.seed) spec.master_seed = *report_c.seed;
      auto agg = load_sweep(spec, sweep_dir);
      emit_report(agg, out.empty() ? fs::path(sweep_dir) / "report" : fs::path(out));
      if (agg.failures > 0) {
        fmt::print(stderr, "{} run(s) missing or failed\n", agg.failures);
        return 1;
      }
    }
  } catch (const NothingToRepair& e) {
    fmt::print(stderr, "nothing to repair: {}\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
