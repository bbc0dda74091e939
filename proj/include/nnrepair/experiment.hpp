#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnrepair/dataset.hpp"
#include "nnrepair/model.hpp"
#include "nnrepair/pso_repair.hpp"
#include "nnrepair/subject.hpp"

namespace nnrepair {

inline constexpr int kExperimentFormatVersion = 1;

/// One hyperparameter setting of a sweep.
struct GridPoint {
  std::string id;
  FitnessConfig fitness;
  std::size_t n_localized = 32;   // #lw
  std::size_t n_positives = 500;  // #pos
  std::size_t n_particles = 200;  // #p
};

struct ExperimentSpec {
  std::string name = "experiment";
  SyntheticSpec data;
  std::string dataset_path;  // overrides `data` when set
  SplitSpec split;
  std::optional<DriftSpec> drift;
  SubjectSpec subject;
  std::size_t target_class = 0;
  std::optional<std::size_t> repair_layer;  // default: last layer
  SwarmConfig swarm;  // n_particles and seed are set per run
  std::vector<GridPoint> grid;
  std::size_t repetitions = 10;
  std::uint64_t master_seed = 0;

  void validate() const;
};

ExperimentSpec spec_from_json(const nlohmann::json& doc);
nlohmann::ordered_json spec_to_json(const ExperimentSpec& spec);
ExperimentSpec load_spec(const std::filesystem::path& path);

/// Parses "eq2,8,true,32,500,200" (variant, alpha, pi, #lw, #pos, #p).
GridPoint parse_grid_point(const std::string& text, const FitnessConfig& defaults = {});

struct Scenario {
  Dataset dataset;
  Splits splits;
  Model subject;
  std::vector<double> train_loss;
};

Scenario build_scenario(const ExperimentSpec& spec);
void save_scenario(const Scenario& scenario, const std::filesystem::path& dir);

inline constexpr std::array<const char*, 4> kSplitNames{"train", "validation", "repair", "test"};

struct SplitOutcome {
  double accuracy_before = 1.0;
  double accuracy_after = 1.0;
  std::vector<SampleId> broken_ids;
  std::vector<SampleId> repaired_ids;

  std::size_t broken() const { return broken_ids.size(); }
  std::size_t repaired() const { return repaired_ids.size(); }
};

enum class RunStatus { ok, nothing_to_repair, error };
std::string to_string(RunStatus s);

struct RunResult {
  std::string config_id;
  std::size_t config_index = 0;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  RunStatus status = RunStatus::ok;
  std::string message;
  std::size_t n_negatives = 0;
  std::size_t n_pool = 0;
  std::size_t n_positives = 0;
  std::size_t n_localized = 0;
  std::size_t n_g = 0;
  bool localization_warning = false;
  bool identity_fallback = false;
  bool no_search_space = false;
  FitnessBreakdown best;
  double identity_fitness = 0.0;
  std::size_t positives_broken = 0;  // regressions inside I_pos
  std::array<SplitOutcome, 4> splits;
  double runtime_seconds = 0.0;  // kept out of the persisted result
};

nlohmann::ordered_json run_to_json(const RunResult& run);
RunResult run_from_json(const nlohmann::json& doc);

struct RunArtifacts {
  Model repaired;
  std::vector<TraceRow> trace;
  std::string impacts_csv;
  std::string localized_csv;
};

/// Hash of everything that determines a run besides its seed.
std::string config_hash(const ExperimentSpec& spec, const GridPoint& point);

/// select inputs -> localize -> sample positives -> repair -> evaluate and
/// diff every split. "Nothing to repair" yields a no-op result.
RunResult run_repair_pipeline(const Model& subject, const Splits& splits, const GridPoint& point,
                              const ExperimentSpec& spec, std::uint64_t seed,
                              RunArtifacts* artifacts = nullptr);

/// Seed of run (config, repetition); injective over any sweep.
std::uint64_t run_seed(std::uint64_t master_seed, std::size_t config_index,
                       std::size_t repetition);

struct ConfigAggregate {
  std::string config_id;
  std::size_t n_runs = 0;    // runs entering the means
  std::size_t n_failed = 0;  // error runs, excluded from the means
  std::array<double, 4> mean_broken{};
  std::array<double, 4> mean_repaired{};
  std::array<double, 4> mean_accuracy_before{};
  std::array<double, 4> mean_accuracy_after{};
  std::optional<std::size_t> min_regression_run;  // index into AggregateResult::runs
};

struct AggregateResult {
  std::vector<RunResult> runs;  // config-major, repetition-minor
  std::vector<ConfigAggregate> configs;
  std::size_t failures = 0;
};

/// Split whose broken count ranks runs for the minimum-regression pick.
inline constexpr SplitPart kRegressionSplit = SplitPart::test;

AggregateResult aggregate(std::vector<RunResult> runs, const std::vector<std::string>& config_ids);

struct SweepOptions {
  std::size_t jobs = 1;         // concurrent runs
  std::size_t pso_threads = 1;  // concurrent fitness evaluations per run
  bool resume = true;
};

std::filesystem::path run_dir(const std::filesystem::path& out_dir, std::size_t config_index,
                              std::size_t repetition);

/// Runs repetitions x grid repair runs, persisting each under out_dir/runs.
/// Finished runs found on disk are reused when resuming.
AggregateResult run_sweep(const ExperimentSpec& spec, const std::filesystem::path& out_dir,
                          const SweepOptions& options = {});

/// Reloads every persisted run of a sweep directory.
AggregateResult load_sweep(const ExperimentSpec& spec, const std::filesystem::path& out_dir);

/// runs.csv, config_means.csv, min_regression.csv, long.csv and summary.json.
void emit_report(const AggregateResult& aggregate, const std::filesystem::path& out_dir);

std::string runs_csv(const AggregateResult& aggregate);
std::string config_means_csv(const AggregateResult& aggregate);

}  // namespace nnrepair
