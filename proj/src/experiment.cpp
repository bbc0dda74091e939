#include "nnrepair/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fmt/format.h>
#include <sstream>
#include <thread>

#include "nnrepair/errors.hpp"
#include "nnrepair/localization.hpp"
#include "nnrepair/metrics.hpp"
#include "nnrepair/rng.hpp"
#include "nnrepair/serialize.hpp"

namespace nnrepair {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Experiment spec

void ExperimentSpec::validate() const {
  if (grid.empty()) throw Error("experiment grid is empty");
  if (repetitions < 1) throw Error("repetitions must be at least 1");
  for (const auto& p : grid) {
    p.fitness.validate();
    if (p.n_localized < 1 || p.n_positives < 1) throw Error(fmt::format("grid point {}: #lw and #pos must be >= 1", p.id));
    if (p.n_particles < 2) throw Error(fmt::format("grid point {}: #p must be >= 2", p.id));
  }
  std::vector<std::string> ids;
  for (const auto& p : grid) ids.push_back(p.id);
  std::ranges::sort(ids);
  if (std::ranges::adjacent_find(ids) != ids.end()) throw Error("grid point ids must be unique");
}

namespace {

bool parse_bool(std::string s) {
  std::ranges::transform(s, s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error(fmt::format("not a boolean: '{}'", s));
}

ojson fitness_json(const FitnessConfig& f) {
  ojson j;
  j["fitness"] = to_string(f.variant);
  j["alpha"] = f.alpha;
  j["beta"] = f.beta;
  j["delta"] = f.delta;
  j["pi"] = f.perfect_intact;
  j["orientation"] = to_string(f.orientation);
  return j;
}

ojson grid_point_json(const GridPoint& p) {
  ojson j;
  j["id"] = p.id;
  j.update(fitness_json(p.fitness));
  j["lw"] = p.n_localized;
  j["pos"] = p.n_positives;
  j["p"] = p.n_particles;
  return j;
}

GridPoint grid_point_from_json(const nlohmann::json& j, const FitnessConfig& defaults,
                               std::size_t index) {
  if (j.is_string()) {
    GridPoint p = parse_grid_point(j.get<std::string>(), defaults);
    p.id = fmt::format("g{}", index);
    return p;
  }
  GridPoint p;
  p.id = j.value("id", fmt::format("g{}", index));
  p.fitness = defaults;
  if (j.contains("fitness")) p.fitness.variant = fitness_variant_from_string(j["fitness"].get<std::string>());
  p.fitness.alpha = j.value("alpha", defaults.alpha);
  p.fitness.beta = j.value("beta", defaults.beta);
  p.fitness.delta = j.value("delta", defaults.delta);
  p.fitness.perfect_intact = j.value("pi", defaults.perfect_intact);
  if (j.contains("orientation")) p.fitness.orientation = loss_ratio_from_string(j["orientation"].get<std::string>());
  p.n_localized = j.value("lw", p.n_localized);
  p.n_positives = j.value("pos", p.n_positives);
  p.n_particles = j.value("p", p.n_particles);
  return p;
}

}  // namespace

GridPoint parse_grid_point(const std::string& text, const FitnessConfig& defaults) {
  std::vector<std::string> fields;
  std::stringstream ss(text);
  for (std::string f; std::getline(ss, f, ',');) {
    f.erase(0, f.find_first_not_of(" \t"));
    f.erase(f.find_last_not_of(" \t") + 1);
    fields.push_back(f);
  }
  if (fields.size() != 6) {
    throw Error(fmt::format("grid point '{}' needs 6 fields: fitness,alpha,pi,lw,pos,p", text));
  }
  GridPoint p;
  p.fitness = defaults;
  try {
    p.fitness.variant = fitness_variant_from_string(fields[0]);
    p.fitness.alpha = std::stod(fields[1]);
    p.fitness.perfect_intact = parse_bool(fields[2]);
    p.n_localized = std::stoul(fields[3]);
    p.n_positives = std::stoul(fields[4]);
    p.n_particles = std::stoul(fields[5]);
  } catch (const std::logic_error&) {
    throw Error(fmt::format("cannot parse grid point '{}'", text));
  }
  p.id = text;
  return p;
}

ExperimentSpec spec_from_json(const nlohmann::json& doc) {
  try {
    if (doc.value("format", std::string("nnrepair-experiment")) != "nnrepair-experiment") {
      throw FormatError("not an nnrepair experiment config");
    }
    if (int v = doc.at("version").get<int>(); v != kExperimentFormatVersion) {
      throw FormatError(fmt::format("unsupported experiment config version {}", v));
    }
    ExperimentSpec s;
    s.name = doc.value("name", s.name);
    if (doc.contains("data")) {
      const auto& d = doc["data"];
      s.data.n_classes = d.value("n_classes", s.data.n_classes);
      s.data.n_features = d.value("n_features", s.data.n_features);
      s.data.samples_per_class = d.value("samples_per_class", s.data.samples_per_class);
      s.data.separation = d.value("separation", s.data.separation);
      s.data.spread = d.value("spread", s.data.spread);
      s.data.class_spread = d.value("class_spread", s.data.class_spread);
      s.data.seed = d.value("seed", s.data.seed);
    }
    s.dataset_path = doc.value("dataset_path", std::string{});
    if (doc.contains("split")) {
      const auto& d = doc["split"];
      if (d.contains("fractions")) {
        auto f = d["fractions"].get<std::vector<double>>();
        if (f.size() != 4) throw FormatError("split.fractions needs 4 entries");
        std::ranges::copy(f, s.split.fractions.begin());
      }
      s.split.seed = d.value("seed", s.split.seed);
      s.split.stratified = d.value("stratified", s.split.stratified);
    }
    if (doc.contains("drift") && !doc["drift"].is_null()) {
      const auto& d = doc["drift"];
      DriftSpec drift;
      drift.target_class = d.value("target_class", doc.value("target_class", std::size_t{0}));
      drift.train_fraction = d.value("train_fraction", drift.train_fraction);
      drift.repair_fraction = d.value("repair_fraction", drift.repair_fraction);
      drift.seed = d.value("seed", drift.seed);
      s.drift = drift;
    }
    if (doc.contains("subject")) {
      const auto& d = doc["subject"];
      s.subject.hidden = d.value("hidden", s.subject.hidden);
      if (d.contains("activation")) {
        s.subject.hidden_activation = activation_from_string(d["activation"].get<std::string>());
      }
      s.subject.epochs = d.value("epochs", s.subject.epochs);
      s.subject.learning_rate = d.value("learning_rate", s.subject.learning_rate);
      s.subject.batch_size = d.value("batch_size", s.subject.batch_size);
      s.subject.seed = d.value("seed", s.subject.seed);
    }
    s.target_class = doc.value("target_class", s.target_class);
    if (doc.contains("repair_layer") && !doc["repair_layer"].is_null()) {
      s.repair_layer = doc["repair_layer"].get<std::size_t>();
    }
    if (doc.contains("swarm")) {
      const auto& d = doc["swarm"];
      s.swarm.n_iterations = d.value("n_iterations", s.swarm.n_iterations);
      s.swarm.inertia = d.value("inertia", s.swarm.inertia);
      s.swarm.c1 = d.value("c1", s.swarm.c1);
      s.swarm.c2 = d.value("c2", s.swarm.c2);
      s.swarm.velocity_clamp = d.value("velocity_clamp", s.swarm.velocity_clamp);
    }
    FitnessConfig defaults;
    if (doc.contains("fitness_defaults")) {
      const auto& d = doc["fitness_defaults"];
      defaults.beta = d.value("beta", defaults.beta);
      defaults.delta = d.value("delta", defaults.delta);
      if (d.contains("orientation")) defaults.orientation = loss_ratio_from_string(d["orientation"].get<std::string>());
    }
    const auto& grid = doc.at("grid");
    for (std::size_t k = 0; k < grid.size(); ++k) {
      s.grid.push_back(grid_point_from_json(grid[k], defaults, k));
    }
    s.repetitions = doc.value("repetitions", s.repetitions);
    s.master_seed = doc.value("master_seed", s.master_seed);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed experiment config: {}", e.what()));
  }
}

nlohmann::ordered_json spec_to_json(const ExperimentSpec& s) {
  ojson j;
  j["format"] = "nnrepair-experiment";
  j["version"] = kExperimentFormatVersion;
  j["name"] = s.name;
  j["data"] = {{"n_classes", s.data.n_classes},     {"n_features", s.data.n_features},
               {"samples_per_class", s.data.samples_per_class},
               {"separation", s.data.separation},   {"spread", s.data.spread},
               {"class_spread", s.data.class_spread}, {"seed", s.data.seed}};
  j["dataset_path"] = s.dataset_path;
  j["split"] = {{"fractions", s.split.fractions}, {"seed", s.split.seed},
                {"stratified", s.split.stratified}};
  if (s.drift) {
    j["drift"] = {{"target_class", s.drift->target_class},
                  {"train_fraction", s.drift->train_fraction},
                  {"repair_fraction", s.drift->repair_fraction},
                  {"seed", s.drift->seed}};
  } else {
    j["drift"] = nullptr;
  }
  j["subject"] = {{"hidden", s.subject.hidden},
                  {"activation", std::string(to_string(s.subject.hidden_activation))},
                  {"epochs", s.subject.epochs},
                  {"learning_rate", s.subject.learning_rate},
                  {"batch_size", s.subject.batch_size},
                  {"seed", s.subject.seed}};
  j["target_class"] = s.target_class;
  j["repair_layer"] = s.repair_layer ? ojson(*s.repair_layer) : ojson(nullptr);
  j["swarm"] = {{"n_iterations", s.swarm.n_iterations}, {"inertia", s.swarm.inertia},
                {"c1", s.swarm.c1},
                {"c2", s.swarm.c2},
                {"velocity_clamp", s.swarm.velocity_clamp}};
  j["grid"] = ojson::array();
  for (const auto& p : s.grid) j["grid"].push_back(grid_point_json(p));
  j["repetitions"] = s.repetitions;
  j["master_seed"] = s.master_seed;
  return j;
}

ExperimentSpec load_spec(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed experiment config {}: {}", path.string(), e.what()));
  }
  return spec_from_json(doc);
}

// ---------------------------------------------------------------------------
// Scenario

Scenario build_scenario(const ExperimentSpec& spec) {
  Scenario sc;
  sc.dataset = spec.dataset_path.empty() ? make_synthetic(spec.data) : load_dataset(spec.dataset_path);
  sc.splits = spec.drift ? apply_drift(sc.dataset, spec.split, *spec.drift)
                         : split(sc.dataset, spec.split);
  auto trained = train_subject(spec.subject, sc.splits.train);
  sc.subject = std::move(trained.model);
  sc.train_loss = std::move(trained.epoch_loss);
  return sc;
}

void save_scenario(const Scenario& scenario, const fs::path& dir) {
  save_dataset(scenario.dataset, dir / "dataset.csv");
  for (std::size_t p = 0; p < 4; ++p) {
    save_dataset(scenario.splits[static_cast<SplitPart>(p)], dir / fmt::format("{}.csv", kSplitNames[p]));
  }
  ojson prov;
  prov["train_loss"] = scenario.train_loss;
  save_model(scenario.subject, dir / "subject.json", prov);
}

// ---------------------------------------------------------------------------
// Run results

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::ok:
      return "ok";
    case RunStatus::nothing_to_repair:
      return "nothing_to_repair";
    case RunStatus::error:
      break;
  }
  return "error";
}

namespace {

RunStatus status_from_string(const std::string& s) {
  if (s == "ok") return RunStatus::ok;
  if (s == "nothing_to_repair") return RunStatus::nothing_to_repair;
  if (s == "error") return RunStatus::error;
  throw FormatError(fmt::format("unknown run status '{}'", s));
}

ojson breakdown_json(const FitnessBreakdown& b) {
  ojson j;
  j["n_patched"] = b.n_patched;
  j["n_intact"] = b.n_intact;
  j["n_negatives"] = b.n_negatives;
  j["n_positives"] = b.n_positives;
  j["loss_neg_before"] = b.loss_neg_before;
  j["loss_neg_after"] = b.loss_neg_after;
  j["loss_pos_before"] = b.loss_pos_before;
  j["loss_pos_after"] = b.loss_pos_after;
  j["raw_fitness"] = b.raw_fitness;
  j["gated_fitness"] = b.gated_fitness;
  return j;
}

FitnessBreakdown breakdown_from_json(const nlohmann::json& j) {
  FitnessBreakdown b;
  b.n_patched = j.at("n_patched").get<std::size_t>();
  b.n_intact = j.at("n_intact").get<std::size_t>();
  b.n_negatives = j.at("n_negatives").get<std::size_t>();
  b.n_positives = j.at("n_positives").get<std::size_t>();
  b.loss_neg_before = j.at("loss_neg_before").get<double>();
  b.loss_neg_after = j.at("loss_neg_after").get<double>();
  b.loss_pos_before = j.at("loss_pos_before").get<double>();
  b.loss_pos_after = j.at("loss_pos_after").get<double>();
  b.raw_fitness = j.at("raw_fitness").get<double>();
  b.gated_fitness = j.at("gated_fitness").get<double>();
  return b;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

nlohmann::ordered_json run_to_json(const RunResult& r) {
  ojson j;
  j["config_id"] = r.config_id;
  j["config_index"] = r.config_index;
  j["repetition"] = r.repetition;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["status"] = to_string(r.status);
  j["message"] = r.message;
  j["n_negatives"] = r.n_negatives;
  j["n_pool"] = r.n_pool;
  j["n_positives"] = r.n_positives;
  j["n_localized"] = r.n_localized;
  j["n_g"] = r.n_g;
  j["localization_warning"] = r.localization_warning;
  j["identity_fallback"] = r.identity_fallback;
  j["no_search_space"] = r.no_search_space;
  j["best"] = breakdown_json(r.best);
  j["identity_fitness"] = r.identity_fitness;
  j["positives_broken"] = r.positives_broken;
  ojson splits;
  for (std::size_t p = 0; p < 4; ++p) {
    const auto& s = r.splits[p];
    splits[kSplitNames[p]] = {{"accuracy_before", s.accuracy_before},
                              {"accuracy_after", s.accuracy_after},
                              {"broken", s.broken()},
                              {"repaired", s.repaired()},
                              {"broken_ids", s.broken_ids},
                              {"repaired_ids", s.repaired_ids}};
  }
  j["splits"] = std::move(splits);
  return j;
}

RunResult run_from_json(const nlohmann::json& j) {
  try {
    RunResult r;
    r.config_id = j.at("config_id").get<std::string>();
    r.config_index = j.at("config_index").get<std::size_t>();
    r.repetition = j.at("repetition").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.status = status_from_string(j.at("status").get<std::string>());
    r.message = j.at("message").get<std::string>();
    r.n_negatives = j.at("n_negatives").get<std::size_t>();
    r.n_pool = j.at("n_pool").get<std::size_t>();
    r.n_positives = j.at("n_positives").get<std::size_t>();
    r.n_localized = j.at("n_localized").get<std::size_t>();
    r.n_g = j.at("n_g").get<std::size_t>();
    r.localization_warning = j.at("localization_warning").get<bool>();
    r.identity_fallback = j.at("identity_fallback").get<bool>();
    r.no_search_space = j.at("no_search_space").get<bool>();
    r.best = breakdown_from_json(j.at("best"));
    r.identity_fitness = j.at("identity_fitness").get<double>();
    r.positives_broken = j.at("positives_broken").get<std::size_t>();
    for (std::size_t p = 0; p < 4; ++p) {
      const auto& s = j.at("splits").at(kSplitNames[p]);
      r.splits[p].accuracy_before = s.at("accuracy_before").get<double>();
      r.splits[p].accuracy_after = s.at("accuracy_after").get<double>();
      r.splits[p].broken_ids = s.at("broken_ids").get<std::vector<SampleId>>();
      r.splits[p].repaired_ids = s.at("repaired_ids").get<std::vector<SampleId>>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("malformed run result: {}", e.what()));
  }
}

std::string config_hash(const ExperimentSpec& spec, const GridPoint& point) {
  ojson j = spec_to_json(spec);
  j.erase("grid");
  j.erase("repetitions");
  j.erase("master_seed");
  j.erase("name");
  j["point"] = grid_point_json(point);
  return fmt::format("{:016x}", fnv1a(j.dump()));
}

std::uint64_t run_seed(std::uint64_t master_seed, std::size_t config_index,
                       std::size_t repetition) {
  return derive_seed(master_seed, config_index, repetition);
}

// ---------------------------------------------------------------------------
// Pipeline

RunResult run_repair_pipeline(const Model& subject, const Splits& splits, const GridPoint& point,
                              const ExperimentSpec& spec, std::uint64_t seed,
                              RunArtifacts* artifacts) {
  const auto start = std::chrono::steady_clock::now();
  RunResult r;
  r.config_id = point.id;
  r.seed = seed;
  r.config_hash = config_hash(spec, point);

  std::array<EvalReport, 4> before;
  for (std::size_t p = 0; p < 4; ++p) before[p] = evaluate(subject, splits[static_cast<SplitPart>(p)]);

  Model repaired = subject;
  RunArtifacts art;
  try {
    auto inputs = select_repair_inputs(subject, splits.train, splits.repair, spec.target_class);
    r.n_negatives = inputs.negatives.size();
    r.n_pool = inputs.positive_pool.size();
    const std::size_t layer = spec.repair_layer.value_or(subject.last_layer());

    auto table = compute_impacts(subject, inputs.negatives, inputs.positive_pool, layer);
    auto localized = localize_to_count(table, point.n_localized);
    r.n_localized = localized.refs.size();
    r.n_g = localized.n_g;
    r.localization_warning = localized.warning;
    if (artifacts) {
      art.impacts_csv = impacts_to_csv(table);
      art.localized_csv = localized_to_csv(table, localized);
    }

    Batch positives = sample_positives(inputs.positive_pool, point.n_positives, derive_seed(seed, 1));
    r.n_positives = positives.size();

    SwarmConfig swarm = spec.swarm;
    swarm.n_particles = point.n_particles;
    swarm.seed = derive_seed(seed, 2);
    auto result = repair(subject, localized, inputs.negatives, positives, point.fitness, swarm);
    repaired = std::move(result.model);
    r.best = result.best;
    r.identity_fitness = result.identity.gated_fitness;
    r.identity_fallback = result.identity_fallback;
    r.no_search_space = result.no_search_space;
    art.trace = std::move(result.trace);

    auto pred = predict(repaired, positives.inputs);
    for (std::size_t s = 0; s < pred.size(); ++s) r.positives_broken += pred[s] != positives.labels[s];
  } catch (const NothingToRepair& e) {
    r.status = RunStatus::nothing_to_repair;
    r.message = e.what();
  }

  for (std::size_t p = 0; p < 4; ++p) {
    EvalReport after = evaluate(repaired, splits[static_cast<SplitPart>(p)]);
    RepairDiff d = diff(before[p], after);
    r.splits[p].accuracy_before = before[p].overall_accuracy;
    r.splits[p].accuracy_after = after.overall_accuracy;
    r.splits[p].broken_ids = std::move(d.broken);
    r.splits[p].repaired_ids = std::move(d.repaired);
  }
  if (artifacts) {
    art.repaired = std::move(repaired);
    *artifacts = std::move(art);
  }
  r.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------
// Sweep

AggregateResult aggregate(std::vector<RunResult> runs, const std::vector<std::string>& config_ids) {
  AggregateResult out;
  out.runs = std::move(runs);
  out.configs.resize(config_ids.size());
  for (std::size_t c = 0; c < config_ids.size(); ++c) out.configs[c].config_id = config_ids[c];

  for (std::size_t k = 0; k < out.runs.size(); ++k) {
    const auto& r = out.runs[k];
    if (r.config_index >= out.configs.size()) throw Error("run refers to an unknown config");
    auto& agg = out.configs[r.config_index];
    if (r.status == RunStatus::error) {
      ++agg.n_failed;
      ++out.failures;
      continue;
    }
    ++agg.n_runs;
    for (std::size_t p = 0; p < 4; ++p) {
      agg.mean_broken[p] += static_cast<double>(r.splits[p].broken());
      agg.mean_repaired[p] += static_cast<double>(r.splits[p].repaired());
      agg.mean_accuracy_before[p] += r.splits[p].accuracy_before;
      agg.mean_accuracy_after[p] += r.splits[p].accuracy_after;
    }
    const auto reg = static_cast<std::size_t>(kRegressionSplit);
    if (!agg.min_regression_run) {
      agg.min_regression_run = k;
    } else {
      const auto& best = out.runs[*agg.min_regression_run];
      if (r.splits[reg].broken() < best.splits[reg].broken() ||
          (r.splits[reg].broken() == best.splits[reg].broken() && r.repetition < best.repetition)) {
        agg.min_regression_run = k;
      }
    }
  }
  for (auto& agg : out.configs) {
    if (agg.n_runs == 0) continue;
    const double n = static_cast<double>(agg.n_runs);
    for (std::size_t p = 0; p < 4; ++p) {
      agg.mean_broken[p] /= n;
      agg.mean_repaired[p] /= n;
      agg.mean_accuracy_before[p] /= n;
      agg.mean_accuracy_after[p] /= n;
    }
  }
  return out;
}

fs::path run_dir(const fs::path& out_dir, std::size_t config_index, std::size_t repetition) {
  return out_dir / "runs" / fmt::format("c{:03}_r{:03}", config_index, repetition);
}

namespace {

std::vector<std::string> grid_ids(const ExperimentSpec& spec) {
  std::vector<std::string> ids;
  for (const auto& p : spec.grid) ids.push_back(p.id);
  return ids;
}

std::optional<RunResult> load_finished(const fs::path& dir, std::uint64_t seed,
                                       const std::string& hash) {
  auto path = dir / "result.json";
  if (!fs::exists(path)) return std::nullopt;
  try {
    auto r = run_from_json(nlohmann::json::parse(read_file(path)));
    if (r.seed != seed || r.config_hash != hash || r.status == RunStatus::error) return std::nullopt;
    return r;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void persist_run(const fs::path& dir, const RunResult& r, const RunArtifacts& art) {
  ojson prov;
  prov["config_id"] = r.config_id;
  prov["config_hash"] = r.config_hash;
  prov["seed"] = r.seed;
  prov["repetition"] = r.repetition;
  save_model(art.repaired, dir / "model.json", prov);
  write_file(dir / "trace.csv", trace_to_csv(art.trace));
  write_file(dir / "impacts.csv", art.impacts_csv);
  write_file(dir / "localized.csv", art.localized_csv);
  write_file(dir / "timing.json", ojson{{"runtime_seconds", r.runtime_seconds}}.dump(2) + "\n");
  // result.json goes last: its presence marks the run complete.
  write_file(dir / "result.json", run_to_json(r).dump(2) + "\n");
}

}  // namespace

AggregateResult run_sweep(const ExperimentSpec& spec_in, const fs::path& out_dir,
                          const SweepOptions& options) {
  ExperimentSpec spec = spec_in;
  spec.validate();
  spec.swarm.threads = std::max<std::size_t>(options.pso_threads, 1);
  write_file(out_dir / "experiment.json", spec_to_json(spec).dump(2) + "\n");
  Scenario scenario = build_scenario(spec);
  save_scenario(scenario, out_dir / "scenario");

  const std::size_t total = spec.grid.size() * spec.repetitions;
  std::vector<RunResult> runs(total);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t idx = next++; idx < total; idx = next++) {
      const std::size_t c = idx / spec.repetitions;
      const std::size_t rep = idx % spec.repetitions;
      const auto& point = spec.grid[c];
      const auto dir = run_dir(out_dir, c, rep);
      const auto seed = run_seed(spec.master_seed, c, rep);
      const auto hash = config_hash(spec, point);

      if (options.resume) {
        if (auto done = load_finished(dir, seed, hash)) {
          runs[idx] = std::move(*done);
          continue;
        }
      }
      RunResult r;
      RunArtifacts art;
      try {
        r = run_repair_pipeline(scenario.subject, scenario.splits, point, spec, seed, &art);
      } catch (const std::exception& e) {
        r = RunResult{};
        r.config_id = point.id;
        r.seed = seed;
        r.config_hash = hash;
        r.status = RunStatus::error;
        r.message = e.what();
        art.repaired = scenario.subject;
      }
      r.config_index = c;
      r.repetition = rep;
      persist_run(dir, r, art);
      runs[idx] = std::move(r);
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, std::max<std::size_t>(total, 1));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }
  return aggregate(std::move(runs), grid_ids(spec));
}

AggregateResult load_sweep(const ExperimentSpec& spec, const fs::path& out_dir) {
  std::vector<RunResult> runs;
  for (std::size_t c = 0; c < spec.grid.size(); ++c) {
    for (std::size_t rep = 0; rep < spec.repetitions; ++rep) {
      auto path = run_dir(out_dir, c, rep) / "result.json";
      RunResult r;
      if (fs::exists(path)) {
        r = run_from_json(nlohmann::json::parse(read_file(path)));
      } else {
        r.config_id = spec.grid[c].id;
        r.seed = run_seed(spec.master_seed, c, rep);
        r.status = RunStatus::error;
        r.message = "missing result.json";
      }
      r.config_index = c;
      r.repetition = rep;
      runs.push_back(std::move(r));
    }
  }
  return aggregate(std::move(runs), grid_ids(spec));
}

// ---------------------------------------------------------------------------
// Reports

std::string runs_csv(const AggregateResult& agg) {
  std::string out =
      "config_id,config_index,repetition,seed,status,n_negatives,n_positives,n_localized,"
      "identity_fallback,best_fitness,positives_broken";
  for (const char* s : kSplitNames) {
    out += fmt::format(",{0}_acc_before,{0}_acc_after,{0}_broken,{0}_repaired", s);
  }
  out += '\n';
  for (const auto& r : agg.runs) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}", r.config_id, r.config_index,
                       r.repetition, r.seed, to_string(r.status), r.n_negatives, r.n_positives,
                       r.n_localized, r.identity_fallback ? 1 : 0,
                       format_double(r.best.gated_fitness), r.positives_broken);
    for (const auto& s : r.splits) {
      out += fmt::format(",{},{},{},{}", format_double(s.accuracy_before),
                         format_double(s.accuracy_after), s.broken(), s.repaired());
    }
    out += '\n';
  }
  return out;
}

std::string config_means_csv(const AggregateResult& agg) {
  std::string out = "config_id,n_runs,n_failed";
  for (const char* s : kSplitNames) {
    out += fmt::format(",{0}_mean_broken,{0}_mean_repaired,{0}_mean_acc_before,{0}_mean_acc_after", s);
  }
  out += '\n';
  for (const auto& c : agg.configs) {
    out += fmt::format("{},{},{}", c.config_id, c.n_runs, c.n_failed);
    for (std::size_t p = 0; p < 4; ++p) {
      out += fmt::format(",{},{},{},{}", format_double(c.mean_broken[p]),
                         format_double(c.mean_repaired[p]),
                         format_double(c.mean_accuracy_before[p]),
                         format_double(c.mean_accuracy_after[p]));
    }
    out += '\n';
  }
  return out;
}

void emit_report(const AggregateResult& agg, const fs::path& out_dir) {
  write_file(out_dir / "runs.csv", runs_csv(agg));
  write_file(out_dir / "config_means.csv", config_means_csv(agg));

  std::string minreg = "config_id,repetition,seed";
  for (const char* s : kSplitNames) {
    minreg += fmt::format(",{0}_acc_before,{0}_acc_after,{0}_broken,{0}_repaired", s);
  }
  minreg += '\n';
  for (const auto& c : agg.configs) {
    if (!c.min_regression_run) continue;
    const auto& r = agg.runs[*c.min_regression_run];
    minreg += fmt::format("{},{},{}", c.config_id, r.repetition, r.seed);
    for (const auto& s : r.splits) {
      minreg += fmt::format(",{},{},{},{}", format_double(s.accuracy_before),
                            format_double(s.accuracy_after), s.broken(), s.repaired());
    }
    minreg += '\n';
  }
  write_file(out_dir / "min_regression.csv", minreg);

  std::string longform = "config_id,repetition,split,metric,value\n";
  for (const auto& r : agg.runs) {
    if (r.status == RunStatus::error) continue;
    for (std::size_t p = 0; p < 4; ++p) {
      const auto& s = r.splits[p];
      longform += fmt::format("{0},{1},{2},acc_before,{3}\n{0},{1},{2},acc_after,{4}\n"
                              "{0},{1},{2},broken,{5}\n{0},{1},{2},repaired,{6}\n",
                              r.config_id, r.repetition, kSplitNames[p],
                              format_double(s.accuracy_before), format_double(s.accuracy_after),
                              s.broken(), s.repaired());
    }
  }
  write_file(out_dir / "long.csv", longform);

  ojson summary;
  summary["format"] = "nnrepair-report";
  summary["version"] = 1;
  summary["n_runs"] = agg.runs.size();
  summary["failures"] = agg.failures;
  summary["regression_split"] = kSplitNames[static_cast<std::size_t>(kRegressionSplit)];
  summary["configs"] = ojson::array();
  for (const auto& c : agg.configs) {
    ojson j;
    j["config_id"] = c.config_id;
    j["n_runs"] = c.n_runs;
    j["n_failed"] = c.n_failed;
    for (std::size_t p = 0; p < 4; ++p) {
      j["splits"][kSplitNames[p]] = {{"mean_broken", c.mean_broken[p]},
                                     {"mean_repaired", c.mean_repaired[p]},
                                     {"mean_accuracy_before", c.mean_accuracy_before[p]},
                                     {"mean_accuracy_after", c.mean_accuracy_after[p]}};
    }
    if (c.min_regression_run) {
      const auto& r = agg.runs[*c.min_regression_run];
      j["min_regression"] = {{"repetition", r.repetition}, {"seed", r.seed}};
    } else {
      j["min_regression"] = nullptr;
    }
    summary["configs"].push_back(std::move(j));
  }
  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace nnrepair
