#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnrepair/dataset.hpp"
#include "nnrepair/model.hpp"

namespace nnrepair {

struct Verdict {
  SampleId id = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
  bool passed = false;
};

struct EvalReport {
  std::vector<Verdict> verdicts;  // dataset order
  std::size_t total = 0;
  std::size_t passed = 0;
  double overall_accuracy = 1.0;
  std::vector<std::size_t> class_total;
  std::vector<std::size_t> class_passed;
  std::vector<double> per_class_accuracy;  // 1.0 for classes with no samples
  bool degenerate = false;                 // no samples evaluated
};

struct RepairDiff {
  std::vector<SampleId> broken;    // pass -> fail
  std::vector<SampleId> repaired;  // fail -> pass
  std::size_t unchanged_pass = 0;
  std::size_t unchanged_fail = 0;
};

enum class RegressionLevel { overall, instance };

/// Restricts a regression check to one class; empty means all samples.
struct Scope {
  std::optional<std::size_t> target_class;
};

struct RegressionCheck {
  bool suppressed = true;
  double accuracy_before = 1.0;
  double accuracy_after = 1.0;
  std::vector<SampleId> violations;  // broken ids in scope (instance level)
};

EvalReport evaluate(const Model& model, const Dataset& dataset);

/// Throws when the two reports cover different sample ids.
RepairDiff diff(const EvalReport& before, const EvalReport& after);

RegressionCheck check_regression(const EvalReport& before, const EvalReport& after,
                                 RegressionLevel level, Scope scope = {});

nlohmann::ordered_json report_to_json(const EvalReport& report);
nlohmann::ordered_json diff_to_json(const RepairDiff& d);
std::string verdicts_to_csv(const EvalReport& report);

}  // namespace nnrepair
