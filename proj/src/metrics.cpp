#include "nnrepair/metrics.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <unordered_map>

#include "nnrepair/errors.hpp"

namespace nnrepair {

EvalReport evaluate(const Model& model, const Dataset& dataset) {
  EvalReport r;
  const std::size_t n_classes = std::max(dataset.n_classes, model.num_classes());
  r.class_total.assign(n_classes, 0);
  r.class_passed.assign(n_classes, 0);
  auto predictions = predict(model, dataset.data.inputs);
  r.verdicts.reserve(dataset.size());
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    Verdict v{dataset.data.ids[s], dataset.data.labels[s], predictions[s], false};
    v.passed = v.predicted == v.label;
    ++r.class_total[v.label];
    if (v.passed) {
      ++r.class_passed[v.label];
      ++r.passed;
    }
    r.verdicts.push_back(v);
  }
  r.total = r.verdicts.size();
  r.degenerate = r.total == 0;
  r.overall_accuracy = r.degenerate ? 1.0 : static_cast<double>(r.passed) / static_cast<double>(r.total);
  r.per_class_accuracy.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    r.per_class_accuracy[c] =
        r.class_total[c] == 0
            ? 1.0
            : static_cast<double>(r.class_passed[c]) / static_cast<double>(r.class_total[c]);
  }
  return r;
}

RepairDiff diff(const EvalReport& before, const EvalReport& after) {
  std::unordered_map<SampleId, bool> after_pass;
  after_pass.reserve(after.verdicts.size());
  for (const auto& v : after.verdicts) after_pass.emplace(v.id, v.passed);

  std::vector<SampleId> only_before;
  RepairDiff d;
  for (const auto& v : before.verdicts) {
    auto it = after_pass.find(v.id);
    if (it == after_pass.end()) {
      only_before.push_back(v.id);
      continue;
    }
    if (v.passed && it->second) {
      ++d.unchanged_pass;
    } else if (v.passed) {
      d.broken.push_back(v.id);
    } else if (it->second) {
      d.repaired.push_back(v.id);
    } else {
      ++d.unchanged_fail;
    }
  }
  if (!only_before.empty() || before.verdicts.size() != after.verdicts.size()) {
    std::unordered_map<SampleId, bool> before_ids;
    for (const auto& v : before.verdicts) before_ids.emplace(v.id, true);
    std::vector<SampleId> only_after;
    for (const auto& v : after.verdicts) {
      if (!before_ids.contains(v.id)) only_after.push_back(v.id);
    }
    throw Error(fmt::format("reports cover different samples; only before: [{}], only after: [{}]",
                            fmt::join(only_before, ","), fmt::join(only_after, ",")));
  }
  std::ranges::sort(d.broken);
  std::ranges::sort(d.repaired);
  return d;
}

namespace {

double scoped_accuracy(const EvalReport& r, const Scope& scope) {
  if (!scope.target_class) return r.overall_accuracy;
  const std::size_t c = *scope.target_class;
  if (c >= r.class_total.size() || r.class_total[c] == 0) return 1.0;
  return r.per_class_accuracy[c];
}

}  // namespace

RegressionCheck check_regression(const EvalReport& before, const EvalReport& after,
                                 RegressionLevel level, Scope scope) {
  RegressionCheck out;
  out.accuracy_before = scoped_accuracy(before, scope);
  out.accuracy_after = scoped_accuracy(after, scope);
  if (level == RegressionLevel::overall) {
    out.suppressed = out.accuracy_after >= out.accuracy_before;
    return out;
  }
  auto d = diff(before, after);
  std::unordered_map<SampleId, std::size_t> label_of;
  for (const auto& v : before.verdicts) label_of.emplace(v.id, v.label);
  for (auto id : d.broken) {
    if (!scope.target_class || label_of.at(id) == *scope.target_class) out.violations.push_back(id);
  }
  out.suppressed = out.violations.empty();
  return out;
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["total"] = report.total;
  j["passed"] = report.passed;
  j["overall_accuracy"] = report.overall_accuracy;
  j["degenerate"] = report.degenerate;
  j["class_total"] = report.class_total;
  j["class_passed"] = report.class_passed;
  j["per_class_accuracy"] = report.per_class_accuracy;
  std::vector<SampleId> failed;
  for (const auto& v : report.verdicts) {
    if (!v.passed) failed.push_back(v.id);
  }
  j["failed_ids"] = failed;
  return j;
}

nlohmann::ordered_json diff_to_json(const RepairDiff& d) {
  nlohmann::ordered_json j;
  j["broken"] = d.broken.size();
  j["repaired"] = d.repaired.size();
  j["unchanged_pass"] = d.unchanged_pass;
  j["unchanged_fail"] = d.unchanged_fail;
  j["broken_ids"] = d.broken;
  j["repaired_ids"] = d.repaired;
  return j;
}

std::string verdicts_to_csv(const EvalReport& report) {
  std::string out = "id,label,predicted,passed\n";
  for (const auto& v : report.verdicts) {
    out += fmt::format("{},{},{},{}\n", v.id, v.label, v.predicted, v.passed ? 1 : 0);
  }
  return out;
}

}  // namespace nnrepair
