#include "nnrepair/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <tuple>

#include "nnrepair/errors.hpp"
#include "nnrepair/rng.hpp"

namespace nnrepair {

void Dataset::validate() const {
  data.validate();
  if (!class_names.empty() && class_names.size() != n_classes) {
    throw FormatError(
        fmt::format("{} class names for {} classes", class_names.size(), n_classes));
  }
  for (std::size_t s = 0; s < data.size(); ++s) {
    if (data.labels[s] >= n_classes) {
      throw FormatError(fmt::format("sample {} has label {} but there are {} classes",
                                    data.ids[s], data.labels[s], n_classes));
    }
  }
  for (double v : data.inputs.values()) {
    if (!std::isfinite(v)) throw FormatError("dataset contains non-finite features");
  }
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(n_classes, 0);
  for (auto y : data.labels) ++counts[y];
  return counts;
}

Dataset& Splits::operator[](SplitPart p) {
  switch (p) {
    case SplitPart::train:
      return train;
    case SplitPart::validation:
      return validation;
    case SplitPart::repair:
      return repair;
    case SplitPart::test:
      break;
  }
  return test;
}

const Dataset& Splits::operator[](SplitPart p) const {
  return const_cast<Splits&>(*this)[p];
}

namespace {

using IndexSplits = std::array<std::vector<std::size_t>, 4>;

void check_fractions(const SplitSpec& spec) {
  double sum = 0.0;
  for (double f : spec.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(fmt::format("split fraction {} not in (0, 1]", f));
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(fmt::format("split fractions sum to {}, not 1", sum));
  }
}

/// Largest-remainder apportionment of n items over the fractions.
std::array<std::size_t, 4> apportion(std::size_t n, const std::array<double, 4>& fractions) {
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> rem{};
  std::size_t used = 0;
  for (std::size_t p = 0; p < 4; ++p) {
    double exact = fractions[p] * static_cast<double>(n);
    counts[p] = static_cast<std::size_t>(std::floor(exact));
    rem[p] = exact - static_cast<double>(counts[p]);
    used += counts[p];
  }
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::ranges::stable_sort(order, [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < n; k = (k + 1) % 4, ++used) ++counts[order[k]];
  return counts;
}

IndexSplits split_indices(const Dataset& dataset, const SplitSpec& spec) {
  check_fractions(spec);
  dataset.validate();
  const std::size_t n = dataset.size();
  Rng rng(derive_seed(spec.seed, 0x5b117));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (spec.stratified) {
    // Each class is shuffled, then its members are spread evenly over [0, 1)
    // so that any contiguous cut of the merged order is close to stratified.
    auto counts = dataset.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) {
        throw Error(fmt::format("class {} has no samples; cannot stratify", c));
      }
    }
    std::vector<std::vector<std::size_t>> by_class(dataset.n_classes);
    for (std::size_t s = 0; s < n; ++s) by_class[dataset.data.labels[s]].push_back(s);
    std::vector<std::tuple<double, std::uint64_t, std::size_t>> keyed;
    keyed.reserve(n);
    for (auto& members : by_class) {
      std::shuffle(members.begin(), members.end(), rng);
      const double nc = static_cast<double>(members.size());
      for (std::size_t k = 0; k < members.size(); ++k) {
        keyed.emplace_back((static_cast<double>(k) + 0.5) / nc, rng(), members[k]);
      }
    }
    std::ranges::sort(keyed);
    for (std::size_t k = 0; k < n; ++k) order[k] = std::get<2>(keyed[k]);
  } else {
    std::shuffle(order.begin(), order.end(), rng);
  }

  auto counts = apportion(n, spec.fractions);
  IndexSplits out;
  std::size_t pos = 0;
  for (std::size_t p = 0; p < 4; ++p) {
    out[p].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                  order.begin() + static_cast<std::ptrdiff_t>(pos + counts[p]));
    pos += counts[p];
  }
  return out;
}

Splits materialize(const Dataset& dataset, IndexSplits& parts) {
  Splits s;
  for (std::size_t p = 0; p < 4; ++p) {
    std::ranges::sort(parts[p]);
    Dataset& d = s[static_cast<SplitPart>(p)];
    d.n_classes = dataset.n_classes;
    d.class_names = dataset.class_names;
    d.data = dataset.data.subset(parts[p]);
  }
  return s;
}

}  // namespace

Splits split(const Dataset& dataset, const SplitSpec& spec) {
  auto parts = split_indices(dataset, spec);
  return materialize(dataset, parts);
}

Splits apply_drift(const Dataset& dataset, const SplitSpec& spec, const DriftSpec& drift) {
  if (drift.target_class >= dataset.n_classes) {
    throw Error(fmt::format("drift target class {} not among {} classes", drift.target_class,
                            dataset.n_classes));
  }
  if (!(drift.train_fraction >= 0.0 && drift.train_fraction <= 1.0 &&
        drift.repair_fraction >= 0.0 && drift.repair_fraction <= 1.0)) {
    throw Error("drift fractions must lie in [0, 1]");
  }
  if (drift.train_fraction > drift.repair_fraction) {
    throw Error("drift train fraction must not exceed the repair fraction");
  }
  auto parts = split_indices(dataset, spec);
  const auto& labels = dataset.data.labels;
  auto is_target = [&](std::size_t row) { return labels[row] == drift.target_class; };
  if (std::ranges::none_of(labels, [&](auto y) { return y == drift.target_class; })) {
    throw Error(fmt::format("drift target class {} has no samples", drift.target_class));
  }

  Rng rng(derive_seed(drift.seed, 0xd71f7));
  auto& train = parts[static_cast<std::size_t>(SplitPart::train)];
  std::vector<std::size_t> train_target, train_other;
  for (auto row : train) (is_target(row) ? train_target : train_other).push_back(row);
  std::shuffle(train_target.begin(), train_target.end(), rng);

  const auto keep = static_cast<std::size_t>(
      std::llround(drift.train_fraction * static_cast<double>(train_target.size())));
  std::vector<std::size_t> displaced(train_target.begin() + static_cast<std::ptrdiff_t>(keep),
                                     train_target.end());
  train_target.resize(keep);
  // Repair takes displaced samples until its target share reaches
  // repair_fraction (or the supply runs out).
  const auto& repair_rows = parts[static_cast<std::size_t>(SplitPart::repair)];
  const auto repair_target = static_cast<std::size_t>(std::ranges::count_if(repair_rows, is_target));
  const auto goal = static_cast<std::size_t>(
      std::llround(drift.repair_fraction * static_cast<double>(repair_rows.size())));
  const std::size_t to_repair =
      std::min(displaced.size(), goal > repair_target ? goal - repair_target : 0);

  // Destination of each displaced sample: repair first, the remainder
  // alternating between validation and test.
  std::array<std::vector<std::size_t>, 4> incoming;
  for (std::size_t k = 0; k < displaced.size(); ++k) {
    SplitPart dest = k < to_repair                      ? SplitPart::repair
                     : ((k - to_repair) % 2 == 0) ? SplitPart::validation
                                                        : SplitPart::test;
    incoming[static_cast<std::size_t>(dest)].push_back(displaced[k]);
  }

  std::vector<std::size_t> returned;
  for (std::size_t p = 1; p < 4; ++p) {
    if (incoming[p].empty()) continue;
    std::vector<std::size_t> target_rows, others;
    for (auto row : parts[p]) (is_target(row) ? target_rows : others).push_back(row);
    if (others.size() < incoming[p].size()) {
      static constexpr const char* kNames[] = {"train", "validation", "repair", "test"};
      throw Error(fmt::format(
          "infeasible drift: {} split has only {} non-target samples but {} must be swapped in",
          kNames[p], others.size(), incoming[p].size()));
    }
    std::shuffle(others.begin(), others.end(), rng);
    auto cut = others.begin() + static_cast<std::ptrdiff_t>(incoming[p].size());
    returned.insert(returned.end(), others.begin(), cut);
    others.erase(others.begin(), cut);
    parts[p] = std::move(target_rows);
    parts[p].insert(parts[p].end(), others.begin(), others.end());
    parts[p].insert(parts[p].end(), incoming[p].begin(), incoming[p].end());
  }
  train = std::move(train_other);
  train.insert(train.end(), train_target.begin(), train_target.end());
  train.insert(train.end(), returned.begin(), returned.end());
  return materialize(dataset, parts);
}

RepairInputs select_repair_inputs(const Model& model, const Dataset& train,
                                  const Dataset& repair_split, std::size_t target_class) {
  auto train_pred = predict(model, train.data.inputs);
  auto repair_pred = predict(model, repair_split.data.inputs);
  std::vector<std::size_t> passed, failed;
  for (std::size_t s = 0; s < train.size(); ++s) {
    if (train_pred[s] == train.data.labels[s]) passed.push_back(s);
  }
  for (std::size_t s = 0; s < repair_split.size(); ++s) {
    if (repair_split.data.labels[s] == target_class && repair_pred[s] != target_class) {
      failed.push_back(s);
    }
  }
  if (failed.empty()) {
    throw NothingToRepair(
        fmt::format("no misclassified class-{} samples in the repair split", target_class));
  }
  if (passed.empty()) throw NothingToRepair("no correctly classified training samples");
  return {train.data.subset(passed), repair_split.data.subset(failed)};
}

}  // namespace nnrepair
