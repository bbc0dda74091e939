#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nnrepair/model.hpp"

namespace nnrepair {

struct Dataset {
  Batch data;
  std::size_t n_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return data.size(); }

  /// Checks ids are unique, labels are < n_classes and features are finite.
  void validate() const;
  std::vector<std::size_t> class_counts() const;
};

enum class SplitPart : std::size_t { train = 0, validation = 1, repair = 2, test = 3 };

struct SplitSpec {
  std::array<double, 4> fractions{0.5, 0.15, 0.2, 0.15};
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct Splits {
  Dataset train, validation, repair, test;

  Dataset& operator[](SplitPart p);
  const Dataset& operator[](SplitPart p) const;
};

/// Target-class prevalence shift between training time and repair time.
///
/// `train_fraction` scales the target class's natural allotment in the train
/// split. Displaced target samples are swapped into the repair split until
/// its target share reaches `repair_fraction` (or they run out); the rest are
/// spread over validation and test. Each swap returns a non-target sample to
/// train, so split sizes and the partition are preserved.
struct DriftSpec {
  std::size_t target_class = 0;
  double train_fraction = 1.0;
  double repair_fraction = 1.0;
  std::uint64_t seed = 0;
};

struct RepairInputs {
  Batch positive_pool;  // passed train samples, every class
  Batch negatives;      // failed target-class samples from the repair split
};

Splits split(const Dataset& dataset, const SplitSpec& spec);
Splits apply_drift(const Dataset& dataset, const SplitSpec& spec, const DriftSpec& drift);

/// Throws NothingToRepair when either set comes out empty.
RepairInputs select_repair_inputs(const Model& model, const Dataset& train,
                                  const Dataset& repair_split, std::size_t target_class);

}  // namespace nnrepair
