#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nnrepair/model.hpp"

namespace nnrepair {

enum class Impact : std::size_t { back_failed = 0, fwd_failed = 1, back_passed = 2, fwd_passed = 3 };

/// Per-weight impact scores for one layer. Rows follow `refs`, which lists
/// every weight of the layer in WeightRef order.
struct ImpactTable {
  std::size_t layer = 0;
  std::vector<WeightRef> refs;
  std::vector<double> back_failed, fwd_failed, back_passed, fwd_passed;

  std::size_t size() const { return refs.size(); }
  const std::vector<double>& column(Impact which) const;
  std::vector<double>& column(Impact which);
};

struct TopSets {
  std::vector<WeightRef> back_failed, fwd_failed, back_passed, fwd_passed;
};

struct LocalizedSet {
  std::vector<WeightRef> refs;  // descending suspiciousness
  std::size_t n_g = 0;
  std::size_t top_set_size = 0;  // each of the four top sets has this many members
  std::size_t candidates = 0;    // |B_failed ∩ F_failed|
  std::size_t excluded = 0;      // candidates removed as passed-data weights
  bool warning = false;
  std::string note;
};

/// back = |mean dL/dw| and fwd = mean |o_i * w_ij| over each batch.
ImpactTable compute_impacts(const Model& model, const Batch& failed, const Batch& passed,
                            std::size_t layer);

/// Row positions of the table sorted by one impact, largest first, ties by
/// WeightRef order.
std::vector<std::size_t> impact_order(const ImpactTable& table, Impact which);

TopSets top_sets(const ImpactTable& table, std::size_t n_g);

/// (B_failed ∩ F_failed) \ (B_passed ∩ F_passed) at cut n_g. An empty result
/// sets the warning flag.
LocalizedSet localize(const ImpactTable& table, std::size_t n_g);

/// Smallest n_g (doubling scan, then bisection) whose localized set reaches
/// `target` weights, truncated to exactly `target` by suspiciousness.
LocalizedSet localize_to_count(const ImpactTable& table, std::size_t target);
LocalizedSet localize_to_count(const Model& model, const Batch& failed, const Batch& passed,
                               std::size_t layer, std::size_t target);

/// Suspiciousness of each row: min of the normalized back_failed and
/// fwd_failed rank scores (1 for the top weight).
std::vector<double> suspiciousness(const ImpactTable& table);

std::string impacts_to_csv(const ImpactTable& table);
std::string localized_to_csv(const ImpactTable& table, const LocalizedSet& set);

}  // namespace nnrepair
