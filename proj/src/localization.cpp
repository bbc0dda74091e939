#include "nnrepair/localization.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "nnrepair/errors.hpp"
#include "nnrepair/serialize.hpp"

namespace nnrepair {

const std::vector<double>& ImpactTable::column(Impact which) const {
  switch (which) {
    case Impact::back_failed:
      return back_failed;
    case Impact::fwd_failed:
      return fwd_failed;
    case Impact::back_passed:
      return back_passed;
    case Impact::fwd_passed:
      break;
  }
  return fwd_passed;
}

std::vector<double>& ImpactTable::column(Impact which) {
  return const_cast<std::vector<double>&>(std::as_const(*this).column(which));
}

namespace {

void impacts_for(const Model& model, const Batch& batch, std::size_t layer,
                 std::vector<double>& back, std::vector<double>& fwd) {
  if (batch.empty()) throw Error("impact computation needs a non-empty batch");
  const auto& l = model.layer(layer);
  Matrix grad = weight_gradients(model, batch, layer);
  Matrix inputs = layer_inputs(model, batch, layer);
  const std::size_t n_in = l.spec.input_size, n_out = l.spec.output_size;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  // Mean |o_i| per input neuron is enough: |o_i * w_ij| = |o_i| * |w_ij|.
  std::vector<double> mean_abs(n_in, 0.0);
  for (std::size_t s = 0; s < inputs.rows(); ++s) {
    for (std::size_t i = 0; i < n_in; ++i) mean_abs[i] += std::abs(inputs(s, i));
  }
  for (double& v : mean_abs) v *= inv_n;

  back.resize(n_in * n_out);
  fwd.resize(n_in * n_out);
  std::size_t k = 0;
  for (std::size_t j = 0; j < n_out; ++j) {
    for (std::size_t i = 0; i < n_in; ++i, ++k) {
      back[k] = std::abs(grad(i, j));
      fwd[k] = mean_abs[i] * std::abs(l.weights(i, j));
    }
  }
}

std::vector<std::size_t> ranks_of(const ImpactTable& table, Impact which) {
  auto order = impact_order(table, which);
  std::vector<std::size_t> rank(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

struct RankTable {
  std::vector<std::size_t> bf, ff, bp, fp;

  explicit RankTable(const ImpactTable& t)
      : bf(ranks_of(t, Impact::back_failed)),
        ff(ranks_of(t, Impact::fwd_failed)),
        bp(ranks_of(t, Impact::back_passed)),
        fp(ranks_of(t, Impact::fwd_passed)) {}

  bool candidate(std::size_t k, std::size_t n_g) const { return bf[k] < n_g && ff[k] < n_g; }
  bool passed_weight(std::size_t k, std::size_t n_g) const { return bp[k] < n_g && fp[k] < n_g; }

  std::size_t localized_size(std::size_t n_g) const {
    std::size_t count = 0;
    for (std::size_t k = 0; k < bf.size(); ++k) count += candidate(k, n_g) && !passed_weight(k, n_g);
    return count;
  }
};

void check_n_g(const ImpactTable& table, std::size_t n_g) {
  if (n_g < 1 || n_g > table.size()) {
    throw Error(fmt::format("n_g = {} outside [1, {}]", n_g, table.size()));
  }
}

LocalizedSet localize_ranked(const ImpactTable& table, const RankTable& ranks, std::size_t n_g) {
  check_n_g(table, n_g);
  auto score = suspiciousness(table);
  LocalizedSet out;
  out.n_g = n_g;
  out.top_set_size = n_g;
  std::vector<std::size_t> picked;
  for (std::size_t k = 0; k < table.size(); ++k) {
    if (!ranks.candidate(k, n_g)) continue;
    ++out.candidates;
    if (ranks.passed_weight(k, n_g)) {
      ++out.excluded;
      continue;
    }
    picked.push_back(k);
  }
  std::ranges::stable_sort(picked, [&](auto a, auto b) { return score[a] > score[b]; });
  for (auto k : picked) out.refs.push_back(table.refs[k]);
  if (out.refs.empty()) {
    out.warning = true;
    out.note = fmt::format("no weights localized at n_g = {}", n_g);
  }
  return out;
}

}  // namespace

ImpactTable compute_impacts(const Model& model, const Batch& failed, const Batch& passed,
                            std::size_t layer) {
  ImpactTable t;
  t.layer = layer;
  t.refs = layer_refs(model, layer);
  impacts_for(model, failed, layer, t.back_failed, t.fwd_failed);
  impacts_for(model, passed, layer, t.back_passed, t.fwd_passed);
  return t;
}

std::vector<std::size_t> impact_order(const ImpactTable& table, Impact which) {
  const auto& col = table.column(which);
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), 0);
  std::ranges::sort(order, [&](std::size_t a, std::size_t b) {
    if (col[a] != col[b]) return col[a] > col[b];
    return table.refs[a] < table.refs[b];
  });
  return order;
}

TopSets top_sets(const ImpactTable& table, std::size_t n_g) {
  check_n_g(table, n_g);
  auto take = [&](Impact which) {
    auto order = impact_order(table, which);
    std::vector<WeightRef> out;
    for (std::size_t r = 0; r < n_g; ++r) out.push_back(table.refs[order[r]]);
    std::ranges::sort(out);
    return out;
  };
  return {take(Impact::back_failed), take(Impact::fwd_failed), take(Impact::back_passed),
          take(Impact::fwd_passed)};
}

std::vector<double> suspiciousness(const ImpactTable& table) {
  auto bf = ranks_of(table, Impact::back_failed);
  auto ff = ranks_of(table, Impact::fwd_failed);
  const double n = static_cast<double>(table.size());
  std::vector<double> out(table.size());
  for (std::size_t k = 0; k < table.size(); ++k) {
    out[k] = 1.0 - static_cast<double>(std::max(bf[k], ff[k])) / n;
  }
  return out;
}

LocalizedSet localize(const ImpactTable& table, std::size_t n_g) {
  return localize_ranked(table, RankTable(table), n_g);
}

LocalizedSet localize_to_count(const ImpactTable& table, std::size_t target) {
  if (target < 1) throw Error("target localized count must be at least 1");
  if (table.size() == 0) throw Error("empty impact table");
  const RankTable ranks(table);
  const std::size_t total = table.size();
  auto reaches = [&](std::size_t n_g) { return ranks.localized_size(n_g) >= target; };

  std::size_t found = 0;
  std::size_t lo = 0;  // largest probed cut known to fall short
  for (std::size_t n = 1;; n = std::min(n * 2, total)) {
    if (reaches(n)) {
      found = n;
      break;
    }
    lo = n;
    if (n == total) break;
  }
  if (found != 0) {
    std::size_t hi = found;
    while (hi - lo > 1) {
      std::size_t mid = lo + (hi - lo) / 2;
      (reaches(mid) ? hi : lo) = mid;
    }
    found = hi;
  } else {
    // Set subtraction makes the size non-monotone in n_g, so fall back to a
    // full scan before giving up.
    std::size_t best_size = 0;
    found = 1;
    for (std::size_t n = 1; n <= total; ++n) {
      std::size_t size = ranks.localized_size(n);
      if (size >= target) {
        found = n;
        break;
      }
      if (size > best_size) {
        best_size = size;
        found = n;
      }
    }
  }

  LocalizedSet out = localize_ranked(table, ranks, found);
  if (out.refs.size() > target) {
    out.refs.resize(target);
  } else if (out.refs.size() < target) {
    out.warning = true;
    out.note = fmt::format("requested {} weights but at most {} are localizable (n_g = {})",
                           target, out.refs.size(), found);
  }
  return out;
}

LocalizedSet localize_to_count(const Model& model, const Batch& failed, const Batch& passed,
                               std::size_t layer, std::size_t target) {
  return localize_to_count(compute_impacts(model, failed, passed, layer), target);
}

std::string impacts_to_csv(const ImpactTable& table) {
  std::string out = "layer,from,to,back_failed,fwd_failed,back_passed,fwd_passed\n";
  for (std::size_t k = 0; k < table.size(); ++k) {
    const auto& r = table.refs[k];
    out += fmt::format("{},{},{},{},{},{},{}\n", r.layer, r.from, r.to,
                       format_double(table.back_failed[k]), format_double(table.fwd_failed[k]),
                       format_double(table.back_passed[k]), format_double(table.fwd_passed[k]));
  }
  return out;
}

std::string localized_to_csv(const ImpactTable& table, const LocalizedSet& set) {
  std::string out = "rank,layer,from,to,back_failed,fwd_failed,back_passed,fwd_passed\n";
  for (std::size_t r = 0; r < set.refs.size(); ++r) {
    auto it = std::ranges::lower_bound(table.refs, set.refs[r]);
    auto k = static_cast<std::size_t>(it - table.refs.begin());
    const auto& ref = set.refs[r];
    out += fmt::format("{},{},{},{},{},{},{},{}\n", r, ref.layer, ref.from, ref.to,
                       format_double(table.back_failed[k]), format_double(table.fwd_failed[k]),
                       format_double(table.back_passed[k]), format_double(table.fwd_passed[k]));
  }
  return out;
}

}  // namespace nnrepair
