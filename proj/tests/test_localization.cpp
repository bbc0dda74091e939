#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "nnrepair/errors.hpp"
#include "nnrepair/localization.hpp"
#include "support.hpp"

using namespace nnrepair;
using namespace testing_support;

namespace {

// Impacts of model_232 by explicit per-sample loops over retyped constants.
struct OracleImpacts {
  double back[2][3][3] = {};  // [layer][from][to], unused cells stay 0
  double fwd[2][3][3] = {};
};

OracleImpacts oracle_impacts(const Batch& b) {
  const double W0[2][3] = {{0.5, -0.3, 0.8}, {-0.2, 0.9, 0.4}};
  const double B0[3] = {0.1, -0.05, 0.0};
  const double W1[3][2] = {{0.7, -0.6}, {-0.4, 0.3}, {0.25, 0.55}};
  const double B1[2] = {0.02, -0.03};
  OracleImpacts o;
  double g0[2][3] = {}, g1[3][2] = {};
  const double n = static_cast<double>(b.size());
  for (std::size_t s = 0; s < b.size(); ++s) {
    const double x[2] = {b.inputs(s, 0), b.inputs(s, 1)};
    double z[3], h[3];
    for (int j = 0; j < 3; ++j) {
      z[j] = x[0] * W0[0][j] + x[1] * W0[1][j] + B0[j];
      h[j] = z[j] > 0 ? z[j] : 0.0;
    }
    double logit[2];
    for (int k = 0; k < 2; ++k) logit[k] = h[0] * W1[0][k] + h[1] * W1[1][k] + h[2] * W1[2][k] + B1[k];
    const double m = std::max(logit[0], logit[1]);
    const double e0 = std::exp(logit[0] - m), e1 = std::exp(logit[1] - m);
    const double p[2] = {e0 / (e0 + e1), e1 / (e0 + e1)};
    double dz[2];
    for (int k = 0; k < 2; ++k) dz[k] = p[k] - (b.labels[s] == static_cast<std::size_t>(k) ? 1.0 : 0.0);
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 2; ++k) {
        g1[i][k] += h[i] * dz[k] / n;
        o.fwd[1][i][k] += std::abs(h[i] * W1[i][k]) / n;
      }
    for (int j = 0; j < 3; ++j) {
      const double dh = (z[j] > 0 ? 1.0 : 0.0) * (dz[0] * W1[j][0] + dz[1] * W1[j][1]);
      for (int i = 0; i < 2; ++i) {
        g0[i][j] += x[i] * dh / n;
        o.fwd[0][i][j] += std::abs(x[i] * W0[i][j]) / n;
      }
    }
  }
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 2; ++k) o.back[1][i][k] = std::abs(g1[i][k]);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) o.back[0][i][j] = std::abs(g0[i][j]);
  return o;
}

ImpactTable random_table(Rng& rng, std::size_t n_in, std::size_t n_out, int levels) {
  ImpactTable t;
  t.layer = 0;
  for (std::size_t j = 0; j < n_out; ++j)
    for (std::size_t i = 0; i < n_in; ++i) t.refs.push_back({0, i, j});
  // Few distinct levels so ties are common.
  std::uniform_int_distribution<int> level(0, levels - 1);
  for (auto* col : {&t.back_failed, &t.fwd_failed, &t.back_passed, &t.fwd_passed}) {
    for (std::size_t k = 0; k < t.size(); ++k) col->push_back(level(rng) * 0.125);
  }
  return t;
}

// Top-n by full sort on (impact desc, ref asc).
std::set<WeightRef> full_sort_top(const ImpactTable& t, const std::vector<double>& col,
                                  std::size_t n) {
  std::vector<std::pair<double, WeightRef>> rows;
  for (std::size_t k = 0; k < t.size(); ++k) rows.emplace_back(col[k], t.refs[k]);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::set<WeightRef> out;
  for (std::size_t k = 0; k < n; ++k) out.insert(rows[k].second);
  return out;
}

}  // namespace

TEST(Impacts, Match232PerSampleOracle) {
  const Model m = model_232();
  Batch b = batch_232();
  std::vector<std::size_t> fail_rows{0, 2}, pass_rows{1, 3};
  Batch failed = b.subset(fail_rows), passed = b.subset(pass_rows);
  for (std::size_t layer = 0; layer < 2; ++layer) {
    auto t = compute_impacts(m, failed, passed, layer);
    auto of = oracle_impacts(failed), op = oracle_impacts(passed);
    ASSERT_EQ(t.size(), 6u);
    for (std::size_t k = 0; k < t.size(); ++k) {
      const auto& r = t.refs[k];
      EXPECT_NEAR(t.back_failed[k], of.back[layer][r.from][r.to], 1e-8);
      EXPECT_NEAR(t.fwd_failed[k], of.fwd[layer][r.from][r.to], 1e-8);
      EXPECT_NEAR(t.back_passed[k], op.back[layer][r.from][r.to], 1e-8);
      EXPECT_NEAR(t.fwd_passed[k], op.fwd[layer][r.from][r.to], 1e-8);
    }
  }
}

TEST(Impacts, ZeroWeightHasZeroForwardImpact) {
  auto layers = model_232().layers();
  layers[1].weights(1, 0) = 0.0;
  Model m(layers);
  auto t = compute_impacts(m, batch_232(), batch_232(), 1);
  auto it = std::ranges::find(t.refs, WeightRef{1, 1, 0});
  const auto k = static_cast<std::size_t>(it - t.refs.begin());
  EXPECT_EQ(t.fwd_failed[k], 0.0);
  EXPECT_EQ(t.fwd_passed[k], 0.0);
}

TEST(Impacts, SameBatchGivesEqualColumns) {
  auto t = compute_impacts(model_232(), batch_232(), batch_232(), 1);
  EXPECT_EQ(t.back_failed, t.back_passed);
  EXPECT_EQ(t.fwd_failed, t.fwd_passed);
}

TEST(Impacts, EmptyBatchThrows) {
  Batch empty;
  empty.inputs = Matrix(0, 2);
  EXPECT_THROW(compute_impacts(model_232(), empty, batch_232(), 1), Error);
}

TEST(TopSets, SaturationGivesFullSet) {
  Rng rng(1);
  auto t = random_table(rng, 5, 4, 6);
  auto s = top_sets(t, t.size());
  EXPECT_EQ(s.back_failed, t.refs);
  EXPECT_EQ(s.fwd_passed, t.refs);
}

TEST(TopSets, ThreeWayTieAtCutFollowsRefOrder) {
  ImpactTable t;
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < 3; ++i) t.refs.push_back({0, i, j});
  // refs: (0,0,0) (0,1,0) (0,2,0) (0,0,1) (0,1,1) (0,2,1)
  t.back_failed = {0.9, 0.5, 0.1, 0.5, 0.5, 0.2};
  t.fwd_failed = t.back_passed = t.fwd_passed = t.back_failed;
  auto s = top_sets(t, 3);
  std::vector<WeightRef> want{{0, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::ranges::sort(want);
  EXPECT_EQ(s.back_failed, want);
  auto oracle = full_sort_top(t, t.back_failed, 3);
  EXPECT_EQ(std::vector<WeightRef>(oracle.begin(), oracle.end()), s.back_failed);
}

TEST(TopSets, OutOfRangeCutThrows) {
  Rng rng(2);
  auto t = random_table(rng, 2, 2, 3);
  EXPECT_THROW(top_sets(t, 0), Error);
  EXPECT_THROW(top_sets(t, 5), Error);
}

TEST(Localize, EmptyFailedIntersectionGivesEmptySetWithWarning) {
  ImpactTable t;
  for (std::size_t i = 0; i < 4; ++i) t.refs.push_back({0, i, 0});
  t.back_failed = {4, 3, 2, 1};
  t.fwd_failed = {1, 2, 3, 4};
  t.back_passed = t.fwd_passed = {0, 0, 0, 0};
  auto set = localize(t, 2);
  EXPECT_TRUE(set.refs.empty());
  EXPECT_TRUE(set.warning);
}

TEST(Localize, DisjointPassedSetsLeaveFailedIntersection) {
  ImpactTable t;
  for (std::size_t i = 0; i < 6; ++i) t.refs.push_back({0, i, 0});
  t.back_failed = {6, 5, 4, 3, 2, 1};
  t.fwd_failed = {6, 5, 1, 4, 3, 2};
  t.back_passed = {0, 0, 0, 9, 9, 9};
  t.fwd_passed = {0, 0, 0, 9, 9, 9};
  auto set = localize(t, 3);
  std::set<WeightRef> got(set.refs.begin(), set.refs.end());
  EXPECT_EQ(got, (std::set<WeightRef>{{0, 0, 0}, {0, 1, 0}}));
  EXPECT_EQ(set.excluded, 0u);
}

TEST(Localize, RandomTablesMatchMembershipOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    auto t = random_table(rng, 1 + trial % 5, 1 + trial % 4, 2 + trial % 5);
    for (std::size_t n_g = 1; n_g <= t.size(); ++n_g) {
      auto bf = full_sort_top(t, t.back_failed, n_g), ff = full_sort_top(t, t.fwd_failed, n_g);
      auto bp = full_sort_top(t, t.back_passed, n_g), fp = full_sort_top(t, t.fwd_passed, n_g);
      std::set<WeightRef> want;
      for (const auto& r : t.refs) {
        if (bf.count(r) && ff.count(r) && !(bp.count(r) && fp.count(r))) want.insert(r);
      }
      auto set = localize(t, n_g);
      std::set<WeightRef> got(set.refs.begin(), set.refs.end());
      EXPECT_EQ(got.size(), set.refs.size());
      EXPECT_EQ(got, want) << "trial " << trial << " n_g " << n_g;
    }
  }
}

TEST(LocalizeToCount, TargetOneGivesSingleton) {
  Rng rng(3);
  auto t = random_table(rng, 8, 4, 50);
  auto set = localize_to_count(t, 1);
  EXPECT_EQ(set.refs.size(), 1u);
  EXPECT_FALSE(set.warning);
}

TEST(LocalizeToCount, OversizedTargetReturnsMaximalSetWithWarning) {
  Rng rng(4);
  auto t = random_table(rng, 6, 3, 40);
  auto set = localize_to_count(t, t.size() + 5);
  EXPECT_TRUE(set.warning);
  std::size_t best = 0;
  for (std::size_t n_g = 1; n_g <= t.size(); ++n_g) best = std::max(best, localize(t, n_g).refs.size());
  EXPECT_EQ(set.refs.size(), best);
}

TEST(LocalizeToCount, SubsetOfLocalizeAtFoundCut) {
  Rng rng(5);
  Model m = random_model(rng, {6, 8, 8, 4});
  Batch failed = random_batch(rng, 12, 6, 4, 0);
  Batch passed = random_batch(rng, 16, 6, 4, 100);
  auto t = compute_impacts(m, failed, passed, 1);
  std::size_t most = 0;
  for (std::size_t n_g = 1; n_g <= t.size(); ++n_g) most = std::max(most, localize(t, n_g).refs.size());
  ASSERT_GE(most, 4u);
  const std::size_t target = most - 2;
  auto set = localize_to_count(t, target);
  ASSERT_EQ(set.refs.size(), target) << set.note;
  auto full = localize(t, set.n_g);
  std::set<WeightRef> pool(full.refs.begin(), full.refs.end());
  for (const auto& r : set.refs) EXPECT_TRUE(pool.count(r));
  if (set.n_g > 1) EXPECT_LT(localize(t, set.n_g - 1).refs.size(), target);
  // Truncation keeps the prefix of the suspiciousness order.
  EXPECT_TRUE(std::equal(set.refs.begin(), set.refs.end(), full.refs.begin()));
  EXPECT_EQ(localize_to_count(m, failed, passed, 1, target).refs, set.refs);
}

TEST(LocalizeToCount, ZeroTargetThrows) {
  Rng rng(6);
  auto t = random_table(rng, 3, 3, 4);
  EXPECT_THROW(localize_to_count(t, 0), Error);
}

TEST(Suspiciousness, OrderIsDescendingWithRefTiebreak) {
  Rng rng(7);
  auto t = random_table(rng, 7, 5, 4);
  auto score = suspiciousness(t);
  for (std::size_t n_g = 1; n_g <= t.size(); ++n_g) {
    auto set = localize(t, n_g);
    for (std::size_t k = 1; k < set.refs.size(); ++k) {
      auto pos = [&](const WeightRef& r) {
        return static_cast<std::size_t>(std::ranges::find(t.refs, r) - t.refs.begin());
      };
      const double a = score[pos(set.refs[k - 1])], b = score[pos(set.refs[k])];
      EXPECT_TRUE(a > b || (a == b && set.refs[k - 1] < set.refs[k]));
    }
  }
}

TEST(ImpactCsv, HasOneRowPerWeight) {
  auto t = compute_impacts(model_232(), batch_232(), batch_232(), 0);
  auto csv = impacts_to_csv(t);
  EXPECT_EQ(std::ranges::count(csv, '\n'), 7);
  EXPECT_TRUE(csv.starts_with("layer,from,to,back_failed,fwd_failed,back_passed,fwd_passed\n"));
}
