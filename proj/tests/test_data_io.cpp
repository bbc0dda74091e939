#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "nnrepair/dataset.hpp"
#include "nnrepair/errors.hpp"
#include "nnrepair/serialize.hpp"
#include "nnrepair/subject.hpp"
#include "support.hpp"

using namespace nnrepair;
using namespace testing_support;

namespace {

Dataset labelled(const std::vector<std::size_t>& per_class) {
  Batch b;
  std::size_t n = 0;
  for (auto c : per_class) n += c;
  b.inputs = Matrix(n, 2);
  std::size_t s = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (std::size_t k = 0; k < per_class[c]; ++k, ++s) {
      b.inputs(s, 0) = static_cast<double>(s);
      b.inputs(s, 1) = static_cast<double>(c);
      b.labels.push_back(c);
      b.ids.push_back(1000 + s);
    }
  }
  return make_dataset(b, per_class.size());
}

std::size_t count_label(const Dataset& d, std::size_t c) {
  return static_cast<std::size_t>(std::ranges::count(d.data.labels, c));
}

}  // namespace

TEST(Split, QuarterFractionsOnHundredSamples) {
  SplitSpec spec{{0.25, 0.25, 0.25, 0.25}, 1, true};
  auto s = split(labelled({50, 50}), spec);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(s[static_cast<SplitPart>(p)].size(), 25u);
  spec.stratified = false;
  s = split(labelled({100}), spec);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(s[static_cast<SplitPart>(p)].size(), 25u);
}

TEST(Split, SameSeedSamePartition) {
  SplitSpec spec;
  spec.seed = 42;
  auto a = split(labelled({60, 40, 30}), spec);
  auto b = split(labelled({60, 40, 30}), spec);
  for (std::size_t p = 0; p < 4; ++p) {
    EXPECT_EQ(a[static_cast<SplitPart>(p)].data.ids, b[static_cast<SplitPart>(p)].data.ids);
  }
}

TEST(Split, StratifiedEightyTwentyWithinOne) {
  const auto d = labelled({400, 100});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = split(d, {{0.5, 0.15, 0.2, 0.15}, seed, true});
    for (std::size_t p = 0; p < 4; ++p) {
      const auto& part = s[static_cast<SplitPart>(p)];
      const double expected_minor = 0.2 * static_cast<double>(part.size());
      EXPECT_LE(std::abs(static_cast<double>(count_label(part, 1)) - expected_minor), 1.0)
          << "seed " << seed << " split " << p;
    }
  }
}

TEST(Split, RejectsBadFractions) {
  const auto d = labelled({10, 10});
  EXPECT_THROW(split(d, {{0.5, 0.2, 0.2, 0.2}, 0, true}), Error);
  EXPECT_THROW(split(d, {{0.6, 0.4, 0.0, 0.0}, 0, true}), Error);
  EXPECT_THROW(split(labelled({10, 0}), {{0.25, 0.25, 0.25, 0.25}, 0, true}), Error);
}

TEST(Drift, NoOpFractionsEqualPlainSplit) {
  SplitSpec spec;
  spec.seed = 8;
  const auto d = labelled({100, 100, 100});
  auto plain = split(d, spec);
  auto drifted = apply_drift(d, spec, {1, 1.0, 1.0, 3});
  for (std::size_t p = 0; p < 4; ++p) {
    EXPECT_EQ(plain[static_cast<SplitPart>(p)].data.ids,
              drifted[static_cast<SplitPart>(p)].data.ids);
  }
}

TEST(Drift, ZeroTrainFractionRemovesTargetFromTrain) {
  auto s = apply_drift(labelled({100, 100, 100, 100}), {}, {2, 0.0, 0.5, 3});
  EXPECT_EQ(count_label(s.train, 2), 0u);
  EXPECT_EQ(s.train.size() + s.validation.size() + s.repair.size() + s.test.size(), 400u);
}

TEST(Drift, TenPercentOfSevenHundredTargetKeepsAboutThirtyFive) {
  auto s = apply_drift(labelled({700, 700, 700, 700, 700, 700, 700}), {}, {3, 0.1, 0.5, 1});
  // 350 target samples fall to train naturally; 10% of that is 35.
  EXPECT_EQ(count_label(s.train, 3), 35u);
  EXPECT_EQ(s.train.size(), 2450u);
}

TEST(Drift, RepairShareReachesTheRequestedPrevalence) {
  auto s = apply_drift(labelled({700, 700, 700, 700, 700, 700, 700}), {}, {3, 0.1, 0.3, 1});
  // Repair holds 980 rows, 140 of them target; 0.3 asks for 294 and the 315
  // displaced samples cover the 154 missing.
  EXPECT_EQ(s.repair.size(), 980u);
  EXPECT_EQ(count_label(s.repair, 3), 294u);
  EXPECT_EQ(count_label(s.validation, 3) + count_label(s.test, 3), 210u + 161u);
}

TEST(Drift, RepairShareIsCappedBySupply) {
  auto s = apply_drift(labelled({700, 700, 700, 700, 700, 700, 700}), {}, {3, 0.1, 0.5, 1});
  EXPECT_EQ(count_label(s.repair, 3), 140u + 315u);
  EXPECT_EQ(count_label(s.validation, 3) + count_label(s.test, 3), 210u);
}

TEST(Drift, InfeasibleSwapNamesTheLimitingCount) {
  // Repair is already at half target share, so all 45 displaced rows spill
  // over; validation takes 23 of them but holds only 5 non-target rows.
  try {
    apply_drift(labelled({100, 100}), {{0.5, 0.05, 0.4, 0.05}, 0, true}, {0, 0.1, 0.5, 1});
    FAIL() << "expected an infeasibility error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("validation split has only 5 non-target"), std::string::npos) << e.what();
  }
}

TEST(Drift, RejectsTrainFractionAboveRepairFraction) {
  EXPECT_THROW(apply_drift(labelled({50, 50}), {}, {0, 0.6, 0.5, 1}), Error);
  EXPECT_THROW(apply_drift(labelled({50, 50}), {}, {5, 0.1, 0.5, 1}), Error);
}

TEST(RepairInputs, PerfectModelSignalsNothingToRepair) {
  // Bias toward class 0 on a one-class set makes every prediction correct.
  DenseLayer l;
  l.spec = {2, 2, Activation::softmax};
  l.weights = Matrix(2, 2);
  l.bias = {1.0, 0.0};
  Model m({l});
  auto d = labelled({20});
  d.n_classes = 2;
  EXPECT_THROW(select_repair_inputs(m, d, d, 0), NothingToRepair);
}

TEST(RepairInputs, AllWrongModelSignalsNothingToRepair) {
  DenseLayer l;
  l.spec = {2, 2, Activation::softmax};
  l.weights = Matrix(2, 2);
  l.bias = {0.0, 1.0};
  Model m({l});
  auto d = labelled({20});
  d.n_classes = 2;
  EXPECT_THROW(select_repair_inputs(m, d, d, 0), NothingToRepair);
}

TEST(RepairInputs, NegativesEqualArgmaxFilter) {
  SyntheticSpec ds;
  ds.n_classes = 4;
  ds.separation = 1.5;
  ds.samples_per_class = 60;
  ds.seed = 2;
  auto s = split(make_synthetic(ds), {});
  SubjectSpec sub;
  sub.hidden = {6};
  sub.epochs = 5;
  sub.seed = 1;
  Model m = train_subject(sub, s.train).model;
  auto inputs = select_repair_inputs(m, s.train, s.repair, 2);

  std::vector<SampleId> want_neg, want_pos;
  const Matrix repair_probs = forward(m, s.repair.data.inputs);
  const Matrix train_probs = forward(m, s.train.data.inputs);
  for (std::size_t k = 0; k < s.repair.size(); ++k) {
    auto row = repair_probs.row(k);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    if (s.repair.data.labels[k] == 2 && best != 2) want_neg.push_back(s.repair.data.ids[k]);
  }
  for (std::size_t k = 0; k < s.train.size(); ++k) {
    auto row = train_probs.row(k);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    if (s.train.data.labels[k] == best) want_pos.push_back(s.train.data.ids[k]);
  }
  ASSERT_FALSE(want_neg.empty());
  EXPECT_EQ(inputs.negatives.ids, want_neg);
  EXPECT_EQ(inputs.positive_pool.ids, want_pos);
}

TEST(ModelFile, RoundTripIsBitIdentical) {
  TempDir dir;
  Rng rng(5);
  Model m = random_model(rng, {4, 7, 3});
  save_model(m, dir.path() / "m.json");
  Model back = load_model(dir.path() / "m.json");
  EXPECT_EQ(back, m);
  Batch b = random_batch(rng, 9, 4, 3);
  EXPECT_EQ(forward(back, b), forward(m, b));
}

TEST(ModelFile, TruncatedOrCorruptFilesAreRejected) {
  TempDir dir;
  Rng rng(6);
  Model m = random_model(rng, {3, 4, 2});
  const auto path = dir.path() / "m.json";
  save_model(m, path);
  const std::string text = read_file(path);

  write_file(path, text.substr(0, text.size() / 2));
  EXPECT_THROW(load_model(path), FormatError);

  auto doc = nlohmann::json::parse(text);
  doc["version"] = 99;
  write_file(path, doc.dump());
  EXPECT_THROW(load_model(path), FormatError);

  doc = nlohmann::json::parse(text);
  std::string w = doc["layers"][0]["weights"];
  doc["layers"][0]["weights"] = w.substr(0, w.size() - 4);
  write_file(path, doc.dump());
  EXPECT_THROW(load_model(path), FormatError);

  // A NaN weight, encoded as valid base64.
  doc = nlohmann::json::parse(text);
  std::string raw = base64_decode(doc["layers"][0]["bias"].get<std::string>());
  const double nan = std::nan("");
  std::memcpy(raw.data(), &nan, sizeof nan);
  doc["layers"][0]["bias"] = base64_encode(raw);
  write_file(path, doc.dump());
  EXPECT_THROW(load_model(path), FormatError);
}

TEST(DatasetFile, RoundTripPreservesOrderLabelsAndValues) {
  TempDir dir;
  Rng rng(8);
  Batch b = random_batch(rng, 25, 3, 4, 500);
  std::ranges::reverse(b.ids);
  auto d = make_dataset(b, 4);
  save_dataset(d, dir.path() / "d.csv");
  auto back = load_dataset(dir.path() / "d.csv");
  EXPECT_EQ(back.data.ids, d.data.ids);
  EXPECT_EQ(back.data.labels, d.data.labels);
  EXPECT_EQ(back.data.inputs, d.data.inputs);
  EXPECT_EQ(back.class_names, d.class_names);
}

TEST(DatasetFile, CorruptionIsRejected) {
  auto d = labelled({3, 3});
  const std::string csv = dataset_to_csv(d);
  EXPECT_THROW(dataset_from_csv(csv.substr(0, csv.size() - 1)), FormatError);
  auto lines_dropped = csv.substr(0, csv.rfind('\n', csv.size() - 2) + 1);
  EXPECT_THROW(dataset_from_csv(lines_dropped), FormatError);
  std::string bad_version = csv;
  bad_version.replace(bad_version.find("version=1"), 9, "version=2");
  EXPECT_THROW(dataset_from_csv(bad_version), FormatError);
  std::string nan_value = csv;
  auto pos = nan_value.find("\n1000,0,");
  ASSERT_NE(pos, std::string::npos);
  nan_value.replace(pos, 8, "\n1000,0,nan");
  EXPECT_THROW(dataset_from_csv(nan_value), FormatError);
  EXPECT_THROW(dataset_from_csv("id,label,f0\n1,0,0.5\n"), FormatError);
}

TEST(Serialize, ShortestDoubleFormatRoundTrips) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 1000; ++k) {
    const double v = u(rng) * std::pow(10.0, static_cast<double>(k % 30) - 15.0);
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
}

TEST(Serialize, Base64KnownVectors) {
  EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
  EXPECT_EQ(base64_encode("fo"), "Zm8=");
  EXPECT_EQ(base64_decode("Zm9vYg=="), "foob");
  EXPECT_THROW(base64_decode("Zm9"), FormatError);
}
