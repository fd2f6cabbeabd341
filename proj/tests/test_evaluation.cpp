#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "sslab/evaluation.hpp"
#include "sslab/json_writer.hpp"
#include "sslab/pipeline.hpp"
#include "sslab/rng.hpp"
#include "support/synthetic.hpp"

using namespace sslab;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::IoError;
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform() * 2.0 - 1.0;
  return v;
}

Dataset scored(const std::vector<double>& scores) {
  std::vector<PhraseRecord> recs;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    recs.push_back({"r" + std::to_string(i), "alpha " + synth::word(i), "beta " + synth::word(i + 7), "A47",
                    scores[i]});
  }
  return Dataset::from_records(std::move(recs));
}

FoldPlan manual_plan(std::vector<std::size_t> assignment, std::size_t k) {
  FoldPlan p;
  p.k = k;
  p.assignment = std::move(assignment);
  p.bin_edges = {0.0, 1.0};
  p.bin_of.assign(p.assignment.size(), 0);
  return p;
}

void expect_plan_invariants(const FoldPlan& plan, std::span<const double> scores) {
  const std::size_t n = scores.size(), k = plan.k, bins = plan.n_bins();
  ASSERT_EQ(plan.assignment.size(), n);
  // every index in exactly one validation fold, and in training everywhere else
  std::vector<std::size_t> seen(n, 0);
  for (std::size_t f = 0; f < k; ++f) {
    const auto val = plan.validation_indices(f);
    const auto tr = plan.train_indices(f);
    ASSERT_EQ(val.size() + tr.size(), n);
    for (auto i : val) ++seen[i];
  }
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(seen[i], 1u) << i;

  const auto sizes = plan.fold_sizes();
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  ASSERT_LE(*hi - *lo, 1u);

  std::vector<std::vector<std::size_t>> per_bin(bins, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = unit_bin(scores[i], bins);
    ASSERT_EQ(plan.bin_of[i], b);
    ++per_bin[b][plan.assignment[i]];
  }
  for (std::size_t b = 0; b < bins; ++b) {
    std::size_t total = 0;
    for (auto c : per_bin[b]) total += c;
    const std::size_t floor_share = total / k, ceil_share = (total + k - 1) / k;
    for (auto c : per_bin[b]) {
      ASSERT_GE(c, floor_share);
      ASSERT_LE(c, ceil_share);
    }
  }
}

}  // namespace

TEST(Pearson, SpecExamples) {
  const std::vector<double> a{1, 2, 3}, b{3, 2, 1};
  EXPECT_EQ(pearson(a, a), 1.0);
  EXPECT_EQ(pearson(a, b), -1.0);
  const std::vector<double> y{1, 2, 3, 4}, yhat{1, 3, 2, 4};
  EXPECT_NEAR(pearson(y, yhat), 0.8, 1e-12);
}

TEST(Pearson, Errors) {
  const std::vector<double> a{1, 2, 3}, b{1, 2}, c{2, 2, 2}, one{1};
  EXPECT_EQ(kind_of([&] { pearson(a, b); }), ErrorKind::LengthMismatch);
  EXPECT_EQ(kind_of([&] { pearson(one, one); }), ErrorKind::LengthMismatch);
  EXPECT_EQ(kind_of([&] { pearson(a, c); }), ErrorKind::ZeroVariance);
  EXPECT_EQ(kind_of([&] { pearson(c, a); }), ErrorKind::ZeroVariance);
}

TEST(Pearson, AffineInvariance) {
  Rng rng(21);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng.below(60);
    const auto y = random_vector(rng, n), yhat = random_vector(rng, n);
    const double r = pearson(y, yhat);
    const double scale = 0.01 + rng.uniform() * 100.0, shift = rng.uniform() * 20.0 - 10.0;
    std::vector<double> up(n), down(n);
    for (std::size_t i = 0; i < n; ++i) {
      up[i] = scale * y[i] + shift;
      down[i] = -scale * y[i] + shift;
    }
    EXPECT_NEAR(pearson(up, yhat), r, 1e-12);
    EXPECT_NEAR(pearson(down, yhat), -r, 1e-12);
  }
}

TEST(Pearson, BoundedOnTenThousandRandomVectors) {
  Rng rng(8);
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = 2 + rng.below(30);
    auto y = random_vector(rng, n);
    auto yhat = random_vector(rng, n);
    if (t % 3 == 0) {
      // nearly collinear pairs push the ratio toward the edge
      for (std::size_t i = 0; i < n; ++i) yhat[i] = 3.0 * y[i] + 1e-9 * yhat[i];
    }
    const double r = pearson(y, yhat);
    ASSERT_LE(std::abs(r), 1.0 + 1e-12);
  }
}

TEST(StratifiedKFold, SymmetricDealing) {
  const std::vector<double> s{0, 0, 0, 0, 1, 1, 1, 1};
  for (std::uint64_t seed : {0, 1, 2, 99}) {
    const auto plan = stratified_kfold(s, 2, 2, seed);
    for (std::size_t f = 0; f < 2; ++f) {
      std::size_t zeros = 0, ones = 0;
      for (auto i : plan.validation_indices(f)) (s[i] == 0.0 ? zeros : ones)++;
      EXPECT_EQ(zeros, 2u);
      EXPECT_EQ(ones, 2u);
    }
  }
}

TEST(StratifiedKFold, TenIntoThree) {
  Rng rng(4);
  std::vector<double> s(10);
  for (auto& x : s) x = rng.uniform();
  auto sizes = stratified_kfold(s, 3, 5, 7).fold_sizes();
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 4}));
}

TEST(StratifiedKFold, ThousandRecordsCountingOracle) {
  Rng rng(1000);
  std::vector<double> s(1000);
  for (auto& x : s) x = rng.uniform();
  const auto plan = stratified_kfold(s, 4, 5, 3);
  EXPECT_EQ(plan.bin_edges, (std::vector<double>{0.0, 0.2, 0.4, 0.6, 0.8, 1.0}));
  expect_plan_invariants(plan, s);
}

TEST(StratifiedKFold, RandomTuples) {
  Rng rng(2024);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng.below(9);
    const std::size_t n = k + rng.below(300);
    const std::size_t bins = 1 + rng.below(10);
    const std::uint64_t seed = rng.next_u64();
    std::vector<double> s(n);
    for (auto& x : s) {
      // mix continuous scores with the dataset's quarter steps and exact edges
      const auto kind = rng.below(3);
      x = kind == 0 ? rng.uniform() : kind == 1 ? 0.25 * static_cast<double>(rng.below(5)) : 1.0;
    }
    SCOPED_TRACE("n=" + std::to_string(n) + " k=" + std::to_string(k) + " bins=" + std::to_string(bins));
    const auto plan = stratified_kfold(s, k, bins, seed);
    expect_plan_invariants(plan, s);
    EXPECT_EQ(plan.assignment, stratified_kfold(s, k, bins, seed).assignment);
  }
}

TEST(StratifiedKFold, Errors) {
  const std::vector<double> s{0.1, 0.2, 0.3};
  EXPECT_EQ(kind_of([&] { stratified_kfold(s, 4, 5, 0); }), ErrorKind::TooFewRecords);
  EXPECT_EQ(kind_of([&] { stratified_kfold(s, 1, 5, 0); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { stratified_kfold(s, 2, 0, 0); }), ErrorKind::InvalidConfig);
}

TEST(CrossValidate, OracleModelIsPerfect) {
  const auto d = synth::overlap_dataset(60, 5);
  const auto plan = stratified_kfold(d, 3, 5, 1);
  FoldRunner oracle = [](const Dataset& data, std::span<const std::size_t>, std::span<const std::size_t> val,
                         std::size_t) {
    FoldOutcome out;
    for (auto i : val) out.predictions.push_back(data[i].score);
    return out;
  };
  const auto rep = cross_validate(d, plan, oracle);
  ASSERT_EQ(rep.folds.size(), 3u);
  for (const auto& f : rep.folds) {
    EXPECT_EQ(f.validation_loss, 0.0);
    ASSERT_TRUE(f.pearson.has_value());
    EXPECT_NEAR(*f.pearson, 1.0, 1e-12);
    EXPECT_EQ(f.n_train + f.n_validation, 60u);
  }
  EXPECT_EQ(rep.cv_estimate, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(rep.heldout_predictions[i], d[i].score);
}

TEST(CrossValidate, ConstantModelReportsZeroVariance) {
  const auto d = synth::overlap_dataset(40, 6);
  const auto plan = stratified_kfold(d, 4, 5, 2);
  const double c = 0.3;
  FoldRunner constant = [c](const Dataset&, std::span<const std::size_t>, std::span<const std::size_t> val,
                            std::size_t) {
    FoldOutcome out;
    out.predictions.assign(val.size(), c);
    return out;
  };
  const auto rep = cross_validate(d, plan, constant);
  for (const auto& f : rep.folds) {
    EXPECT_FALSE(f.pearson.has_value());
    EXPECT_EQ(f.pearson_status, "ZeroVariance");
  }
  EXPECT_FALSE(rep.mean_pearson.has_value());
  double want = 0.0;
  for (const auto& r : d.records) want += (r.score - c) * (r.score - c);
  EXPECT_NEAR(rep.cv_estimate, want / 40.0, 1e-15);
}

TEST(CrossValidate, EqualFoldsWeightedMeanIsExact) {
  // fold 0 errs by sqrt(0.2) everywhere and fold 1 by sqrt(0.4): mean losses 0.2 and 0.4
  const auto d = scored({0.0, 0.0, 0.0, 0.0});
  const auto plan = manual_plan({0, 0, 1, 1}, 2);
  FoldRunner runner = [](const Dataset&, std::span<const std::size_t>, std::span<const std::size_t> val,
                         std::size_t fold) {
    FoldOutcome out;
    out.predictions.assign(val.size(), std::sqrt(fold == 0 ? 0.2 : 0.4));
    return out;
  };
  const auto rep = cross_validate(d, plan, runner);
  EXPECT_NEAR(rep.folds[0].validation_loss, 0.2, 1e-16);
  EXPECT_NEAR(rep.folds[1].validation_loss, 0.4, 1e-16);
  EXPECT_EQ(rep.cv_estimate, 0.3);

  std::vector<FoldMetrics> folds(2);
  folds[0].validation_loss = 0.2;
  folds[1].validation_loss = 0.4;
  folds[0].n_validation = folds[1].n_validation = 5;
  EXPECT_EQ(cv_estimate_from_folds(folds), 0.3);
}

TEST(CrossValidate, MeanPearsonIsUnweightedOverDefinedFolds) {
  std::vector<FoldMetrics> folds(3);
  folds[0].pearson = 0.5;
  folds[1].pearson = 0.9;
  EXPECT_NEAR(*mean_defined_pearson(folds), 0.7, 1e-15);
}

TEST(CrossValidate, ErrorsCarryFoldId) {
  const auto d = synth::overlap_dataset(30, 7);
  const auto plan = stratified_kfold(d, 3, 5, 0);
  FoldRunner failing = [](const Dataset&, std::span<const std::size_t>, std::span<const std::size_t> val,
                          std::size_t fold) -> FoldOutcome {
    if (fold == 1) throw Error(ErrorKind::NonFiniteLoss, "epoch 0 step 3");
    FoldOutcome out;
    out.predictions.assign(val.size(), 0.5);
    return out;
  };
  for (std::size_t workers : {1, 3}) {
    try {
      cross_validate(d, plan, failing, workers);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::NonFiniteLoss);
      EXPECT_NE(std::string(e.what()).find("fold 1"), std::string::npos) << e.what();
    }
  }
  FoldRunner short_runner = [](const Dataset&, std::span<const std::size_t>, std::span<const std::size_t>,
                               std::size_t) { return FoldOutcome{0.0, {0.5}}; };
  EXPECT_EQ(kind_of([&] { cross_validate(d, plan, short_runner); }), ErrorKind::ShapeMismatch);
  EXPECT_EQ(kind_of([&] { cross_validate(synth::overlap_dataset(10, 1), plan, short_runner); }),
            ErrorKind::InvalidConfig);
}

TEST(CrossValidate, WorkerCountDoesNotChangeTheReport) {
  const auto d = synth::overlap_dataset(48, 9);
  const auto plan = stratified_kfold(d, 4, 5, 11);
  ModelConfig cfg = preset("small");
  cfg.layers = 1;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.ffn_dim = 32;
  cfg.attention = {16, 2, 8, true, ScaleMode::per_term};
  cfg.max_len = 16;
  cfg.epochs = 2;
  ModelRunOptions opts{cfg, {}, std::nullopt};

  std::string first;
  for (std::size_t workers : {1, 2, 4}) {
    std::vector<FoldTraining> results(plan.k);
    const auto rep = cross_validate(d, plan, model_fold_runner(opts, results), workers, kModelTrainingLossDefinition);
    const auto text = io::dump(cv_report_json(rep, plan), io::RealFormat::shortest);
    if (first.empty()) first = text;
    EXPECT_EQ(text, first) << "workers=" << workers;
    for (const auto& r : results) EXPECT_EQ(r.trace.epoch_train_losses.size(), 2u);
  }
}

TEST(BaselineCv, SymmetricDuplicatedDatasetGivesEqualFolds) {
  const auto base = synth::overlap_dataset(25, 12);
  std::vector<PhraseRecord> recs = base.records;
  for (auto r : base.records) {
    r.id += "b";
    recs.push_back(r);
  }
  const auto d = Dataset::from_records(recs);
  std::vector<std::size_t> assignment(50, 0);
  std::fill(assignment.begin() + 25, assignment.end(), 1);
  const auto rep = evaluate_baseline_cv(d, manual_plan(assignment, 2));
  ASSERT_TRUE(rep.folds[0].pearson.has_value());
  EXPECT_EQ(*rep.folds[0].pearson, *rep.folds[1].pearson);
  EXPECT_EQ(rep.folds[0].validation_loss, rep.folds[1].validation_loss);
}

TEST(BaselineCv, FoldIndependentPredictorMatchesWholeDatasetMse) {
  const auto d = load_dataset(std::filesystem::path(SSLAB_TEST_DATA) / "fixture100.csv");
  std::vector<double> gold, sims;
  for (const auto& r : d.records) {
    gold.push_back(r.score);
    sims.push_back(baseline_similarity(r));
  }
  const double whole = mean_squared_error(gold, sims);
  for (std::size_t k : {2, 4, 7}) {
    const auto rep = evaluate_baseline_cv(d, stratified_kfold(d, k, 5, 3), 2);
    EXPECT_NEAR(rep.cv_estimate, whole, 1e-15) << k;
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(rep.heldout_predictions[i], sims[i]);
  }
}

TEST(Report, JsonMirrorsFoldTableColumns) {
  const auto d = load_dataset(std::filesystem::path(SSLAB_TEST_DATA) / "fixture100.csv");
  const auto plan = stratified_kfold(d, 3, 5, 42);
  const auto rep = evaluate_baseline_cv(d, plan);
  const auto j = cv_report_json(rep, plan);
  EXPECT_EQ(j["k"], 3);
  EXPECT_EQ(j["n_records"], 100);
  EXPECT_EQ(j["seed"], 42);
  EXPECT_FALSE(j["training_loss_definition"].get<std::string>().empty());
  ASSERT_EQ(j["folds"].size(), 3u);
  for (std::size_t f = 0; f < 3; ++f) {
    const auto& row = j["folds"][f];
    EXPECT_EQ(row["fold"], f + 1);
    for (const char* key : {"training_loss", "validation_loss", "pearson_correlation"}) {
      EXPECT_TRUE(row.contains(key)) << key;
    }
    EXPECT_EQ(row["n_train"].get<std::size_t>() + row["n_validation"].get<std::size_t>(), 100u);
  }
  EXPECT_EQ(io::dump(j, io::RealFormat::shortest), io::dump(cv_report_json(rep, plan), io::RealFormat::shortest));
}
