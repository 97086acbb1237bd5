#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "perfpred/pipeline.hpp"
#include "perfpred/synthdata.hpp"

using namespace perfpred;
using namespace perfpred::pipeline;

namespace {

// Registry models from the synthetic generator with targets from `target`.
Dataset make_dataset(std::size_t n, double missing_rate, auto&& target) {
  auto spec = synth::default_spec(n, 0.0);
  spec.missing_rate = missing_rate;
  spec.tasks.resize(1);
  const auto data = synth::gen_registry(spec, 21);
  Dataset ds;
  ds.task = spec.tasks[0].task;
  ds.models = data.registry.models;
  for (const auto& m : ds.models) ds.targets.push_back(target(m));
  return ds;
}

double loglinear(const ModelRecord& m) {
  return 0.02 * std::log10(m.arch.total_params) +
         0.03 * std::log10(m.data.total_tokens_billions * 1e9);
}

std::vector<gbt::GBTConfig> small_grid() { return {{2, 0.3, 50, 2, 0}}; }

}  // namespace

TEST(Folds, PartitionWithBalancedSizes) {
  std::vector<std::string> ids;
  for (int i = 0; i < 92; ++i) ids.push_back("m" + std::to_string(i));
  for (int k : {2, 3, 5, 10}) {
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
      const auto fold = assign_folds(ids, k, seed, kOuterFoldStream);
      std::vector<int> sizes(static_cast<std::size_t>(k), 0);
      for (int f : fold) {
        ASSERT_GE(f, 0);
        ASSERT_LT(f, k);
        ++sizes[static_cast<std::size_t>(f)];
      }
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      EXPECT_LE(*hi - *lo, 1);
    }
  }
}

TEST(Folds, DependOnIdsNotInputOrder) {
  std::vector<std::string> ids = {"c", "a", "e", "b", "d", "f"};
  const auto fold = assign_folds(ids, 3, 4, kOuterFoldStream);
  auto rev = ids;
  std::reverse(rev.begin(), rev.end());
  const auto fold_rev = assign_folds(rev, 3, 4, kOuterFoldStream);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(fold[i], fold_rev[ids.size() - 1 - i]);
  EXPECT_NE(assign_folds(ids, 3, 4, kOuterFoldStream), assign_folds(ids, 3, 4, kInnerFoldStream));
}

TEST(Cv, MedianHandCase) {
  // Fold f holds the three models with target f.
  const std::vector<double> targets = {0, 0, 0, 1, 1, 1, 2, 2, 2};
  std::size_t k = 0;
  auto ds = make_dataset(9, 0.0, [&](const ModelRecord&) { return targets[k++]; });
  CVPlan plan{3, 3, 0, {}};
  for (std::size_t i = 0; i < 9; ++i) plan.fold_assignment[ds.models[i].model_id] = int(i / 3);
  const auto res = run_cv(ds, {}, PredictorKind::kMedian, plan, {});
  // Training medians are 1.5, 1 and 0.5; errors 1.5, 0 and 1.5 per row.
  EXPECT_DOUBLE_EQ(res.mae, 1.0);
  EXPECT_DOUBLE_EQ(res.predicted[0], 1.5);
  EXPECT_DOUBLE_EQ(res.predicted[4], 1.0);
  EXPECT_DOUBLE_EQ(res.predicted[8], 0.5);
}

TEST(Cv, ConstantTargetsGiveZeroError) {
  const auto ds = make_dataset(30, 0.1, [](const ModelRecord&) { return 0.42; });
  const auto plan = make_plan(ds, 3);
  const std::vector<std::string> f = {"total_params", "total_tokens_billions", "pct_code"};
  for (auto kind : {PredictorKind::kMedian, PredictorKind::kGbt}) {
    EXPECT_NEAR(run_cv(ds, f, kind, plan, gbt::default_grid()).mae, 0.0, 1e-15);
  }
  EXPECT_NEAR(run_cv(ds, f, PredictorKind::kLogLinear, plan, {}).mae, 0.0, 1e-12);
}

TEST(Cv, EveryRowPredictedOnceOutOfFold) {
  const auto ds = make_dataset(40, 0.1, loglinear);
  const auto plan = make_plan(ds, 8);
  const auto res = run_cv(ds, {"total_params", "total_tokens_billions"}, PredictorKind::kGbt,
                          plan, gbt::default_grid());
  ASSERT_EQ(res.predicted.size(), ds.size());
  ASSERT_EQ(res.fold_config.size(), 3u);
  for (const auto& c : res.fold_config) {
    ASSERT_TRUE(c.has_value());
    EXPECT_EQ(c->seed, 8u);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(res.fold[i], plan.fold_assignment.at(ds.models[i].model_id));
  }
  const auto j = to_json(res);
  EXPECT_EQ(j.at("prng"), kPrngId);
  EXPECT_EQ(j.at("predictions").size(), ds.size());
}

TEST(Cv, LogLinearRecoversNoiselessPlane) {
  const auto ds = make_dataset(40, 0.0, loglinear);
  const auto res = run_cv(ds, {}, PredictorKind::kLogLinear, make_plan(ds, 1), {});
  EXPECT_LT(res.mae, 1e-10);
}

TEST(Cv, SingletonGridEqualsFixedConfig) {
  const auto ds = make_dataset(36, 0.1, loglinear);
  const auto plan = make_plan(ds, 5);
  const std::vector<std::string> f = {"total_params", "total_tokens_billions", "pct_web"};
  const auto grid = small_grid();
  const auto res = run_cv(ds, f, PredictorKind::kGbt, plan, grid);
  const auto X = encode_features(ds, f);
  for (int fold = 0; fold < 3; ++fold) {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    for (std::size_t i = 0; i < ds.size(); ++i) (res.fold[i] == fold ? test : train).push_back(i);
    std::vector<double> ytr;
    for (auto i : train) ytr.push_back(ds.targets[i]);
    auto cfg = grid.front();
    cfg.seed = 5;
    const auto ens = gbt::fit_gbt(X.select_rows(train), ytr, cfg);
    for (auto i : test) EXPECT_EQ(res.predicted[i], gbt::predict(ens, X, i));
  }
}

TEST(Cv, TooFewRowsRejected) {
  const auto ds = make_dataset(8, 0.0, loglinear);
  EXPECT_THROW(run_cv(ds, {}, PredictorKind::kMedian, make_plan(ds, 0), {}), Error);
}

TEST(GridSearch, PicksInteractionDepthForXor) {
  FeatureMatrix X;
  for (const char* name : {"a", "b"}) {
    X.columns.push_back({name, name, SourceGroup::kArch, Transform::kIdentity, ""});
  }
  std::vector<double> y;
  CounterRng rng(2, 0);
  for (int i = 0; i < 80; ++i) {
    const double a = rng.uniform(-1, 1);
    const double b = rng.uniform(-1, 1);
    X.row_ids.push_back("r" + std::to_string(i));
    X.values.insert(X.values.end(), {a, b});
    X.missing.insert(X.missing.end(), {0, 0});
    y.push_back((a > 0) != (b > 0) ? 1.0 : 0.0);
  }
  const std::vector<gbt::GBTConfig> grid = {{1, 0.3, 100, 2, 0}, {2, 0.3, 100, 2, 0}};
  const auto res = grid_search(X, y, grid, 3, 0);
  EXPECT_EQ(res.best.max_depth, 2);
  EXPECT_EQ(res.evaluations, 2u);
  const auto full = grid_search(X, y, gbt::default_grid(), 3, 0);
  EXPECT_EQ(full.evaluations, 18u);
  EXPECT_GT(full.best.max_depth, 1);
}

TEST(GridSearch, TiesPreferSimplerConfig) {
  FeatureMatrix X;
  X.columns.push_back({"a", "a", SourceGroup::kArch, Transform::kIdentity, ""});
  std::vector<double> y;
  for (int i = 0; i < 12; ++i) {
    X.row_ids.push_back("r" + std::to_string(i));
    X.values.push_back(i);
    X.missing.push_back(0);
    y.push_back(1.0);
  }
  const auto res = grid_search(X, y, gbt::default_grid(), 3, 0);
  EXPECT_EQ(res.best.n_trees, 50);
  EXPECT_EQ(res.best.max_depth, 2);
  EXPECT_EQ(res.best.learning_rate, 0.01);
}

TEST(MultiSeed, DeterministicAcrossRunsAndJobs) {
  const auto ds = make_dataset(30, 0.1, loglinear);
  const std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
  const std::vector<std::string> f = {"total_params", "total_tokens_billions"};
  const auto grid = small_grid();
  const auto a = multi_seed_mae(ds, f, PredictorKind::kGbt, seeds, grid, {3, 3, 1});
  EXPECT_EQ(a, multi_seed_mae(ds, f, PredictorKind::kGbt, seeds, grid, {3, 3, 1}));
  EXPECT_EQ(a, multi_seed_mae(ds, f, PredictorKind::kGbt, seeds, grid, {3, 3, 3}));
  EXPECT_NE(a[0], a[1]);
  const std::vector<std::uint64_t> dup = {1, 1};
  EXPECT_THROW(multi_seed_mae(ds, f, PredictorKind::kGbt, dup, grid), Error);
}

TEST(Greedy, PrefersInformativeFeature) {
  const auto ds = make_dataset(60, 0.0, [](const ModelRecord& m) {
    return loglinear(m) + 0.01 * *m.data.pct_code;
  });
  const std::vector<std::uint64_t> seeds = {0, 1};
  const auto trace = greedy_select(ds, {"pct_code", "pct_books"}, small_grid(), seeds);
  ASSERT_FALSE(trace.steps.empty());
  EXPECT_EQ(trace.steps.front().added_feature, "pct_code");
  for (const auto& s : trace.steps) EXPECT_GE(s.improvement, trace.tol);
  EXPECT_EQ(trace.final_features.size(), 2 + trace.steps.size());
  const auto back = selection_from_json(to_json(trace));
  EXPECT_EQ(back.final_features, trace.final_features);
}

TEST(Greedy, NoCandidatesKeepsScalingPair) {
  const auto ds = make_dataset(30, 0.0, loglinear);
  const std::vector<std::uint64_t> seeds = {0};
  const auto trace = greedy_select(ds, {}, small_grid(), seeds);
  EXPECT_TRUE(trace.steps.empty());
  EXPECT_EQ(trace.final_features,
            (std::vector<std::string>{"total_params", "total_tokens_billions"}));
  EXPECT_THROW(greedy_select(ds, {"total_params"}, small_grid(), seeds), Error);
  EXPECT_THROW(greedy_select(ds, {"no_such_feature"}, small_grid(), seeds), Error);
}
