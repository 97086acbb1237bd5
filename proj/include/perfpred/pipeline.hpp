#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "perfpred/baselines.hpp"
#include "perfpred/error.hpp"
#include "perfpred/gbtree.hpp"
#include "perfpred/metrics.hpp"
#include "perfpred/parallel.hpp"
#include "perfpred/registry.hpp"
#include "perfpred/rng.hpp"

namespace perfpred::pipeline {

enum class PredictorKind { kMedian, kLogLinear, kPowerLaw, kGbt };

inline const char* to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::kMedian: return "median";
    case PredictorKind::kLogLinear: return "log_linear";
    case PredictorKind::kPowerLaw: return "power_law";
    case PredictorKind::kGbt: return "gbt";
  }
  return "?";
}

inline std::optional<PredictorKind> parse_predictor(std::string_view s) {
  if (s == "median") return PredictorKind::kMedian;
  if (s == "log_linear") return PredictorKind::kLogLinear;
  if (s == "power_law") return PredictorKind::kPowerLaw;
  if (s == "gbt") return PredictorKind::kGbt;
  return std::nullopt;
}

// Philox stream ids; each consumer of a seed draws from its own stream.
inline constexpr std::uint64_t kOuterFoldStream = 0;
inline constexpr std::uint64_t kInnerFoldStream = 1;

// Sorts the ids, shuffles them with Philox(seed, stream), and deals the
// shuffled list round-robin into k folds. Returns the fold of each input id.
inline std::vector<int> assign_folds(std::span<const std::string> ids, int k, std::uint64_t seed,
                                     std::uint64_t stream) {
  require(k >= 2, ErrorKind::kInvalidArgument, "need at least two folds");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  CounterRng rng(seed, stream);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<int> fold(ids.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
  }
  return fold;
}

struct CVPlan {
  int outer_folds = 3;
  int inner_folds = 3;
  std::uint64_t seed = 0;
  std::map<std::string, int> fold_assignment;  // model_id -> outer fold
};

inline CVPlan make_plan(const Dataset& ds, std::uint64_t seed, int outer_folds = 3,
                        int inner_folds = 3) {
  std::vector<std::string> ids;
  for (const auto& m : ds.models) ids.push_back(m.model_id);
  const auto fold = assign_folds(ids, outer_folds, seed, kOuterFoldStream);
  CVPlan plan{outer_folds, inner_folds, seed, {}};
  for (std::size_t i = 0; i < ids.size(); ++i) plan.fold_assignment[ids[i]] = fold[i];
  return plan;
}

struct GridSearchResult {
  gbt::GBTConfig best;
  std::vector<double> mean_mae;  // aligned with the grid
  std::size_t evaluations = 0;
};

namespace detail {

// Tie order: fewer trees, then shallower, then smaller rate.
inline bool simpler(const gbt::GBTConfig& a, const gbt::GBTConfig& b) {
  if (a.n_trees != b.n_trees) return a.n_trees < b.n_trees;
  if (a.max_depth != b.max_depth) return a.max_depth < b.max_depth;
  return a.learning_rate < b.learning_rate;
}

inline std::vector<std::size_t> rows_where(std::span<const int> fold, int f, bool equal) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if ((fold[i] == f) == equal) out.push_back(i);
  }
  return out;
}

template <typename T>
std::vector<T> pick(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace detail

// Inner-CV grid search over GBT configurations; the winner minimizes the mean
// inner MAE. Inner folds come from the row ids via Philox(seed, inner stream).
inline GridSearchResult grid_search(const FeatureMatrix& train_X, std::span<const double> train_y,
                                    std::span<const gbt::GBTConfig> grid, int inner_folds,
                                    std::uint64_t seed) {
  require(!grid.empty(), ErrorKind::kInvalidArgument, "empty hyperparameter grid");
  require(train_X.rows() >= static_cast<std::size_t>(inner_folds), ErrorKind::kInsufficientData,
          "training split smaller than the number of inner folds");
  const auto fold = assign_folds(train_X.row_ids, inner_folds, seed, kInnerFoldStream);
  GridSearchResult res;
  res.mean_mae.assign(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    gbt::GBTConfig cfg = grid[g];
    cfg.seed = seed;
    double total = 0.0;
    for (int f = 0; f < inner_folds; ++f) {
      const auto tr = detail::rows_where(fold, f, false);
      const auto te = detail::rows_where(fold, f, true);
      const auto Xtr = train_X.select_rows(tr);
      const auto Xte = train_X.select_rows(te);
      const auto ytr = detail::pick(train_y, tr);
      const auto yte = detail::pick(train_y, te);
      const auto ens = gbt::fit_gbt(Xtr, ytr, cfg);
      total += metrics::mae(gbt::predict_all(ens, Xte), yte);
    }
    res.mean_mae[g] = total / static_cast<double>(inner_folds);
    ++res.evaluations;
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (res.mean_mae[g] < res.mean_mae[best] ||
        (res.mean_mae[g] == res.mean_mae[best] && detail::simpler(grid[g], grid[best]))) {
      best = g;
    }
  }
  res.best = grid[best];
  res.best.seed = seed;
  return res;
}

struct CVResult {
  std::string task_key;
  std::vector<std::string> feature_names;
  PredictorKind predictor = PredictorKind::kGbt;
  std::uint64_t seed = 0;
  int outer_folds = 3;
  int inner_folds = 3;
  std::vector<std::string> model_ids;  // dataset order
  std::vector<double> actual;
  std::vector<double> predicted;       // out-of-fold, aligned with model_ids
  std::vector<int> fold;
  std::vector<std::optional<gbt::GBTConfig>> fold_config;  // gbt only
  double mae = 0.0;
};

inline CVResult run_cv(const Dataset& ds, const std::vector<std::string>& feature_names,
                       PredictorKind kind, const CVPlan& plan,
                       std::span<const gbt::GBTConfig> grid) {
  require(ds.size() >= static_cast<std::size_t>(3 * plan.outer_folds),
          ErrorKind::kInsufficientData, "too few rows for cross-validation");
  require(kind != PredictorKind::kGbt || !grid.empty(), ErrorKind::kInvalidArgument,
          "empty hyperparameter grid");
  CVResult res;
  res.task_key = ds.task.key();
  res.feature_names = feature_names;
  res.predictor = kind;
  res.seed = plan.seed;
  res.outer_folds = plan.outer_folds;
  res.inner_folds = plan.inner_folds;
  res.actual = ds.targets;
  res.predicted.assign(ds.size(), 0.0);
  for (const auto& m : ds.models) {
    res.model_ids.push_back(m.model_id);
    auto it = plan.fold_assignment.find(m.model_id);
    require(it != plan.fold_assignment.end(), ErrorKind::kInvalidArgument,
            "model '" + m.model_id + "' has no fold assignment");
    res.fold.push_back(it->second);
  }
  std::optional<FeatureMatrix> X;
  if (kind == PredictorKind::kGbt) X = encode_features(ds, feature_names);
  const auto points = baselines::scale_points(ds);

  for (int f = 0; f < plan.outer_folds; ++f) {
    const auto train = detail::rows_where(res.fold, f, false);
    const auto test = detail::rows_where(res.fold, f, true);
    if (test.empty()) {
      res.fold_config.emplace_back();
      continue;
    }
    const auto ytr = detail::pick(std::span<const double>(ds.targets), train);
    switch (kind) {
      case PredictorKind::kMedian: {
        const auto med = baselines::median_predictor(ytr);
        for (auto i : test) res.predicted[i] = med.predict();
        res.fold_config.emplace_back();
        break;
      }
      case PredictorKind::kLogLinear: {
        const auto pts = detail::pick(std::span<const baselines::ScalePoint>(points), train);
        const auto fit = baselines::fit_log_linear(pts);
        for (auto i : test) res.predicted[i] = fit.predict(points[i].N, points[i].D);
        res.fold_config.emplace_back();
        break;
      }
      case PredictorKind::kPowerLaw: {
        const auto pts = detail::pick(std::span<const baselines::ScalePoint>(points), train);
        const auto fit = baselines::fit_power_law(pts, ds.task.polarity);
        for (auto i : test) res.predicted[i] = fit.predict(points[i].N, points[i].D);
        res.fold_config.emplace_back();
        break;
      }
      case PredictorKind::kGbt: {
        const auto Xtr = X->select_rows(train);
        gbt::GBTConfig cfg = grid.front();
        cfg.seed = plan.seed;
        if (grid.size() > 1) {
          cfg = grid_search(Xtr, ytr, grid, plan.inner_folds,
                            plan.seed + static_cast<std::uint64_t>(f))
                    .best;
          cfg.seed = plan.seed;
        }
        const auto ens = gbt::fit_gbt(Xtr, ytr, cfg);
        for (auto i : test) res.predicted[i] = gbt::predict(ens, *X, i);
        res.fold_config.emplace_back(cfg);
        break;
      }
    }
  }
  res.mae = metrics::mae(res.predicted, res.actual);
  return res;
}

struct EvalOptions {
  int outer_folds = 3;
  int inner_folds = 3;
  unsigned jobs = 1;
};

inline std::vector<double> multi_seed_mae(const Dataset& ds,
                                          const std::vector<std::string>& feature_names,
                                          PredictorKind kind, std::span<const std::uint64_t> seeds,
                                          std::span<const gbt::GBTConfig> grid,
                                          const EvalOptions& opt = {}) {
  std::vector<std::uint64_t> sorted(seeds.begin(), seeds.end());
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
          ErrorKind::kInvalidArgument, "seeds must be distinct");
  std::vector<double> out(seeds.size());
  parallel_for(seeds.size(), opt.jobs, [&](std::size_t i) {
    const auto plan = make_plan(ds, seeds[i], opt.outer_folds, opt.inner_folds);
    out[i] = run_cv(ds, feature_names, kind, plan, grid).mae;
  });
  return out;
}

struct SelectionStep {
  std::string added_feature;
  double mean_mae_after = 0.0;
  double improvement = 0.0;
};

struct SelectionTrace {
  std::string task_key;
  std::vector<std::string> base_features;
  double base_mae = 0.0;
  std::vector<SelectionStep> steps;
  std::vector<std::string> final_features;
  std::vector<std::uint64_t> selection_seeds;
  double tol = 1e-4;
};

// Greedy forward selection from the two scaling features. Each step scores
// every remaining candidate by mean outer-CV MAE over the selection seeds
// (grid re-searched per feature set) and accepts the best one if it lowers
// the MAE by at least `tol`. Candidate ties go to the lexicographically
// smaller name.
inline SelectionTrace greedy_select(const Dataset& ds, std::vector<std::string> candidates,
                                    std::span<const gbt::GBTConfig> grid,
                                    std::span<const std::uint64_t> selection_seeds,
                                    double tol = 1e-4, const EvalOptions& opt = {}) {
  for (const auto& c : candidates) {
    for (auto s : scaling_feature_names()) {
      require(c != s, ErrorKind::kInvalidArgument,
              "candidates must not include the scaling feature '" + c + "'");
    }
    require(find_feature(c) != nullptr, ErrorKind::kUnknownFeature,
            "unknown feature '" + c + "'");
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  SelectionTrace trace;
  trace.task_key = ds.task.key();
  trace.tol = tol;
  trace.selection_seeds.assign(selection_seeds.begin(), selection_seeds.end());
  for (auto s : scaling_feature_names()) trace.base_features.emplace_back(s);
  trace.final_features = trace.base_features;

  auto mean_mae = [&](const std::vector<std::string>& features, unsigned jobs) {
    EvalOptions o = opt;
    o.jobs = jobs;
    const auto maes = multi_seed_mae(ds, features, PredictorKind::kGbt, selection_seeds, grid, o);
    return std::accumulate(maes.begin(), maes.end(), 0.0) / static_cast<double>(maes.size());
  };
  double current = mean_mae(trace.final_features, opt.jobs);
  trace.base_mae = current;

  while (!candidates.empty()) {
    std::vector<double> scores(candidates.size());
    parallel_for(candidates.size(), opt.jobs, [&](std::size_t i) {
      auto features = trace.final_features;
      features.push_back(candidates[i]);
      scores[i] = mean_mae(features, 1);
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
      if (scores[i] < scores[best]) best = i;
    }
    const double improvement = current - scores[best];
    if (!(improvement >= tol)) break;
    trace.steps.push_back({candidates[best], scores[best], improvement});
    trace.final_features.push_back(candidates[best]);
    current = scores[best];
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return trace;
}

// Every documented feature except the scaling pair.
inline std::vector<std::string> all_candidate_features() {
  std::vector<std::string> out;
  for (const auto& f : feature_catalog()) {
    if (f.name == "total_params" || f.name == "total_tokens_billions") continue;
    out.push_back(f.name);
  }
  return out;
}

// Candidates with at least one documented value in the dataset.
inline std::vector<std::string> observed_candidate_features(const Dataset& ds) {
  std::vector<std::string> out;
  for (const auto& name : all_candidate_features()) {
    const std::vector<std::string> one = {name};
    const auto fm = encode_features(ds, one);
    if (std::any_of(fm.missing.begin(), fm.missing.end(), [](auto m) { return m == 0; })) {
      out.push_back(name);
    }
  }
  return out;
}

inline nlohmann::json to_json(const CVResult& r) {
  nlohmann::json folds = nlohmann::json::object();
  nlohmann::json preds = nlohmann::json::array();
  for (std::size_t i = 0; i < r.model_ids.size(); ++i) {
    folds[r.model_ids[i]] = r.fold[i];
    preds.push_back({{"model_id", r.model_ids[i]},
                     {"fold", r.fold[i]},
                     {"actual", r.actual[i]},
                     {"predicted", r.predicted[i]}});
  }
  nlohmann::json configs = nlohmann::json::array();
  for (const auto& c : r.fold_config) {
    configs.push_back(c ? gbt::to_json(*c) : nlohmann::json(nullptr));
  }
  return {{"task", r.task_key},
          {"features", r.feature_names},
          {"predictor", to_string(r.predictor)},
          {"seed", r.seed},
          {"prng", kPrngId},
          {"outer_folds", r.outer_folds},
          {"inner_folds", r.inner_folds},
          {"fold_assignment", folds},
          {"predictions", preds},
          {"fold_configs", configs},
          {"mae", r.mae}};
}

inline nlohmann::json to_json(const SelectionTrace& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    steps.push_back({{"added_feature", s.added_feature},
                     {"mean_mae_after", s.mean_mae_after},
                     {"improvement", s.improvement}});
  }
  return {{"task", t.task_key},
          {"base_features", t.base_features},
          {"base_mae", t.base_mae},
          {"steps", steps},
          {"final_features", t.final_features},
          {"selection_seeds", t.selection_seeds},
          {"tol", t.tol},
          {"prng", kPrngId},
          {"reseeded", "fold splits and model fitting"}};
}

inline SelectionTrace selection_from_json(const nlohmann::json& j) {
  SelectionTrace t;
  t.task_key = j.at("task").get<std::string>();
  t.base_features = j.at("base_features").get<std::vector<std::string>>();
  t.base_mae = j.at("base_mae").get<double>();
  for (const auto& s : j.at("steps")) {
    t.steps.push_back({s.at("added_feature").get<std::string>(),
                       s.at("mean_mae_after").get<double>(), s.at("improvement").get<double>()});
  }
  t.final_features = j.at("final_features").get<std::vector<std::string>>();
  t.selection_seeds = j.at("selection_seeds").get<std::vector<std::uint64_t>>();
  t.tol = j.at("tol").get<double>();
  return t;
}

}  // namespace perfpred::pipeline
