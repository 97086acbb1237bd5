#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "perfpred/error.hpp"
#include "perfpred/parallel.hpp"
#include "perfpred/registry.hpp"
#include "perfpred/stats.hpp"
#include "perfpred/wls.hpp"

namespace perfpred::metabias {

struct TaskEffect {
  std::string task_id;
  double y = 0.0;   // contrast in score units
  double se = 0.0;  // its standard error
};

struct LevelRef {
  std::string feature;
  std::string level;
};

enum class WeightPolicy { kBinomial, kUniform };

inline const char* to_string(WeightPolicy p) {
  return p == WeightPolicy::kBinomial ? "binomial" : "uniform";
}

inline std::optional<WeightPolicy> parse_weight_policy(std::string_view s) {
  if (s == "binomial") return WeightPolicy::kBinomial;
  if (s == "uniform") return WeightPolicy::kUniform;
  return std::nullopt;
}

inline std::string describe(WeightPolicy p) {
  if (p == WeightPolicy::kUniform) return "uniform per-model weights";
  return "w = n_items / (s(1-s)) for accuracy-type tasks with known item count, s clamped to "
         "[1/(2n), 1-1/(2n)]; uniform otherwise";
}

// Per-model precision weights for one task's dataset.
inline std::vector<double> precision_weights(const Dataset& ds, WeightPolicy policy) {
  std::vector<double> w(ds.size(), 1.0);
  if (policy == WeightPolicy::kUniform || ds.task.metric_kind == MetricKind::kBrier ||
      !ds.task.n_items || *ds.task.n_items <= 0) {
    return w;
  }
  const double n = *ds.task.n_items;
  const double lo = 1.0 / (2.0 * n);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double s = std::clamp(ds.targets[i], lo, 1.0 - lo);
    w[i] = n / (s * (1.0 - s));
  }
  return w;
}

// One-vs-rest contrast for a categorical level with log-scale controls.
// Models without a documented value for the feature are left out.
inline TaskEffect estimate_contrast(const Dataset& ds, const LevelRef& ref,
                                    std::span<const double> weights) {
  require(weights.size() == ds.size(), ErrorKind::kInvalidArgument,
          "one weight per model is required");
  const auto cat = find_categorical(ref.feature);
  require(cat.has_value(), ErrorKind::kUnknownFeature,
          "'" + ref.feature + "' is not a categorical feature");
  const auto target = level_index(*cat, ref.level);
  require(target.has_value(), ErrorKind::kUnknownLevel,
          "unknown level '" + ref.level + "' for " + ref.feature);

  std::vector<std::size_t> rows;
  std::size_t in_group = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& lvl = ds.models[i].arch.level(*cat);
    if (!lvl) continue;
    rows.push_back(i);
    if (*lvl == *target) ++in_group;
  }
  const std::size_t out_group = rows.size() - in_group;
  require(in_group >= 3 && out_group >= 3, ErrorKind::kInsufficientData,
          ds.task.key() + ": " + ref.feature + "=" + ref.level + " has " +
              std::to_string(in_group) + " level and " + std::to_string(out_group) +
              " other models with scores (need 3 each)");

  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd X(n, 4);
  Eigen::VectorXd y(n);
  Eigen::VectorXd w(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& m = ds.models[rows[static_cast<std::size_t>(r)]];
    X(r, 0) = 1.0;
    X(r, 1) = *m.arch.level(*cat) == *target ? 1.0 : 0.0;
    X(r, 2) = std::log10(m.arch.total_params);
    X(r, 3) = std::log10(m.data.total_tokens_billions * 1e9);
    y[r] = ds.targets[rows[static_cast<std::size_t>(r)]];
    w[r] = weights[rows[static_cast<std::size_t>(r)]];
  }
  const auto fit = wls(X, y, w);
  return {ds.task.key(), fit.coef[1], fit.se[1]};
}

struct MetaFit {
  double intercept = 0.0;
  double slope = 0.0;
  double se_intercept = 0.0;
  double se_slope = 0.0;
  double p_intercept = 1.0;  // two-sided
  double p_slope = 1.0;      // two-sided
  double df = 0.0;
  bool exact = false;
};

namespace detail {

inline double coef_p(double coef, double se, double df, double scale) {
  if (se > 0.0) return stats::student_t_two_sided_p(coef / se, df);
  // Exact fit: a coefficient at rounding level is treated as zero.
  return std::abs(coef) <= 1e-10 * std::max(scale, 1e-300) ? 1.0 : 0.0;
}

inline MetaFit meta_regress(std::span<const TaskEffect> effects, int power) {
  require(effects.size() >= 3, ErrorKind::kInsufficientData,
          "meta-regression needs at least 3 task effects");
  const auto k = static_cast<Eigen::Index>(effects.size());
  Eigen::MatrixXd X(k, 2);
  Eigen::VectorXd y(k);
  Eigen::VectorXd w(k);
  double scale = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& e = effects[static_cast<std::size_t>(i)];
    require(e.se > 0.0 && std::isfinite(e.se) && std::isfinite(e.y), ErrorKind::kInvalidArgument,
            "task effect '" + e.task_id + "' needs a finite effect and positive standard error");
    X(i, 0) = 1.0;
    X(i, 1) = std::pow(e.se, power);
    y[i] = e.y;
    w[i] = 1.0 / (e.se * e.se);
    scale = std::max(scale, std::abs(e.y));
  }
  const bool all_equal = std::all_of(effects.begin(), effects.end(),
                                     [&](const TaskEffect& e) { return e.se == effects[0].se; });
  require(!all_equal, ErrorKind::kRankDeficient,
          "standard errors are all equal; the regressor is collinear with the intercept");
  const auto fit = wls(X, y, w);
  MetaFit out;
  out.intercept = fit.coef[0];
  out.slope = fit.coef[1];
  out.se_intercept = fit.se[0];
  out.se_slope = fit.se[1];
  out.df = static_cast<double>(fit.dof);
  out.exact = fit.exact;
  out.p_intercept = coef_p(out.intercept, out.se_intercept, out.df, scale);
  out.p_slope = coef_p(out.slope, out.se_slope, out.df, scale);
  return out;
}

}  // namespace detail

// Effect regressed on its standard error, weights 1/SE^2.
inline MetaFit pet(std::span<const TaskEffect> effects) { return detail::meta_regress(effects, 1); }

// Effect regressed on its squared standard error, weights 1/SE^2.
inline MetaFit peese(std::span<const TaskEffect> effects) {
  return detail::meta_regress(effects, 2);
}

enum class Method { kPet, kPeese };

inline const char* to_string(Method m) { return m == Method::kPet ? "PET" : "PEESE"; }

struct MetaResult {
  Method method_chosen = Method::kPet;
  double intercept = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double slope = 0.0;
  double egger_p = 1.0;
  std::size_t k = 0;
  MetaFit pet_fit;
  MetaFit peese_fit;
};

inline constexpr double kPetAlphaOneTailed = 0.05;

// PET first; when its intercept is significant (one-tailed, in the direction of
// the estimate) the PEESE intercept is reported instead.
inline MetaResult pet_peese(std::span<const TaskEffect> effects) {
  MetaResult r;
  r.k = effects.size();
  r.pet_fit = pet(effects);
  r.peese_fit = peese(effects);
  r.egger_p = r.pet_fit.p_slope;
  const bool significant = 0.5 * r.pet_fit.p_intercept < kPetAlphaOneTailed;
  r.method_chosen = significant ? Method::kPeese : Method::kPet;
  const MetaFit& chosen = significant ? r.peese_fit : r.pet_fit;
  r.intercept = chosen.intercept;
  r.slope = chosen.slope;
  const double tcrit = stats::student_t_upper_quantile(0.025, chosen.df);
  r.ci_low = chosen.intercept - tcrit * chosen.se_intercept;
  r.ci_high = chosen.intercept + tcrit * chosen.se_intercept;
  return r;
}

// The architecture levels audited by default.
inline const std::vector<LevelRef>& default_audit_levels() {
  static const std::vector<LevelRef> levels = {
      {"positional_embeddings", "alibi"}, {"positional_embeddings", "learned"},
      {"positional_embeddings", "rope"},  {"layer_norm", "nonparametric"},
      {"layer_norm", "parametric"},       {"layer_norm", "rmsnorm"},
      {"attention_variant", "full"},      {"attention_variant", "gqa"},
      {"attention_variant", "local_full"}, {"attention_variant", "mqa"},
  };
  return levels;
}

struct AuditRow {
  LevelRef level;
  std::vector<TaskEffect> effects;
  std::vector<std::pair<std::string, std::string>> skipped;  // task key, reason
  std::optional<MetaResult> result;
  std::string failure;
};

// Contrasts for every (level, task) pair in parallel, then pooled per level.
inline std::vector<AuditRow> bias_audit(std::span<const Dataset> datasets,
                                        std::span<const LevelRef> levels, WeightPolicy policy,
                                        unsigned jobs = 1) {
  const std::size_t nt = datasets.size();
  std::vector<std::vector<double>> weights(nt);
  for (std::size_t t = 0; t < nt; ++t) weights[t] = precision_weights(datasets[t], policy);

  std::vector<std::optional<TaskEffect>> cell(levels.size() * nt);
  std::vector<std::string> why(levels.size() * nt);
  parallel_for(cell.size(), jobs, [&](std::size_t idx) {
    const std::size_t l = idx / nt;
    const std::size_t t = idx % nt;
    try {
      cell[idx] = estimate_contrast(datasets[t], levels[l], weights[t]);
    } catch (const Error& e) {
      why[idx] = e.what();
    }
  });

  std::vector<AuditRow> rows;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    AuditRow row;
    row.level = levels[l];
    for (std::size_t t = 0; t < nt; ++t) {
      const std::size_t idx = l * nt + t;
      if (cell[idx]) {
        row.effects.push_back(*cell[idx]);
      } else {
        row.skipped.emplace_back(datasets[t].task.key(), why[idx]);
      }
    }
    try {
      row.result = pet_peese(row.effects);
    } catch (const Error& e) {
      row.failure = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const MetaFit& f) {
  return {{"intercept", f.intercept}, {"slope", f.slope},
          {"se_intercept", f.se_intercept}, {"se_slope", f.se_slope},
          {"p_intercept", f.p_intercept}, {"p_slope", f.p_slope},
          {"df", f.df}, {"exact", f.exact}};
}

inline nlohmann::json to_json(const MetaResult& r) {
  return {{"method_chosen", to_string(r.method_chosen)},
          {"intercept", r.intercept},
          {"ci95", {r.ci_low, r.ci_high}},
          {"slope", r.slope},
          {"egger_p", r.egger_p},
          {"k", r.k},
          {"pet", to_json(r.pet_fit)},
          {"peese", to_json(r.peese_fit)}};
}

inline nlohmann::json to_json(const AuditRow& row) {
  nlohmann::json effects = nlohmann::json::array();
  for (const auto& e : row.effects) {
    effects.push_back({{"task", e.task_id}, {"y", e.y}, {"se", e.se}});
  }
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& [task, reason] : row.skipped) {
    skipped.push_back({{"task", task}, {"reason", reason}});
  }
  nlohmann::json j = {{"feature", row.level.feature},
                      {"level", row.level.level},
                      {"effects", effects},
                      {"skipped", skipped}};
  j["result"] = row.result ? to_json(*row.result) : nlohmann::json(nullptr);
  if (!row.failure.empty()) j["failure"] = row.failure;
  return j;
}

}  // namespace perfpred::metabias
