#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "perfpred/baselines.hpp"
#include "perfpred/error.hpp"
#include "perfpred/registry.hpp"
#include "perfpred/rng.hpp"

namespace perfpred::synth {

enum class TargetForm { kPowerLaw, kLogLinear };

struct LevelEffect {
  std::string feature;
  std::string level;
  double shift = 0.0;  // added to the score of every model with this level
};

// Per-task response. Power law values live in loss space and are mapped back
// to scores through the task's target transform; log-linear is in score units.
struct TaskResponse {
  TaskSpec task;
  TargetForm form = TargetForm::kPowerLaw;
  baselines::PowerLawParams power_law{1e9, 1e10, 0.3, 0.3};
  baselines::LogLinearFit log_linear{0.0, 0.05, 0.05};
  std::map<std::string, double> numeric_effects;  // feature -> coefficient per raw unit
  std::vector<LevelEffect> level_effects;
  double noise_sd = 0.0;
};

struct SynthSpec {
  std::size_t n_models = 92;
  double log10_params_min = 8.0;
  double log10_params_max = 11.0;
  double log10_tokens_min = 10.0;  // tokens, not billions
  double log10_tokens_max = 12.5;
  double missing_rate = 0.0;       // per optional field
  std::vector<TaskResponse> tasks;
};

struct SynthData {
  Registry registry;
  std::vector<ScoreRecord> scores;
  nlohmann::json truth;
};

inline constexpr std::uint64_t kFeatureStream = 0;
inline constexpr std::uint64_t kFirstNoiseStream = 1;

namespace detail {

inline void check_spec(const SynthSpec& spec) {
  require(spec.n_models >= 1, ErrorKind::kInvalidArgument, "n_models must be positive");
  require(spec.log10_params_min <= spec.log10_params_max &&
              spec.log10_tokens_min <= spec.log10_tokens_max,
          ErrorKind::kInvalidArgument, "scale ranges are inverted");
  require(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0, ErrorKind::kInvalidArgument,
          "missing_rate must be in [0, 1)");
  require(!spec.tasks.empty(), ErrorKind::kInvalidArgument, "at least one task is required");
  for (const auto& t : spec.tasks) {
    require(t.noise_sd >= 0.0, ErrorKind::kInvalidArgument, "noise_sd must be non-negative");
    require(t.form != TargetForm::kPowerLaw || t.power_law.valid(), ErrorKind::kInvalidArgument,
            "power-law parameters must be positive");
    for (const auto& [name, coef] : t.numeric_effects) {
      const auto* def = find_feature(name);
      require(def != nullptr && def->kind != FeatureKind::kCategorical,
              ErrorKind::kUnknownFeature, "numeric effect on unknown feature '" + name + "'");
    }
    for (const auto& e : t.level_effects) {
      const auto cat = find_categorical(e.feature);
      require(cat.has_value() && level_index(*cat, e.level).has_value(),
              ErrorKind::kUnknownLevel, "unknown level effect " + e.feature + "=" + e.level);
    }
  }
}

inline ModelRecord draw_model(const SynthSpec& spec, std::size_t i, CounterRng& rng) {
  ModelRecord m;
  char id[32];
  std::snprintf(id, sizeof id, "synth-%03zu", i);
  m.model_id = id;
  m.organization = "synthetic";
  m.provenance = "generated";
  auto maybe = [&](double v) -> std::optional<double> {
    return rng.uniform() < spec.missing_rate ? std::nullopt : std::optional<double>(v);
  };
  const double lp = rng.uniform(spec.log10_params_min, spec.log10_params_max);
  const double lt = rng.uniform(spec.log10_tokens_min, spec.log10_tokens_max);
  m.arch.total_params = std::round(std::pow(10.0, lp));
  m.data.total_tokens_billions = std::pow(10.0, lt) / 1e9;

  m.arch.dimension = maybe(std::pow(2.0, 9 + static_cast<int>(rng.uniform_index(5))));
  m.arch.num_heads = maybe(static_cast<double>(8 * (1 + rng.uniform_index(8))));
  m.arch.mlp_ratio = maybe(rng.uniform() < 0.5 ? 4.0 : 8.0 / 3.0);
  m.arch.sequence_length = maybe(1024.0 * static_cast<double>(1 + rng.uniform_index(4)));
  m.arch.batch_instances = maybe(256.0 * static_cast<double>(1 + rng.uniform_index(16)));
  for (std::size_t c = 0; c < kNumCategorical; ++c) {
    const auto n_levels = enum_vocab()[c].levels.size();
    const int lvl = static_cast<int>(rng.uniform_index(n_levels));
    if (rng.uniform() >= spec.missing_rate) m.arch.categorical[c] = lvl;
  }

  // Domain shares: five positive parts scaled to a total between 80 and 100.
  std::array<double, 5> parts{};
  double sum = 0.0;
  for (auto& p : parts) {
    p = -std::log(1.0 - rng.uniform());
    sum += p;
  }
  const double total = rng.uniform(80.0, 100.0);
  for (auto& p : parts) p = std::round(p / sum * total * 100.0) / 100.0;
  m.data.pct_web = maybe(parts[0]);
  m.data.pct_code = maybe(parts[1]);
  m.data.pct_books = maybe(parts[2]);
  m.data.pct_reference = maybe(parts[3]);
  m.data.pct_academic = maybe(parts[4]);
  m.data.pct_english = maybe(std::round(rng.uniform(50.0, 100.0) * 100.0) / 100.0);

  const double code_gen = parts[1] * rng.uniform(0.7, 1.3);
  if (auto v = maybe(std::min(code_gen, 100.0))) m.gen["domain_code_pct_mean"] = *v;
  if (auto v = maybe(rng.uniform(0.5, 3.0))) m.gen["edu_classifier_mean"] = *v;
  if (auto v = maybe(rng.uniform(4.0, 9.0))) m.gen["entropy_mean"] = *v;
  return m;
}

inline double raw_response(const TaskResponse& r, double N, double D) {
  if (r.form == TargetForm::kLogLinear) return r.log_linear.predict(N, D);
  const auto tf = baselines::transform_for(r.task.polarity);
  return baselines::from_loss(tf, baselines::eval_power_law(r.power_law, N, D));
}

inline double feature_shift(const TaskResponse& r, const ModelRecord& m) {
  double shift = 0.0;
  for (const auto& [name, coef] : r.numeric_effects) {
    if (auto v = numeric_value(m, name)) shift += coef * *v;
  }
  for (const auto& e : r.level_effects) {
    const auto cat = *find_categorical(e.feature);
    const auto& lvl = m.arch.level(cat);
    if (lvl && *lvl == *level_index(cat, e.level)) shift += e.shift;
  }
  return shift;
}

inline nlohmann::json response_json(const TaskResponse& r) {
  nlohmann::json j = {{"task", r.task.key()},
                      {"metric_kind", to_string(r.task.metric_kind)},
                      {"form", r.form == TargetForm::kPowerLaw ? "power_law" : "log_linear"},
                      {"noise_sd", r.noise_sd},
                      {"numeric_effects", r.numeric_effects}};
  if (r.form == TargetForm::kPowerLaw) {
    j["power_law"] = {{"Nc", r.power_law.Nc}, {"Dc", r.power_law.Dc},
                      {"alphaN", r.power_law.alphaN}, {"alphaD", r.power_law.alphaD}};
  } else {
    j["log_linear"] = {{"a", r.log_linear.a}, {"b", r.log_linear.b}, {"c", r.log_linear.c}};
  }
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& e : r.level_effects) {
    levels.push_back({{"feature", e.feature}, {"level", e.level}, {"shift", e.shift}});
  }
  j["level_effects"] = levels;
  return j;
}

}  // namespace detail

// Deterministic in (spec, seed). Features come from Philox stream 0; task t
// draws its noise from stream 1 + t. Scores are clamped to the metric range.
inline SynthData gen_registry(const SynthSpec& spec, std::uint64_t seed) {
  detail::check_spec(spec);
  SynthData out;
  CounterRng feature_rng(seed, kFeatureStream);
  for (std::size_t i = 0; i < spec.n_models; ++i) {
    out.registry.models.push_back(detail::draw_model(spec, i, feature_rng));
  }
  nlohmann::json tasks = nlohmann::json::array();
  for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
    const auto& r = spec.tasks[t];
    CounterRng noise_rng(seed, kFirstNoiseStream + t);
    const double hi = metric_upper_bound(r.task.metric_kind);
    std::size_t clamped = 0;
    nlohmann::json noiseless = nlohmann::json::object();
    for (const auto& m : out.registry.models) {
      const double N = m.arch.total_params;
      const double D = m.data.total_tokens_billions * 1e9;
      const double mean = detail::raw_response(r, N, D) + detail::feature_shift(r, m);
      const double noise = r.noise_sd > 0.0 ? r.noise_sd * noise_rng.normal() : 0.0;
      double s = mean + noise;
      if (s < 0.0 || s > hi) {
        s = std::clamp(s, 0.0, hi);
        ++clamped;
      }
      noiseless[m.model_id] = mean;
      out.scores.push_back({m.model_id, r.task.task_id, r.task.shots, r.task.metric_kind, s});
    }
    auto j = detail::response_json(r);
    j["clamped"] = clamped;
    j["noiseless_score"] = noiseless;
    tasks.push_back(j);
  }
  out.truth = {{"seed", seed},
               {"prng", kPrngId},
               {"n_models", spec.n_models},
               {"missing_rate", spec.missing_rate},
               {"tasks", tasks}};
  return out;
}

// A task response with the catalog's metric kind and item count for (id, shots).
inline TaskResponse response_for(std::string_view task_id, int shots) {
  for (const auto& t : task_catalog()) {
    if (t.task_id == task_id && t.shots == shots) {
      TaskResponse r;
      r.task = t;
      return r;
    }
  }
  throw Error(ErrorKind::kInvalidArgument,
              "no catalog task " + std::string(task_id) + "@" + std::to_string(shots));
}

// Default oracle spec: every catalog task follows a power law in loss space
// with modest code and RoPE effects plus noise. `noise_sd` is the scale of the
// first task's noise.
inline SynthSpec default_spec(std::size_t n_models = 92, double noise_sd = 0.01) {
  SynthSpec spec;
  spec.n_models = n_models;
  spec.missing_rate = 0.1;
  for (const auto& task : task_catalog()) {
    TaskResponse r;
    r.task = task;
    // Loss between about 0.45 and 0.85 over the default scale ranges, so
    // scores stay clear of the metric bounds.
    r.power_law = {1e7, 1e9, 0.1, 0.1};
    const double better = task.polarity == Polarity::kHigherBetter ? 1.0 : -1.0;
    const double code_sign = task.task_id == "humaneval" ? 1.0 : -1.0;
    r.numeric_effects["pct_code"] = code_sign * better * 0.0005;
    r.level_effects.push_back({"positional_embeddings", "rope", better * 0.02});
    // Task noise grows along the catalog so task-level standard errors differ.
    r.noise_sd = noise_sd * (0.5 + 0.25 * static_cast<double>(spec.tasks.size()));
    spec.tasks.push_back(r);
  }
  return spec;
}

}  // namespace perfpred::synth
