#pragma once

// Subcommand implementations for the perfpred tool. Each command composes
// library calls, writes its artifacts under Options::out, and returns an exit
// status: 0 success, 1 validation/analysis failure, 2 I/O or config error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "perfpred/baselines.hpp"
#include "perfpred/error.hpp"
#include "perfpred/gbtree.hpp"
#include "perfpred/io.hpp"
#include "perfpred/metabias.hpp"
#include "perfpred/pipeline.hpp"
#include "perfpred/registry.hpp"
#include "perfpred/rng.hpp"
#include "perfpred/shap.hpp"
#include "perfpred/stats.hpp"

namespace perfpred::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad flags or config contents; always exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string registry;
  std::string registry_format = "json";  // json | csv
  std::string mapping;                   // CSV column mapping (csv format only)
  std::string scores;
  std::vector<std::string> tasks;        // "task_id@shots" or "task_id"
  std::uint64_t seed = 0;
  int n_seeds = 50;
  std::string out = "perfpred-out";
  unsigned jobs = 1;
  std::string config;
  std::string predictor = "gbt";
  std::vector<std::string> features;
  std::string plot_kind;
  std::string feature;
  int grid_points = 50;
};

struct RunConfig {
  int outer_folds = 3;
  int inner_folds = 3;
  std::vector<gbt::GBTConfig> grid = gbt::default_grid();
  std::vector<std::uint64_t> seeds;            // empty: seed, seed+1, ... (--seeds of them)
  std::vector<std::uint64_t> selection_seeds;  // empty: seed, ..., seed+4
  metabias::WeightPolicy weight_policy = metabias::WeightPolicy::kBinomial;
  double selection_tol = 1e-4;
  double fdr_q = 0.05;
  std::vector<std::string> candidates;         // empty: every observed feature
  std::vector<metabias::LevelRef> audit_levels = metabias::default_audit_levels();
};

inline RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::vector<std::string> known = {
      "cv_plan", "grid", "seeds", "selection_seeds", "weight_policy", "selection_tol",
      "fdr_q", "candidates", "audit_levels"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown config key '" + it.key() + "'");
    }
  }
  RunConfig c;
  try {
    if (j.contains("cv_plan")) {
      c.outer_folds = j["cv_plan"].value("outer_folds", 3);
      c.inner_folds = j["cv_plan"].value("inner_folds", 3);
    }
    if (j.contains("grid")) {
      c.grid.clear();
      for (const auto& g : j["grid"]) c.grid.push_back(gbt::config_from_json(g));
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("selection_seeds")) {
      c.selection_seeds = j["selection_seeds"].get<std::vector<std::uint64_t>>();
    }
    if (j.contains("weight_policy")) {
      const auto p = metabias::parse_weight_policy(j["weight_policy"].get<std::string>());
      if (!p) throw ConfigError("weight_policy must be 'binomial' or 'uniform'");
      c.weight_policy = *p;
    }
    c.selection_tol = j.value("selection_tol", c.selection_tol);
    c.fdr_q = j.value("fdr_q", c.fdr_q);
    if (j.contains("candidates")) c.candidates = j["candidates"].get<std::vector<std::string>>();
    if (j.contains("audit_levels")) {
      c.audit_levels.clear();
      for (const auto& l : j["audit_levels"]) {
        c.audit_levels.push_back({l.at("feature").get<std::string>(),
                                  l.at("level").get<std::string>()});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  if (c.outer_folds < 2 || c.inner_folds < 2) throw ConfigError("folds must be at least 2");
  if (c.grid.empty()) throw ConfigError("grid must not be empty");
  return c;
}

inline json to_json(const RunConfig& c) {
  json grid = json::array();
  for (const auto& g : c.grid) grid.push_back(gbt::to_json(g));
  json levels = json::array();
  for (const auto& l : c.audit_levels) levels.push_back({{"feature", l.feature}, {"level", l.level}});
  return {{"cv_plan", {{"outer_folds", c.outer_folds}, {"inner_folds", c.inner_folds}}},
          {"grid", grid},
          {"seeds", c.seeds},
          {"selection_seeds", c.selection_seeds},
          {"weight_policy", metabias::to_string(c.weight_policy)},
          {"selection_tol", c.selection_tol},
          {"fdr_q", c.fdr_q},
          {"candidates", c.candidates},
          {"audit_levels", levels}};
}

// Everything a command needs, loaded once.
struct Context {
  Options opt;
  RunConfig config;
  Registry registry;
  std::vector<ScoreRecord> scores;
  std::string input_digest;  // hash of registry, scores and effective config
  std::ostream* log = &std::cout;

  fs::path out_path(const std::string& name) const { return fs::path(opt.out) / name; }

  pipeline::EvalOptions eval() const {
    return {config.outer_folds, config.inner_folds, opt.jobs};
  }
};

namespace detail {

inline std::string sanitize(std::string s) {
  for (char& ch : s) {
    if (ch == '@' || ch == '/' || ch == ' ' || ch == ',') ch = '_';
  }
  return s;
}

inline std::string setting_label(const TaskSpec& t) { return std::to_string(t.shots) + "-shot"; }

// Natural units -> display units: percent for accuracy-type metrics, x100 for Brier.
inline double display(double v) { return 100.0 * v; }

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string display_mae(const TaskSpec& t, double v) {
  return fixed(display(v)) + (t.metric_kind == MetricKind::kBrier ? "" : "%");
}

inline std::string markdown_table(const std::vector<std::string>& header,
                                  const std::vector<std::vector<std::string>>& rows) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s = "|";
    for (const auto& c : cells) s += " " + c + " |";
    return s + "\n";
  };
  std::string out = line(header);
  out += "|";
  for (std::size_t i = 0; i < header.size(); ++i) out += " --- |";
  out += "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

inline std::string csv_table(const std::vector<std::string>& header,
                             const std::vector<std::vector<std::string>>& rows) {
  std::string out = io::csv_line(header);
  for (const auto& r : rows) out += io::csv_line(r);
  return out;
}

inline void write_json(const fs::path& p, const json& j) { io::write_file_atomic(p, j.dump(2) + "\n"); }

}  // namespace detail

// Effective seed lists.
inline std::vector<std::uint64_t> eval_seeds(const Context& ctx) {
  if (!ctx.config.seeds.empty()) return ctx.config.seeds;
  std::vector<std::uint64_t> s;
  for (int i = 0; i < ctx.opt.n_seeds; ++i) s.push_back(ctx.opt.seed + static_cast<std::uint64_t>(i));
  return s;
}

inline std::vector<std::uint64_t> selection_seeds(const Context& ctx) {
  if (!ctx.config.selection_seeds.empty()) return ctx.config.selection_seeds;
  std::vector<std::uint64_t> s;
  for (std::uint64_t i = 0; i < 5; ++i) s.push_back(ctx.opt.seed + i);
  return s;
}

inline Context load_context(const Options& opt, bool need_scores = true) {
  Context ctx;
  ctx.opt = opt;
  if (opt.n_seeds < 1) throw ConfigError("--seeds must be at least 1");
  if (!opt.config.empty()) {
    json j;
    try {
      j = json::parse(io::read_file(opt.config));
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ctx.config = config_from_json(j);
  }
  if (opt.registry.empty()) throw ConfigError("--registry is required");
  std::string registry_text = io::read_file(opt.registry);
  if (opt.registry_format == "json") {
    ctx.registry = throw_on_violations(check_registry_json(registry_text));
  } else if (opt.registry_format == "csv") {
    if (opt.mapping.empty()) throw ConfigError("--registry-format csv needs --mapping");
    const auto mapping_text = io::read_file(opt.mapping);
    json mj;
    try {
      mj = json::parse(mapping_text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("mapping is not valid JSON: ") + e.what());
    }
    ctx.registry = throw_on_violations(check_registry_csv(registry_text, CsvMapping::from_json(mj)));
    registry_text += mapping_text;
  } else {
    throw ConfigError("unknown registry format '" + opt.registry_format + "'");
  }
  std::string scores_text;
  if (need_scores) {
    if (opt.scores.empty()) throw ConfigError("--scores is required");
    scores_text = io::read_file(opt.scores);
    auto report = check_scores_csv(scores_text, &ctx.registry);
    if (!report.ok()) {
      const auto& first = report.violations.front();
      throw Error(first.kind, first.subject + ": " + first.message, std::move(report.violations));
    }
    ctx.scores = std::move(report.scores);
  }
  std::uint64_t h = io::fnv1a(registry_text);
  h = io::fnv1a("\x1f", h);
  h = io::fnv1a(scores_text, h);
  h = io::fnv1a("\x1f", h);
  h = io::fnv1a(to_json(ctx.config).dump(), h);
  ctx.input_digest = io::hex64(h);
  return ctx;
}

// Resolves --task values against the tasks present in the scores. A bare
// task id matches when it has a single setting. No --task: every task.
inline std::vector<TaskSpec> resolve_tasks(const Context& ctx) {
  const auto present = tasks_in(ctx.scores);
  // Catalog order first, then anything else in first-seen order.
  std::vector<TaskSpec> ordered;
  for (const auto& c : task_catalog()) {
    for (const auto& t : present) {
      if (t.task_id == c.task_id && t.shots == c.shots) ordered.push_back(t);
    }
  }
  for (const auto& t : present) {
    if (std::find(ordered.begin(), ordered.end(), t) == ordered.end()) ordered.push_back(t);
  }
  if (ctx.opt.tasks.empty()) return ordered;
  std::vector<TaskSpec> out;
  for (const auto& want : ctx.opt.tasks) {
    std::vector<TaskSpec> hits;
    for (const auto& t : ordered) {
      if (t.key() == want || t.task_id == want) hits.push_back(t);
    }
    if (hits.empty()) throw ConfigError("no scores for task '" + want + "'");
    if (hits.size() > 1 && want.find('@') == std::string::npos) {
      throw ConfigError("task '" + want + "' has several settings; use task@shots");
    }
    out.push_back(hits.front());
  }
  return out;
}

inline Dataset dataset_for(const Context& ctx, const TaskSpec& task) {
  return join_scores(ctx.registry, ctx.scores, task);
}

inline std::vector<std::string> scaling_features() {
  return {std::string(scaling_feature_names()[0]), std::string(scaling_feature_names()[1])};
}

// JSON artifact cache keyed by content hash of inputs, config and the
// command-specific key. Hits are read back instead of recomputed.
inline json cached(const Context& ctx, const std::string& stem, const json& key,
                   const std::function<json()>& compute) {
  const std::string digest =
      io::hex64(io::fnv1a(key.dump(), io::fnv1a(ctx.input_digest)));
  const fs::path path = ctx.out_path("cache") / (stem + "-" + digest + ".json");
  if (fs::exists(path)) {
    try {
      return json::parse(io::read_file(path));
    } catch (const json::parse_error&) {
      // fall through and recompute a damaged entry
    }
  }
  json j = compute();
  detail::write_json(path, j);
  return j;
}

// ---------------------------------------------------------------------------
// Shared computations
// ---------------------------------------------------------------------------

inline pipeline::SelectionTrace selection_for(const Context& ctx, const TaskSpec& task) {
  const auto seeds = selection_seeds(ctx);
  const json key = {{"command", "select"}, {"task", task.key()}, {"selection_seeds", seeds}};
  const json j = cached(ctx, "select-" + detail::sanitize(task.key()), key, [&] {
    const auto ds = dataset_for(ctx, task);
    auto candidates =
        ctx.config.candidates.empty() ? pipeline::observed_candidate_features(ds) : ctx.config.candidates;
    return pipeline::to_json(pipeline::greedy_select(ds, candidates, ctx.config.grid, seeds,
                                                     ctx.config.selection_tol, ctx.eval()));
  });
  return pipeline::selection_from_json(j);
}

// Feature set for the all-features model: --features when given, otherwise
// the greedy selection for the task.
inline std::vector<std::string> all_features_for(const Context& ctx, const TaskSpec& task) {
  if (!ctx.opt.features.empty()) {
    auto f = scaling_features();
    for (const auto& x : ctx.opt.features) {
      if (std::find(f.begin(), f.end(), x) == f.end()) f.push_back(x);
    }
    return f;
  }
  return selection_for(ctx, task).final_features;
}

struct TaskComparison {
  TaskSpec task;
  std::size_t n_models = 0;
  std::vector<std::string> all_features;
  std::vector<std::uint64_t> seeds;
  std::vector<double> median_mae;
  std::vector<double> log_linear_mae;
  std::vector<double> scaling_mae;
  std::vector<double> all_mae;
  std::optional<stats::TTest> test;
  double p_corrected = std::numeric_limits<double>::quiet_NaN();
  bool significant = false;
};

inline json to_json(const TaskComparison& c) {
  json j = {{"task", c.task.key()},
            {"metric_kind", to_string(c.task.metric_kind)},
            {"n_models", c.n_models},
            {"all_features", c.all_features},
            {"seeds", c.seeds},
            {"median_mae", c.median_mae},
            {"log_linear_mae", c.log_linear_mae},
            {"scaling_mae", c.scaling_mae},
            {"all_features_mae", c.all_mae}};
  if (c.test) {
    j["t"] = c.test->t;
    j["df"] = c.test->df;
    j["p_raw"] = c.test->p_two_sided;
  }
  return j;
}

inline TaskComparison comparison_from_json(const json& j, const TaskSpec& task) {
  TaskComparison c;
  c.task = task;
  c.n_models = j.at("n_models").get<std::size_t>();
  c.all_features = j.at("all_features").get<std::vector<std::string>>();
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.median_mae = j.at("median_mae").get<std::vector<double>>();
  c.log_linear_mae = j.at("log_linear_mae").get<std::vector<double>>();
  c.scaling_mae = j.at("scaling_mae").get<std::vector<double>>();
  c.all_mae = j.at("all_features_mae").get<std::vector<double>>();
  if (j.contains("t")) {
    c.test = stats::TTest{j["t"].get<double>(), j["df"].get<double>(), j["p_raw"].get<double>()};
  }
  return c;
}

// Per-seed MAEs of the four predictors on one task; every predictor sees the
// same seeds and hence the same fold splits.
inline TaskComparison compare_task(const Context& ctx, const TaskSpec& task) {
  const auto features = all_features_for(ctx, task);
  const auto seeds = eval_seeds(ctx);
  const json key = {{"command", "compare"}, {"task", task.key()}, {"features", features},
                    {"seeds", seeds}};
  const json j = cached(ctx, "compare-" + detail::sanitize(task.key()), key, [&] {
    const auto ds = dataset_for(ctx, task);
    TaskComparison c;
    c.task = task;
    c.n_models = ds.size();
    c.all_features = features;
    c.seeds = seeds;
    const auto sf = scaling_features();
    const auto& grid = ctx.config.grid;
    using pipeline::PredictorKind;
    c.median_mae = pipeline::multi_seed_mae(ds, sf, PredictorKind::kMedian, seeds, grid, ctx.eval());
    c.log_linear_mae =
        pipeline::multi_seed_mae(ds, sf, PredictorKind::kLogLinear, seeds, grid, ctx.eval());
    c.scaling_mae = pipeline::multi_seed_mae(ds, sf, PredictorKind::kGbt, seeds, grid, ctx.eval());
    c.all_mae = features == sf ? c.scaling_mae
                               : pipeline::multi_seed_mae(ds, features, PredictorKind::kGbt, seeds,
                                                          grid, ctx.eval());
    if (seeds.size() >= 2) c.test = stats::paired_t_test(c.scaling_mae, c.all_mae);
    return to_json(c);
  });
  return comparison_from_json(j, task);
}

// BH correction across the tasks that produced a test.
inline void correct(std::vector<TaskComparison>& rows, double q) {
  std::vector<double> p;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].test) {
      p.push_back(rows[i].test->p_two_sided);
      idx.push_back(i);
    }
  }
  if (p.empty()) return;
  const auto fdr = stats::bh_fdr(p, q);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    rows[idx[k]].p_corrected = fdr.adjusted[k];
    rows[idx[k]].significant = fdr.rejected[k];
  }
}

// Final model for attribution: grid search on every row, then refit.
inline gbt::TreeEnsemble final_model(const Context& ctx, const Dataset& ds,
                                     const std::vector<std::string>& features) {
  const auto X = encode_features(ds, features);
  gbt::GBTConfig cfg = ctx.config.grid.front();
  if (ctx.config.grid.size() > 1) {
    cfg = pipeline::grid_search(X, ds.targets, ctx.config.grid, ctx.config.inner_folds, ctx.opt.seed)
              .best;
  }
  cfg.seed = ctx.opt.seed;
  return gbt::fit_gbt(X, ds.targets, cfg);
}

inline std::vector<std::string> shap_features_for(const Context& ctx, const TaskSpec& task) {
  return all_features_for(ctx, task);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_validate(const Options& opt, std::ostream& os) {
  if (opt.registry.empty()) throw ConfigError("--registry is required");
  const std::string registry_text = io::read_file(opt.registry);
  LoadReport reg;
  if (opt.registry_format == "csv") {
    if (opt.mapping.empty()) throw ConfigError("--registry-format csv needs --mapping");
    json mj;
    try {
      mj = json::parse(io::read_file(opt.mapping));
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("mapping is not valid JSON: ") + e.what());
    }
    reg = check_registry_csv(registry_text, CsvMapping::from_json(mj));
  } else if (opt.registry_format == "json") {
    reg = check_registry_json(registry_text);
  } else {
    throw ConfigError("unknown registry format '" + opt.registry_format + "'");
  }
  std::vector<Violation> all = reg.violations;
  std::size_t n_scores = 0;
  if (!opt.scores.empty()) {
    auto sr = check_scores_csv(io::read_file(opt.scores), &reg.registry);
    n_scores = sr.scores.size();
    all.insert(all.end(), sr.violations.begin(), sr.violations.end());
  }
  json violations = json::array();
  for (const auto& v : all) {
    violations.push_back(
        {{"kind", to_string(v.kind)}, {"subject", v.subject}, {"field", v.field}, {"message", v.message}});
    os << "violation [" << to_string(v.kind) << "] " << (v.subject.empty() ? "-" : v.subject);
    if (!v.field.empty()) os << " (" << v.field << ")";
    os << ": " << v.message << "\n";
  }
  const json report = {{"ok", all.empty()},
                       {"models", reg.registry.models.size()},
                       {"scores", n_scores},
                       {"violations", violations}};
  detail::write_json(fs::path(opt.out) / "validation.json", report);
  os << (all.empty() ? "ok" : "invalid") << ": " << reg.registry.models.size() << " models, "
     << n_scores << " scores, " << all.size() << " violations\n";
  return all.empty() ? 0 : 1;
}

inline int cmd_encode(const Context& ctx, std::ostream& os) {
  for (const auto& task : resolve_tasks(ctx)) {
    const auto ds = dataset_for(ctx, task);
    auto features = ctx.opt.features.empty() ? pipeline::all_candidate_features() : ctx.opt.features;
    for (const auto& s : scaling_features()) {
      if (std::find(features.begin(), features.end(), s) == features.end()) {
        features.insert(features.begin() + (s == "total_params" ? 0 : 1), s);
      }
    }
    const auto X = encode_features(ds, features);
    std::vector<std::string> header = {"model_id", "target"};
    for (const auto& c : X.columns) header.push_back(c.name);
    std::string csv = io::csv_line(header);
    for (std::size_t r = 0; r < X.rows(); ++r) {
      io::CsvRow row = {X.row_ids[r], io::format_double(ds.targets[r])};
      for (std::size_t c = 0; c < X.cols(); ++c) {
        row.push_back(X.is_missing(r, c) ? std::string() : io::format_double(X.at(r, c)));
      }
      csv += io::csv_line(row);
    }
    json cols = json::array();
    for (const auto& c : X.columns) cols.push_back(gbt::to_json(c));
    const std::string stem = "encoded-" + detail::sanitize(task.key());
    io::write_file_atomic(ctx.out_path(stem + ".csv"), csv);
    detail::write_json(ctx.out_path(stem + ".columns.json"), cols);
    os << task.key() << ": " << X.rows() << " rows x " << X.cols() << " columns\n";
  }
  return 0;
}

inline int cmd_fit_scaling(const Context& ctx, std::ostream& os) {
  json fits = json::array();
  std::vector<std::vector<std::string>> rows;
  bool failed = false;
  for (const auto& task : resolve_tasks(ctx)) {
    const auto ds = dataset_for(ctx, task);
    json entry = {{"task", task.key()}, {"metric_kind", to_string(task.metric_kind)}, {"n", ds.size()}};
    try {
      const auto fit = baselines::fit_power_law(baselines::scale_points(ds), task.polarity);
      entry["fit"] = baselines::to_json(fit);
      rows.push_back({task.task_id, detail::setting_label(task), std::to_string(ds.size()),
                      detail::fixed(fit.r_squared, 3), detail::sci(fit.params.Nc),
                      detail::sci(fit.params.Dc), detail::fixed(fit.params.alphaN, 4),
                      detail::fixed(fit.params.alphaD, 4)});
    } catch (const Error& e) {
      entry["error"] = e.what();
      rows.push_back({task.task_id, detail::setting_label(task), std::to_string(ds.size()),
                      "unavailable", "", "", "", ""});
      failed = true;
    }
    fits.push_back(entry);
  }
  const std::vector<std::string> header = {"Benchmark", "Setting", "Models", "R2",
                                           "Nc",        "Dc",      "alphaN", "alphaD"};
  detail::write_json(ctx.out_path("scaling_fits.json"), fits);
  io::write_file_atomic(ctx.out_path("scaling_r2.md"), detail::markdown_table(header, rows));
  io::write_file_atomic(ctx.out_path("scaling_r2.csv"), detail::csv_table(header, rows));
  os << detail::markdown_table(header, rows);
  return failed ? 1 : 0;
}

inline int cmd_cv(const Context& ctx, std::ostream& os) {
  const auto kind = pipeline::parse_predictor(ctx.opt.predictor);
  if (!kind) throw ConfigError("unknown predictor '" + ctx.opt.predictor + "'");
  for (const auto& task : resolve_tasks(ctx)) {
    auto features = scaling_features();
    for (const auto& f : ctx.opt.features) {
      if (std::find(features.begin(), features.end(), f) == features.end()) features.push_back(f);
    }
    const json key = {{"command", "cv"}, {"task", task.key()}, {"predictor", ctx.opt.predictor},
                      {"features", features}, {"seed", ctx.opt.seed}};
    const json j = cached(ctx, "cv-" + detail::sanitize(task.key()), key, [&] {
      const auto ds = dataset_for(ctx, task);
      const auto plan =
          pipeline::make_plan(ds, ctx.opt.seed, ctx.config.outer_folds, ctx.config.inner_folds);
      return pipeline::to_json(pipeline::run_cv(ds, features, *kind, plan, ctx.config.grid));
    });
    detail::write_json(
        ctx.out_path("cv-" + detail::sanitize(task.key()) + "-" + ctx.opt.predictor + ".json"), j);
    os << task.key() << " " << ctx.opt.predictor << " MAE "
       << detail::display_mae(task, j["mae"].get<double>()) << "\n";
  }
  return 0;
}

inline int cmd_select(const Context& ctx, std::ostream& os) {
  for (const auto& task : resolve_tasks(ctx)) {
    const auto trace = selection_for(ctx, task);
    detail::write_json(ctx.out_path("select-" + detail::sanitize(task.key()) + ".json"),
                       pipeline::to_json(trace));
    os << task.key() << ": base MAE " << detail::display_mae(task, trace.base_mae);
    for (const auto& s : trace.steps) {
      os << " +" << s.added_feature << " -> " << detail::display_mae(task, s.mean_mae_after);
    }
    os << "\n";
  }
  return 0;
}

inline std::vector<TaskComparison> compare_all(const Context& ctx) {
  std::vector<TaskComparison> rows;
  for (const auto& task : resolve_tasks(ctx)) rows.push_back(compare_task(ctx, task));
  correct(rows, ctx.config.fdr_q);
  return rows;
}

inline json comparisons_json(const std::vector<TaskComparison>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j = to_json(r);
    j["p_corrected"] = std::isnan(r.p_corrected) ? json(nullptr) : json(r.p_corrected);
    j["significant"] = r.significant;
    out.push_back(j);
  }
  return out;
}

inline std::string ci_cell(const TaskSpec& t, std::span<const double> v) {
  if (v.size() < 2) return detail::display_mae(t, stats::mean(v));
  const auto ci = stats::mean_ci95(v);
  return detail::display_mae(t, ci.mean) + " ± " + detail::fixed(detail::display(ci.halfwidth)) +
         (t.metric_kind == MetricKind::kBrier ? "" : "%");
}

inline int cmd_compare(const Context& ctx, std::ostream& os) {
  const auto rows = compare_all(ctx);
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows) {
    table.push_back({r.task.task_id, detail::setting_label(r.task), ci_cell(r.task, r.scaling_mae),
                     ci_cell(r.task, r.all_mae),
                     r.test ? detail::sci(r.test->p_two_sided) : "n/a",
                     std::isnan(r.p_corrected) ? "n/a" : detail::sci(r.p_corrected)});
  }
  const std::vector<std::string> header = {"Benchmark", "Setting", "Scaling Laws MAE",
                                           "All Features MAE", "p-val (raw)", "p-val (corrected)"};
  detail::write_json(ctx.out_path("compare.json"), comparisons_json(rows));
  io::write_file_atomic(ctx.out_path("compare.md"), detail::markdown_table(header, table));
  io::write_file_atomic(ctx.out_path("compare.csv"), detail::csv_table(header, table));
  os << detail::markdown_table(header, table);
  return 0;
}

inline int cmd_report(const Context& ctx, std::ostream& os) {
  std::vector<TaskComparison> rows;
  std::vector<std::string> unavailable;
  std::vector<TaskSpec> order = resolve_tasks(ctx);
  for (const auto& task : order) {
    try {
      rows.push_back(compare_task(ctx, task));
    } catch (const Error& e) {
      unavailable.push_back(task.key());
      *ctx.log << task.key() << ": unavailable (" << e.what() << ")\n";
    }
  }
  correct(rows, ctx.config.fdr_q);

  const std::vector<std::string> header = {"Benchmark",        "Setting",
                                           "Baseline MAE",     "Log-Linear MAE",
                                           "Scaling Laws MAE", "All Features MAE",
                                           "p-val (corrected)"};
  const std::vector<std::string> csv_header = {
      "task_id",        "shots",           "metric_kind",        "n_models",
      "baseline_mae",   "log_linear_mae",  "scaling_mae",        "scaling_ci95",
      "all_features_mae", "all_features_ci95", "p_raw",          "p_corrected",
      "significant",    "all_features",    "status"};
  std::vector<std::vector<std::string>> md;
  std::vector<std::vector<std::string>> csv;
  auto halfwidth = [](std::span<const double> v) {
    return v.size() >= 2 ? io::format_double(detail::display(stats::mean_ci95(v).halfwidth))
                         : std::string();
  };
  std::size_t next = 0;
  for (const auto& task : order) {
    const bool missing = std::find(unavailable.begin(), unavailable.end(), task.key()) != unavailable.end();
    if (missing) {
      md.push_back({task.task_id, detail::setting_label(task), "unavailable", "", "", "", ""});
      csv.push_back({task.task_id, std::to_string(task.shots), to_string(task.metric_kind), "", "", "",
                     "", "", "", "", "", "", "", "", "unavailable"});
      continue;
    }
    const auto& r = rows[next++];
    std::string p_cell = std::isnan(r.p_corrected) ? "n/a" : detail::sci(r.p_corrected);
    if (r.significant && stats::mean(r.all_mae) < stats::mean(r.scaling_mae)) p_cell += " *";
    md.push_back({task.task_id, detail::setting_label(task),
                  detail::display_mae(task, stats::mean(r.median_mae)),
                  detail::display_mae(task, stats::mean(r.log_linear_mae)),
                  ci_cell(task, r.scaling_mae), ci_cell(task, r.all_mae), p_cell});
    std::string features;
    for (const auto& f : r.all_features) features += (features.empty() ? "" : ";") + f;
    csv.push_back({task.task_id, std::to_string(task.shots), to_string(task.metric_kind),
                   std::to_string(r.n_models),
                   io::format_double(detail::display(stats::mean(r.median_mae))),
                   io::format_double(detail::display(stats::mean(r.log_linear_mae))),
                   io::format_double(detail::display(stats::mean(r.scaling_mae))),
                   halfwidth(r.scaling_mae),
                   io::format_double(detail::display(stats::mean(r.all_mae))),
                   halfwidth(r.all_mae),
                   r.test ? io::format_double(r.test->p_two_sided) : "",
                   std::isnan(r.p_corrected) ? "" : io::format_double(r.p_corrected),
                   r.significant ? "true" : "false", features, "ok"});
  }
  std::string doc = "# MAE comparison\n\n";
  doc += "Mean over " + std::to_string(eval_seeds(ctx).size()) +
         " seeds with 95% CI. Accuracy-type metrics in percent; Brier values x100. "
         "p-values: paired t-test over seeds, Benjamini-Hochberg across tasks.\n\n";
  doc += detail::markdown_table(header, md);
  io::write_file_atomic(ctx.out_path("report.md"), doc);
  io::write_file_atomic(ctx.out_path("report.csv"), detail::csv_table(csv_header, csv));
  detail::write_json(ctx.out_path("report.json"), comparisons_json(rows));
  os << doc;
  return unavailable.empty() ? 0 : 1;
}

inline int cmd_shap(const Context& ctx, std::ostream& os) {
  for (const auto& task : resolve_tasks(ctx)) {
    const auto ds = dataset_for(ctx, task);
    const auto features = shap_features_for(ctx, task);
    const auto ens = final_model(ctx, ds, features);
    const auto X = encode_features(ds, features);
    const auto m = shap::shap_matrix(ens, X);
    const auto ranking = shap::shap_summary_grouped(ens, X);
    const std::string stem = "shap-" + detail::sanitize(task.key());
    detail::write_json(ctx.out_path(stem + "-model.json"), gbt::to_json(ens));
    io::write_file_atomic(ctx.out_path(stem + "-values.csv"), shap::shap_values_csv(m, X));
    io::write_file_atomic(ctx.out_path(stem + "-ranking.csv"), shap::ranking_csv(ranking));
    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < ranking.size(); ++i) {
      rows.push_back({std::to_string(i + 1), ranking[i].feature, to_string(ranking[i].group),
                      io::format_double(ranking[i].mean_abs_phi)});
    }
    const std::string md =
        detail::markdown_table({"Rank", "Feature", "Group", "Mean |phi|"}, rows);
    io::write_file_atomic(ctx.out_path(stem + "-ranking.md"), md);
    os << "## " << task.key() << " (base value " << io::format_double(m.base_value) << ")\n" << md;
  }
  return 0;
}

inline int cmd_bias_audit(const Context& ctx, std::ostream& os) {
  std::vector<TaskSpec> tasks = resolve_tasks(ctx);
  if (ctx.opt.tasks.empty()) {
    std::erase_if(tasks, [](const TaskSpec& t) { return t.metric_kind != MetricKind::kAccuracy; });
  }
  std::vector<Dataset> datasets;
  for (const auto& t : tasks) datasets.push_back(dataset_for(ctx, t));
  const auto rows =
      metabias::bias_audit(datasets, ctx.config.audit_levels, ctx.config.weight_policy, ctx.opt.jobs);

  const std::vector<std::string> header = {"Feature", "Level", "k", "Chosen",
                                           "Effect (pp) [95% CI]", "Egger p"};
  const std::vector<std::string> csv_header = {"feature", "level", "k", "method",
                                               "effect_pp", "ci_low_pp", "ci_high_pp", "egger_p"};
  std::vector<std::vector<std::string>> md;
  std::vector<std::vector<std::string>> csv;
  json rows_json = json::array();
  for (const auto& row : rows) {
    rows_json.push_back(metabias::to_json(row));
    const std::string k = std::to_string(row.effects.size());
    if (!row.result) {
      md.push_back({row.level.feature, row.level.level, k, "unavailable", "", ""});
      csv.push_back({row.level.feature, row.level.level, k, "unavailable", "", "", "", ""});
      continue;
    }
    const auto& r = *row.result;
    auto pp = [](double v) {
      const std::string s = detail::fixed(100.0 * v, 1);
      return (v >= 0.0 ? "+" : "") + s;
    };
    md.push_back({row.level.feature, row.level.level, k, metabias::to_string(r.method_chosen),
                  pp(r.intercept) + " [" + pp(r.ci_low) + ", " + pp(r.ci_high) + "]",
                  detail::fixed(r.egger_p, 3)});
    csv.push_back({row.level.feature, row.level.level, k, metabias::to_string(r.method_chosen),
                   io::format_double(100.0 * r.intercept), io::format_double(100.0 * r.ci_low),
                   io::format_double(100.0 * r.ci_high), io::format_double(r.egger_p)});
  }
  json task_keys = json::array();
  for (const auto& t : tasks) task_keys.push_back(t.key());
  const json doc = {{"weight_policy", metabias::to_string(ctx.config.weight_policy)},
                    {"weight_description", metabias::describe(ctx.config.weight_policy)},
                    {"pet_peese_rule", "PEESE when the PET intercept has one-tailed p < 0.05"},
                    {"tasks", task_keys},
                    {"rows", rows_json}};
  detail::write_json(ctx.out_path("bias_audit.json"), doc);
  const std::string table = detail::markdown_table(header, md);
  io::write_file_atomic(ctx.out_path("bias_audit.md"),
                        "# Bias-corrected architecture effects\n\nWeights: " +
                            metabias::describe(ctx.config.weight_policy) + "\n\n" + table);
  io::write_file_atomic(ctx.out_path("bias_audit.csv"), detail::csv_table(csv_header, csv));
  os << table;
  return 0;
}

// Log-spaced (N, D) grid of the fitted power law plus the observed models.
inline std::string scaling_heatmap_csv(const Dataset& ds, const baselines::PowerLawFit& fit,
                                       int grid_points) {
  const auto pts = baselines::scale_points(ds);
  double n_lo = pts[0].N, n_hi = pts[0].N, d_lo = pts[0].D, d_hi = pts[0].D;
  for (const auto& p : pts) {
    n_lo = std::min(n_lo, p.N);
    n_hi = std::max(n_hi, p.N);
    d_lo = std::min(d_lo, p.D);
    d_hi = std::max(d_hi, p.D);
  }
  auto logspace = [&](double lo, double hi, int i) {
    if (grid_points == 1) return lo;
    const double t = static_cast<double>(i) / static_cast<double>(grid_points - 1);
    return std::pow(10.0, std::log10(lo) + t * (std::log10(hi) - std::log10(lo)));
  };
  std::string out = "kind,model_id,N,D,score\n";
  for (int i = 0; i < grid_points; ++i) {
    for (int k = 0; k < grid_points; ++k) {
      const double N = logspace(n_lo, n_hi, i);
      const double D = logspace(d_lo, d_hi, k);
      out += io::csv_line({"grid", "", io::format_double(N), io::format_double(D),
                           io::format_double(fit.predict(N, D))});
    }
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out += io::csv_line({"model", ds.models[i].model_id, io::format_double(pts[i].N),
                         io::format_double(pts[i].D), io::format_double(pts[i].target)});
  }
  return out;
}

inline std::string beeswarm_csv(const std::vector<shap::SummaryEntry>& entries,
                                const std::vector<std::string>& row_ids) {
  std::string out = "rank,feature,model_id,feature_value,phi\n";
  for (std::size_t e = 0; e < entries.size(); ++e) {
    for (std::size_t r = 0; r < entries[e].points.size(); ++r) {
      const auto& p = entries[e].points[r];
      out += io::csv_line({std::to_string(e + 1), entries[e].feature, row_ids[r],
                           std::isnan(p.feature_value) ? std::string() : io::format_double(p.feature_value),
                           io::format_double(p.phi)});
    }
  }
  return out;
}

inline int cmd_plot_data(const Context& ctx, std::ostream& os) {
  const std::string& kind = ctx.opt.plot_kind;
  if (kind != "scaling_heatmap" && kind != "shap_beeswarm" && kind != "shap_dependence") {
    throw ConfigError("unknown plot kind '" + kind + "'");
  }
  if (kind == "shap_dependence" && ctx.opt.feature.empty()) {
    throw ConfigError("shap_dependence needs --feature");
  }
  if (ctx.opt.grid_points < 1) throw ConfigError("--grid-points must be positive");
  for (const auto& task : resolve_tasks(ctx)) {
    const auto ds = dataset_for(ctx, task);
    const std::string stem = kind + "-" + detail::sanitize(task.key());
    std::string csv;
    if (kind == "scaling_heatmap") {
      const auto fit = baselines::fit_power_law(baselines::scale_points(ds), task.polarity);
      csv = scaling_heatmap_csv(ds, fit, ctx.opt.grid_points);
    } else {
      const auto features = shap_features_for(ctx, task);
      const auto ens = final_model(ctx, ds, features);
      const auto X = encode_features(ds, features);
      if (kind == "shap_beeswarm") {
        csv = beeswarm_csv(shap::shap_summary_grouped(ens, X), X.row_ids);
      } else {
        csv = shap::dependence_csv(shap::shap_dependence(ens, X, ctx.opt.feature));
      }
    }
    const auto path = ctx.out_path(kind == "shap_dependence"
                                       ? stem + "-" + detail::sanitize(ctx.opt.feature) + ".csv"
                                       : stem + ".csv");
    io::write_file_atomic(path, csv);
    os << "wrote " << path.string() << "\n";
  }
  return 0;
}

// Maps exceptions to exit codes around a command body.
inline int run_guarded(const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    for (std::size_t i = 0; i < e.violations().size() && i < 50; ++i) {
      const auto& v = e.violations()[i];
      err << "  " << to_string(v.kind) << " " << v.subject << " " << v.field << ": " << v.message
          << "\n";
    }
    return e.kind() == ErrorKind::kIo ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace perfpred::cli
