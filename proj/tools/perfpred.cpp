#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "perfpred/commands.hpp"

namespace cli = perfpred::cli;

int main(int argc, char** argv) {
  CLI::App app{"Performance prediction for language models from design features"};
  app.require_subcommand(1);
  cli::Options opt;

  auto add_inputs = [&](CLI::App* sub, bool scores) {
    sub->add_option("--registry", opt.registry, "Model registry (canonical JSON or CSV)")->required();
    sub->add_option("--registry-format", opt.registry_format, "json or csv")
        ->check(CLI::IsMember({"json", "csv"}));
    sub->add_option("--mapping", opt.mapping, "Column mapping JSON for CSV registries");
    auto* s = sub->add_option("--scores", opt.scores, "Scores CSV");
    if (scores) s->required();
    sub->add_option("--out", opt.out, "Output directory");
  };
  auto add_run = [&](CLI::App* sub) {
    sub->add_option("--task", opt.tasks, "Task id or task@shots (repeatable; default all)");
    sub->add_option("--seed", opt.seed, "Base seed");
    sub->add_option("--seeds", opt.n_seeds, "Number of evaluation seeds");
    sub->add_option("--jobs", opt.jobs, "Worker threads (0 = all cores)");
    sub->add_option("--config", opt.config, "JSON config: cv_plan, grid, seeds, weight_policy");
    sub->add_option("--features", opt.features, "Extra features beyond the scaling pair");
  };

  auto* validate = app.add_subcommand("validate", "Check a registry and scores file");
  add_inputs(validate, false);
  auto* encode = app.add_subcommand("encode", "Write encoded feature matrices");
  add_inputs(encode, true);
  add_run(encode);
  auto* fit_scaling = app.add_subcommand("fit-scaling", "Fit the power law per task");
  add_inputs(fit_scaling, true);
  add_run(fit_scaling);
  auto* cv = app.add_subcommand("cv", "Nested cross-validation for one predictor");
  add_inputs(cv, true);
  add_run(cv);
  cv->add_option("--predictor", opt.predictor, "median, log_linear, power_law or gbt")
      ->check(CLI::IsMember({"median", "log_linear", "power_law", "gbt"}));
  auto* select = app.add_subcommand("select", "Greedy forward feature selection");
  add_inputs(select, true);
  add_run(select);
  auto* compare = app.add_subcommand("compare", "Scaling-only vs all-features over seeds");
  add_inputs(compare, true);
  add_run(compare);
  auto* shap = app.add_subcommand("shap", "SHAP attributions of the final model");
  add_inputs(shap, true);
  add_run(shap);
  auto* bias = app.add_subcommand("bias-audit", "PET-PEESE audit of architecture effects");
  add_inputs(bias, true);
  add_run(bias);
  auto* report = app.add_subcommand("report", "MAE comparison table across tasks");
  add_inputs(report, true);
  add_run(report);
  auto* plot = app.add_subcommand("plot-data", "CSV data for plots");
  add_inputs(plot, true);
  add_run(plot);
  plot->add_option("--kind", opt.plot_kind, "scaling_heatmap, shap_beeswarm or shap_dependence")
      ->required();
  plot->add_option("--feature", opt.feature, "Feature for shap_dependence");
  plot->add_option("--grid-points", opt.grid_points, "Heatmap points per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return cli::run_guarded([&]() -> int {
    if (validate->parsed()) return cli::cmd_validate(opt, std::cout);
    const auto ctx = cli::load_context(opt);
    if (encode->parsed()) return cli::cmd_encode(ctx, std::cout);
    if (fit_scaling->parsed()) return cli::cmd_fit_scaling(ctx, std::cout);
    if (cv->parsed()) return cli::cmd_cv(ctx, std::cout);
    if (select->parsed()) return cli::cmd_select(ctx, std::cout);
    if (compare->parsed()) return cli::cmd_compare(ctx, std::cout);
    if (shap->parsed()) return cli::cmd_shap(ctx, std::cout);
    if (bias->parsed()) return cli::cmd_bias_audit(ctx, std::cout);
    if (report->parsed()) return cli::cmd_report(ctx, std::cout);
    if (plot->parsed()) return cli::cmd_plot_data(ctx, std::cout);
    return 2;
  });
}
