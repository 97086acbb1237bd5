#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "perfpred/baselines.hpp"
#include "perfpred/synthdata.hpp"

using namespace perfpred;

namespace {

synth::SynthSpec single_task(synth::TargetForm form, double noise) {
  synth::SynthSpec spec;
  spec.n_models = 60;
  auto r = synth::response_for("hellaswag", 10);
  r.form = form;
  r.log_linear = {-0.3, 0.04, 0.03};
  r.power_law = {1e7, 1e9, 0.1, 0.12};
  r.noise_sd = noise;
  spec.tasks.push_back(r);
  return spec;
}

}  // namespace

TEST(Synth, OutputPassesValidation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto data = synth::gen_registry(synth::default_spec(), seed);
    const auto reg = check_registry_json(serialize_registry(data.registry));
    EXPECT_TRUE(reg.ok()) << "seed " << seed << ": " << reg.violations.front().message;
    const auto scores = check_scores_csv(serialize_scores(data.scores), &reg.registry);
    EXPECT_TRUE(scores.ok()) << "seed " << seed;
    EXPECT_EQ(reg.registry.models.size(), 92u);
    EXPECT_EQ(data.scores.size(), 92u * task_catalog().size());
  }
}

TEST(Synth, DeterministicInSpecAndSeed) {
  const auto spec = synth::default_spec(40, 0.02);
  const auto a = synth::gen_registry(spec, 9);
  const auto b = synth::gen_registry(spec, 9);
  EXPECT_EQ(serialize_registry(a.registry), serialize_registry(b.registry));
  EXPECT_EQ(serialize_scores(a.scores), serialize_scores(b.scores));
  EXPECT_EQ(a.truth.dump(), b.truth.dump());
  EXPECT_NE(serialize_scores(a.scores), serialize_scores(synth::gen_registry(spec, 10).scores));
  EXPECT_EQ(a.truth.at("prng"), kPrngId);
}

TEST(Synth, TaskNoiseStreamsAreIndependent) {
  auto spec = synth::default_spec(30, 0.01);
  const auto a = synth::gen_registry(spec, 3);
  spec.tasks[1].noise_sd = 0.2;
  const auto b = synth::gen_registry(spec, 3);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(a.scores[i].value, b.scores[i].value);
  EXPECT_EQ(serialize_registry(a.registry), serialize_registry(b.registry));
}

TEST(Synth, NoiselessLogLinearIsRecovered) {
  const auto spec = single_task(synth::TargetForm::kLogLinear, 0.0);
  const auto data = synth::gen_registry(spec, 1);
  const auto ds = join_scores(data.registry, data.scores, spec.tasks[0].task);
  const auto fit = baselines::fit_log_linear(baselines::scale_points(ds));
  EXPECT_NEAR(fit.a, -0.3, 1e-9);
  EXPECT_NEAR(fit.b, 0.04, 1e-9);
  EXPECT_NEAR(fit.c, 0.03, 1e-9);
}

TEST(Synth, NoiselessPowerLawFitsWell) {
  const auto spec = single_task(synth::TargetForm::kPowerLaw, 0.0);
  const auto data = synth::gen_registry(spec, 2);
  EXPECT_EQ(data.truth.at("tasks")[0].at("clamped"), 0);
  const auto ds = join_scores(data.registry, data.scores, spec.tasks[0].task);
  const auto fit = baselines::fit_power_law(baselines::scale_points(ds), ds.task.polarity);
  EXPECT_GT(fit.r_squared, 0.999);
}

TEST(Synth, DefaultSpecStaysInsideMetricRange) {
  const auto data = synth::gen_registry(synth::default_spec(), 0);
  for (const auto& t : data.truth.at("tasks")) EXPECT_EQ(t.at("clamped"), 0);
}

TEST(Synth, RejectsBadSpecs) {
  auto spec = single_task(synth::TargetForm::kLogLinear, 0.0);
  spec.missing_rate = 1.0;
  EXPECT_THROW(synth::gen_registry(spec, 0), Error);
  spec = single_task(synth::TargetForm::kLogLinear, 0.0);
  spec.tasks[0].numeric_effects["no_such_feature"] = 1.0;
  EXPECT_THROW(synth::gen_registry(spec, 0), Error);
  spec = single_task(synth::TargetForm::kLogLinear, 0.0);
  spec.tasks[0].level_effects.push_back({"layer_norm", "batchnorm", 0.1});
  EXPECT_THROW(synth::gen_registry(spec, 0), Error);
  EXPECT_THROW(synth::response_for("hellaswag", 3), Error);
}
