#include <cmath>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "perfpred/registry.hpp"
#include "perfpred/synthdata.hpp"

using namespace perfpred;
using nlohmann::json;

namespace {

json record(const std::string& id, double params = 1e9, double tokens = 300.0) {
  return {{"model_id", id},
          {"organization", "org"},
          {"arch", {{"total_params", params}, {"layer_norm", "rmsnorm"}, {"dimension", 2048}}},
          {"data", {{"total_tokens_billions", tokens}, {"pct_code", 10.0}, {"pct_web", 70.0}}},
          {"gen", {{"entropy_mean", 6.5}, {"domain_web_pct_mean", 55.0}}}};
}

bool has_violation(const LoadReport& r, ErrorKind kind, const std::string& field = "") {
  for (const auto& v : r.violations) {
    if (v.kind == kind && (field.empty() || v.field == field)) return true;
  }
  return false;
}

}  // namespace

TEST(Registry, EmptyFileHasNoRecords) {
  for (const char* text : {"", "  \n", "[]"}) {
    const auto r = check_registry_json(text);
    ASSERT_EQ(r.violations.size(), 1u);
    EXPECT_EQ(r.violations[0].message, "no records");
  }
}

TEST(Registry, MissingTokensNamesTheField) {
  json rec = record("m1");
  rec["data"].erase("total_tokens_billions");
  const auto r = check_registry_json(json::array({rec}).dump());
  EXPECT_TRUE(has_violation(r, ErrorKind::kValidation, "total_tokens_billions"));
  EXPECT_TRUE(r.registry.models.empty());
}

TEST(Registry, DuplicateIdsRejected) {
  const auto r = check_registry_json(json::array({record("a"), record("a")}).dump());
  EXPECT_TRUE(has_violation(r, ErrorKind::kDuplicateId));
  EXPECT_THROW(throw_on_violations(r), Error);
}

TEST(Registry, UnknownLevelAndGenFeatureReported) {
  json a = record("a");
  a["arch"]["layer_norm"] = "batchnorm";
  json b = record("b");
  b["gen"]["made_up_stat"] = 1.0;
  const auto r = check_registry_json(json::array({a, b}).dump());
  EXPECT_TRUE(has_violation(r, ErrorKind::kUnknownLevel, "layer_norm"));
  EXPECT_TRUE(has_violation(r, ErrorKind::kUnknownFeature, "made_up_stat"));
}

TEST(Registry, MultiValuedAndRangeValuesFlagged) {
  json a = record("a");
  a["data"]["total_tokens_billions"] = json::array({300, 400});
  json b = record("b");
  b["data"]["pct_code"] = 120.0;
  json c = record("c");
  c["data"]["pct_web"] = 95.0;  // 95 + 10 > 100.5
  json d = record("d");
  d["gen"]["entropy_mean"] = -1.0;
  const auto r = check_registry_json(json::array({a, b, c, d}).dump());
  EXPECT_TRUE(has_violation(r, ErrorKind::kValidation, "total_tokens_billions"));
  EXPECT_TRUE(has_violation(r, ErrorKind::kRange, "pct_code"));
  EXPECT_TRUE(has_violation(r, ErrorKind::kRange, "data"));
  EXPECT_TRUE(has_violation(r, ErrorKind::kRange, "entropy_mean"));
  EXPECT_TRUE(r.registry.models.empty());
}

TEST(Registry, ModelsWrapperAccepted) {
  const json doc = {{"models", json::array({record("a"), record("b")})}};
  const auto r = check_registry_json(doc.dump());
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.registry.models.size(), 2u);
}

TEST(Registry, CanonicalRoundTrip) {
  const auto data = synth::gen_registry(synth::default_spec(30), 4);
  const auto text = serialize_registry(data.registry);
  const auto back = throw_on_violations(check_registry_json(text));
  EXPECT_EQ(back, data.registry);
  EXPECT_EQ(serialize_registry(back), text);
}

TEST(Registry, CsvImportWithMapping) {
  const std::string csv =
      "Name,Params,Tokens (B),Attention,Code %\n"
      "m1,1000000000,300,\"local,full\",12.5\n"
      "m2,7e9,1000,gqa,\n";
  const json mapping = {{"columns",
                         {{"Name", "model_id"},
                          {"Params", "total_params"},
                          {"Tokens (B)", "total_tokens_billions"},
                          {"Attention", "attention_variant"},
                          {"Code %", "pct_code"}}},
                        {"values", {{"attention_variant", {{"local,full", "local_full"}}}}}};
  const auto r = check_registry_csv(csv, CsvMapping::from_json(mapping));
  ASSERT_TRUE(r.ok()) << r.violations.front().message;
  ASSERT_EQ(r.registry.models.size(), 2u);
  const auto& m1 = r.registry.models[0];
  EXPECT_EQ(m1.arch.level(Categorical::kAttentionVariant),
            level_index(Categorical::kAttentionVariant, "local_full"));
  EXPECT_DOUBLE_EQ(*m1.data.pct_code, 12.5);
  EXPECT_FALSE(r.registry.models[1].data.pct_code.has_value());
}

TEST(Scores, HeaderRangeDuplicateOrphan) {
  Registry reg;
  reg.models.push_back(throw_on_violations(check_registry_json(json::array({record("a")}).dump()))
                           .models[0]);
  const std::string text =
      "model_id,task_id,shots,metric_kind,value\n"
      "a,arc_challenge,25,accuracy,1.2\n"
      "a,xnli,0,brier,1.5\n"
      "a,xnli,0,brier,1.4\n"
      "ghost,xnli,0,brier,0.5\n";
  const auto r = check_scores_csv(text, &reg);
  ASSERT_EQ(r.violations.size(), 3u);
  EXPECT_EQ(r.violations[0].kind, ErrorKind::kRange);
  EXPECT_EQ(r.violations[0].subject, "a/arc_challenge@25");
  EXPECT_EQ(r.violations[1].kind, ErrorKind::kDuplicateId);
  EXPECT_EQ(r.violations[2].kind, ErrorKind::kOrphanModel);
  EXPECT_EQ(r.scores.size(), 1u);

  EXPECT_FALSE(check_scores_csv("id,task\n").ok());
}

TEST(Scores, RoundTrip) {
  const auto data = synth::gen_registry(synth::default_spec(10), 1);
  const auto text = serialize_scores(data.scores);
  const auto r = check_scores_csv(text, &data.registry);
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.scores, data.scores);
}

TEST(Join, ExcludesUnscoredAndChecksRange) {
  const auto reg = throw_on_violations(
      check_registry_json(json::array({record("a"), record("b"), record("c")}).dump()));
  const auto task = TaskSpec::make("arc_challenge", 25, MetricKind::kAccuracy);
  std::vector<ScoreRecord> scores = {{"a", "arc_challenge", 25, MetricKind::kAccuracy, 0.5},
                                     {"c", "arc_challenge", 25, MetricKind::kAccuracy, 0.6},
                                     {"b", "xnli", 0, MetricKind::kBrier, 0.4}};
  const auto ds = join_scores(reg, scores, task);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.models[0].model_id, "a");
  EXPECT_EQ(ds.models[1].model_id, "c");

  scores.push_back({"b", "arc_challenge", 25, MetricKind::kAccuracy, 1.2});
  try {
    join_scores(reg, scores, task);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRange);
  }
  scores.back() = {"zzz", "arc_challenge", 25, MetricKind::kAccuracy, 0.2};
  try {
    join_scores(reg, scores, task);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kOrphanModel);
  }
}

TEST(Encode, ScalingPairIsLog10) {
  const auto reg = throw_on_violations(check_registry_json(json::array({record("a", 1e9, 300)}).dump()));
  const std::vector<std::string> f = {"total_params", "total_tokens_billions"};
  const auto X = encode_features(std::span<const ModelRecord>(reg.models), f);
  ASSERT_EQ(X.cols(), 2u);
  EXPECT_EQ(X.columns[0].transform, Transform::kLog10);
  EXPECT_EQ(X.columns[1].transform, Transform::kLog10);
  EXPECT_DOUBLE_EQ(X.at(0, 0), 9.0);
  EXPECT_DOUBLE_EQ(X.at(0, 1), std::log10(300.0));
  EXPECT_EQ(X.columns[0].group, SourceGroup::kArch);
  EXPECT_EQ(X.columns[1].group, SourceGroup::kData);
}

TEST(Encode, OneHotInVocabOrderAndMissingMasked) {
  json a = record("a");
  json b = record("b");
  b["arch"].erase("layer_norm");
  const auto reg = throw_on_violations(check_registry_json(json::array({a, b}).dump()));
  const std::vector<std::string> f = {"layer_norm", "pct_books", "entropy_mean"};
  const auto X = encode_features(std::span<const ModelRecord>(reg.models), f);
  ASSERT_EQ(X.cols(), 5u);
  EXPECT_EQ(X.columns[0].name, "layer_norm=nonparametric");
  EXPECT_EQ(X.columns[1].name, "layer_norm=parametric");
  EXPECT_EQ(X.columns[2].name, "layer_norm=rmsnorm");
  EXPECT_EQ(X.columns[4].group, SourceGroup::kGen);
  EXPECT_EQ(X.at(0, 2), 1.0);
  EXPECT_EQ(X.at(0, 0) + X.at(0, 1) + X.at(0, 2), 1.0);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(X.is_missing(1, c));
  EXPECT_TRUE(X.is_missing(0, 3));
  EXPECT_FALSE(X.is_missing(0, 4));
}

TEST(Encode, UnknownFeatureRejected) {
  const auto reg = throw_on_violations(check_registry_json(json::array({record("a")}).dump()));
  const std::vector<std::string> f = {"not_a_feature"};
  try {
    encode_features(std::span<const ModelRecord>(reg.models), f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnknownFeature);
  }
}

TEST(Encode, EveryColumnTaggedAndLogOnlyOnScale) {
  const auto data = synth::gen_registry(synth::default_spec(20), 2);
  std::vector<std::string> all;
  for (const auto& f : feature_catalog()) all.push_back(f.name);
  const auto X = encode_features(std::span<const ModelRecord>(data.registry.models), all);
  for (const auto& c : X.columns) {
    const bool is_scale = c.feature == "total_params" || c.feature == "total_tokens_billions";
    EXPECT_EQ(c.transform == Transform::kLog10, is_scale) << c.name;
  }
  for (std::size_t r = 0; r < X.rows(); ++r) {
    for (const auto& v : enum_vocab()) {
      double active = 0.0;
      for (std::size_t c = 0; c < X.cols(); ++c) {
        if (X.columns[c].feature == v.feature && !X.is_missing(r, c)) active += X.at(r, c);
      }
      EXPECT_LE(active, 1.0);
    }
  }
  EXPECT_EQ(X, encode_features(std::span<const ModelRecord>(data.registry.models), all));
}

TEST(TaskCatalog, PolarityFollowsMetric) {
  for (const auto& t : task_catalog()) {
    EXPECT_EQ(t.polarity, t.metric_kind == MetricKind::kBrier ? Polarity::kLowerBetter
                                                               : Polarity::kHigherBetter);
  }
  EXPECT_EQ(task_catalog().size(), 13u);
}
