#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "perfpred/error.hpp"
#include "perfpred/io.hpp"

namespace perfpred {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabularies
// ---------------------------------------------------------------------------

enum class Categorical : std::uint8_t {
  kPositionalEmbeddings,
  kLayerNorm,
  kAttentionVariant,
  kBiases,
  kBlockType,
  kActivation,
};
inline constexpr std::size_t kNumCategorical = 6;

struct Vocab {
  std::string_view feature;
  std::vector<std::string_view> levels;
};

// Level order here fixes one-hot column order.
inline const std::array<Vocab, kNumCategorical>& enum_vocab() {
  static const std::array<Vocab, kNumCategorical> vocab = {{
      {"positional_embeddings", {"nonparametric", "learned", "rope", "alibi"}},
      {"layer_norm", {"nonparametric", "parametric", "rmsnorm"}},
      {"attention_variant", {"full", "local", "local_full", "mqa", "gqa"}},
      {"biases", {"none", "attn_only", "ln_only"}},
      {"block_type", {"sequential", "parallel"}},
      {"activation", {"relu", "gelu", "silu", "swiglu"}},
  }};
  return vocab;
}

inline std::optional<Categorical> find_categorical(std::string_view feature) {
  const auto& vocab = enum_vocab();
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (vocab[i].feature == feature) return static_cast<Categorical>(i);
  }
  return std::nullopt;
}

inline std::optional<int> level_index(Categorical c, std::string_view level) {
  const auto& levels = enum_vocab()[static_cast<std::size_t>(c)].levels;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] == level) return static_cast<int>(i);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct ArchFeatures {
  double total_params = 0.0;
  std::optional<double> dimension;
  std::optional<double> num_heads;
  std::optional<double> mlp_ratio;
  std::optional<double> sequence_length;
  std::optional<double> batch_instances;
  // Level index into enum_vocab(), indexed by Categorical.
  std::array<std::optional<int>, kNumCategorical> categorical{};

  std::optional<int>& level(Categorical c) { return categorical[static_cast<std::size_t>(c)]; }
  const std::optional<int>& level(Categorical c) const {
    return categorical[static_cast<std::size_t>(c)];
  }
  bool operator==(const ArchFeatures&) const = default;
};

struct DataFeatures {
  double total_tokens_billions = 0.0;
  std::optional<double> pct_web;
  std::optional<double> pct_code;
  std::optional<double> pct_books;
  std::optional<double> pct_reference;
  std::optional<double> pct_academic;
  std::optional<double> pct_english;
  bool operator==(const DataFeatures&) const = default;
};

// Free-generation statistics, keyed by documented feature name.
using GenFeatures = std::map<std::string, double, std::less<>>;

struct ModelRecord {
  std::string model_id;
  std::string organization;
  ArchFeatures arch;
  DataFeatures data;
  GenFeatures gen;
  std::string provenance;
  bool operator==(const ModelRecord&) const = default;
};

struct Registry {
  std::vector<ModelRecord> models;

  const ModelRecord* find(std::string_view id) const {
    for (const auto& m : models) {
      if (m.model_id == id) return &m;
    }
    return nullptr;
  }
  bool operator==(const Registry&) const = default;
};

enum class MetricKind { kAccuracy, kBrier, kPassAt1 };
enum class Polarity { kHigherBetter, kLowerBetter };

inline const char* to_string(MetricKind k) {
  switch (k) {
    case MetricKind::kAccuracy: return "accuracy";
    case MetricKind::kBrier: return "brier";
    case MetricKind::kPassAt1: return "pass_at_1";
  }
  return "accuracy";
}

inline std::optional<MetricKind> parse_metric_kind(std::string_view s) {
  if (s == "accuracy") return MetricKind::kAccuracy;
  if (s == "brier") return MetricKind::kBrier;
  if (s == "pass_at_1" || s == "pass@1") return MetricKind::kPassAt1;
  return std::nullopt;
}

inline Polarity polarity_of(MetricKind k) {
  return k == MetricKind::kBrier ? Polarity::kLowerBetter : Polarity::kHigherBetter;
}

inline double metric_upper_bound(MetricKind k) { return k == MetricKind::kBrier ? 2.0 : 1.0; }

struct TaskSpec {
  std::string task_id;
  int shots = 0;
  MetricKind metric_kind = MetricKind::kAccuracy;
  Polarity polarity = Polarity::kHigherBetter;
  std::optional<int> n_items;

  static TaskSpec make(std::string id, int shots, MetricKind kind,
                       std::optional<int> n_items = std::nullopt) {
    return TaskSpec{std::move(id), shots, kind, polarity_of(kind), n_items};
  }
  std::string key() const { return task_id + "@" + std::to_string(shots); }
  bool operator==(const TaskSpec&) const = default;
};

struct ScoreRecord {
  std::string model_id;
  std::string task_id;
  int shots = 0;
  MetricKind metric_kind = MetricKind::kAccuracy;
  double value = 0.0;
  bool operator==(const ScoreRecord&) const = default;
};

// Benchmarks with their approximate item counts.
inline const std::vector<TaskSpec>& task_catalog() {
  static const std::vector<TaskSpec> tasks = {
      TaskSpec::make("arc_challenge", 25, MetricKind::kAccuracy, 2600),
      TaskSpec::make("gsm8k", 5, MetricKind::kAccuracy, 8000),
      TaskSpec::make("hellaswag", 10, MetricKind::kAccuracy, 70000),
      TaskSpec::make("humaneval", 0, MetricKind::kPassAt1, 164),
      TaskSpec::make("lambada", 0, MetricKind::kAccuracy, 10000),
      TaskSpec::make("mmlu", 0, MetricKind::kAccuracy, 2850),
      TaskSpec::make("mmlu", 5, MetricKind::kAccuracy, 2850),
      TaskSpec::make("truthfulqa", 0, MetricKind::kAccuracy, 817),
      TaskSpec::make("winogrande", 5, MetricKind::kAccuracy, 44000),
      TaskSpec::make("xnli", 0, MetricKind::kBrier, 2500),
      TaskSpec::make("anli", 0, MetricKind::kBrier, 163000),
      TaskSpec::make("mathqa", 0, MetricKind::kBrier, 37000),
      TaskSpec::make("logiqa2", 0, MetricKind::kBrier, 8000),
  };
  return tasks;
}

// ---------------------------------------------------------------------------
// Feature catalog
// ---------------------------------------------------------------------------

enum class SourceGroup { kArch, kData, kGen };
enum class FeatureKind { kLogCount, kNumeric, kCategorical };
enum class GenRange { kNone, kPercent, kNonNegative };

inline const char* to_string(SourceGroup g) {
  switch (g) {
    case SourceGroup::kArch: return "A";
    case SourceGroup::kData: return "D";
    case SourceGroup::kGen: return "F";
  }
  return "?";
}

struct FeatureDef {
  std::string name;
  SourceGroup group;
  FeatureKind kind;
  GenRange gen_range = GenRange::kNone;
};

inline const std::vector<std::string>& gen_feature_names_percent() {
  static const std::vector<std::string> names = {
      "domain_academic_pct_mean", "domain_books_pct_mean",     "domain_code_pct_mean",
      "domain_reference_pct_mean", "domain_specialized_pct_mean", "domain_web_pct_mean",
      "pct_english_mean",
  };
  return names;
}

inline const std::vector<std::string>& gen_feature_names_nonneg() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out = {
        "edu_classifier_mean",   "edu_classifier_std",     "entropy_mean",
        "question_words_ratio",  "imperative_words_ratio", "conjunctions_ratio",
        "instruction_words_ratio", "numbers_ratio",        "content_function_ratio",
    };
    const std::vector<std::string> per_generation = {
        "char_len",
        "num_tokens",
        "num_sentences",
        "num_words",
        "words_per_sentence",
        "const_parse_max_depth",
        "const_parse_avg_depth",
        "const_parse_word_depth",
        "const_parse_word_depth_var",
        "dep_parse_dep_head_dist_90th",
        "dep_parse_dep_head_dist_max",
        "dep_parse_dep_head_dist_median",
        "dep_parse_dep_root_dist_max",
        "dep_parse_dep_root_dist_mean",
        "dep_parse_dep_root_dist_median",
        "ttr",
        "unique_tokens",
    };
    for (const auto& base : per_generation) {
      out.push_back(base + "_mean");
      out.push_back(base + "_std");
    }
    return out;
  }();
  return names;
}

inline const std::vector<FeatureDef>& feature_catalog() {
  static const std::vector<FeatureDef> catalog = [] {
    std::vector<FeatureDef> out = {
        {"total_params", SourceGroup::kArch, FeatureKind::kLogCount},
        {"dimension", SourceGroup::kArch, FeatureKind::kNumeric},
        {"num_heads", SourceGroup::kArch, FeatureKind::kNumeric},
        {"mlp_ratio", SourceGroup::kArch, FeatureKind::kNumeric},
        {"sequence_length", SourceGroup::kArch, FeatureKind::kNumeric},
        {"batch_instances", SourceGroup::kArch, FeatureKind::kNumeric},
    };
    for (const auto& v : enum_vocab()) {
      out.push_back({std::string(v.feature), SourceGroup::kArch, FeatureKind::kCategorical});
    }
    out.push_back({"total_tokens_billions", SourceGroup::kData, FeatureKind::kLogCount});
    for (const char* pct : {"pct_web", "pct_code", "pct_books", "pct_reference", "pct_academic",
                            "pct_english"}) {
      out.push_back({pct, SourceGroup::kData, FeatureKind::kNumeric});
    }
    for (const auto& n : gen_feature_names_percent()) {
      out.push_back({n, SourceGroup::kGen, FeatureKind::kNumeric, GenRange::kPercent});
    }
    for (const auto& n : gen_feature_names_nonneg()) {
      out.push_back({n, SourceGroup::kGen, FeatureKind::kNumeric, GenRange::kNonNegative});
    }
    return out;
  }();
  return catalog;
}

inline const FeatureDef* find_feature(std::string_view name) {
  for (const auto& f : feature_catalog()) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

inline const std::array<std::string_view, 2>& scaling_feature_names() {
  static const std::array<std::string_view, 2> names = {"total_params", "total_tokens_billions"};
  return names;
}

// Raw numeric value of a non-categorical feature (before any transform).
inline std::optional<double> numeric_value(const ModelRecord& m, std::string_view name) {
  const auto& a = m.arch;
  const auto& d = m.data;
  if (name == "total_params") return a.total_params;
  if (name == "dimension") return a.dimension;
  if (name == "num_heads") return a.num_heads;
  if (name == "mlp_ratio") return a.mlp_ratio;
  if (name == "sequence_length") return a.sequence_length;
  if (name == "batch_instances") return a.batch_instances;
  if (name == "total_tokens_billions") return d.total_tokens_billions;
  if (name == "pct_web") return d.pct_web;
  if (name == "pct_code") return d.pct_code;
  if (name == "pct_books") return d.pct_books;
  if (name == "pct_reference") return d.pct_reference;
  if (name == "pct_academic") return d.pct_academic;
  if (name == "pct_english") return d.pct_english;
  if (auto it = m.gen.find(name); it != m.gen.end()) return it->second;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Loading and validation
// ---------------------------------------------------------------------------

namespace detail {

struct RecordParser {
  std::vector<Violation>& violations;
  std::string subject;

  void flag(ErrorKind kind, std::string field, std::string message) {
    violations.push_back({kind, subject, std::move(field), std::move(message)});
  }

  // Single numeric values only; arrays, ranges and text are flagged.
  std::optional<double> number(const json& obj, const std::string& key, bool required) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
      if (required) flag(ErrorKind::kValidation, key, "required field '" + key + "' is missing");
      return std::nullopt;
    }
    if (!it->is_number()) {
      flag(ErrorKind::kValidation, key,
           "field '" + key + "' must be a single number, got " + it->dump());
      return std::nullopt;
    }
    const double v = it->get<double>();
    if (!std::isfinite(v)) {
      flag(ErrorKind::kValidation, key, "field '" + key + "' is not finite");
      return std::nullopt;
    }
    return v;
  }

  std::optional<double> positive(const json& obj, const std::string& key, bool required) {
    auto v = number(obj, key, required);
    if (v && *v <= 0.0) {
      flag(ErrorKind::kRange, key, "field '" + key + "' must be > 0");
      return std::nullopt;
    }
    return v;
  }

  std::optional<double> percent(const json& obj, const std::string& key) {
    auto v = number(obj, key, false);
    if (v && (*v < 0.0 || *v > 100.0)) {
      flag(ErrorKind::kRange, key, "field '" + key + "' must lie in [0,100]");
      return std::nullopt;
    }
    return v;
  }

  void reject_unknown_keys(const json& obj, const std::set<std::string>& known,
                           const std::string& section) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (!known.count(it.key())) {
        flag(ErrorKind::kUnknownFeature, it.key(),
             "unknown " + section + " feature '" + it.key() + "'");
      }
    }
  }
};

inline std::optional<ModelRecord> parse_record(const json& obj, std::vector<Violation>& out,
                                               std::size_t index) {
  RecordParser p{out, "#" + std::to_string(index)};
  if (!obj.is_object()) {
    p.flag(ErrorKind::kParse, "", "record is not a JSON object");
    return std::nullopt;
  }
  const std::size_t before = out.size();
  ModelRecord m;
  auto id = obj.find("model_id");
  if (id == obj.end() || !id->is_string() || id->get<std::string>().empty()) {
    p.flag(ErrorKind::kValidation, "model_id", "required field 'model_id' is missing");
    return std::nullopt;
  }
  m.model_id = id->get<std::string>();
  p.subject = m.model_id;
  if (auto it = obj.find("organization"); it != obj.end() && it->is_string()) {
    m.organization = it->get<std::string>();
  }
  if (auto it = obj.find("provenance"); it != obj.end() && it->is_string()) {
    m.provenance = it->get<std::string>();
  }
  p.reject_unknown_keys(obj, {"model_id", "organization", "arch", "data", "gen", "provenance"},
                        "record");

  static const json kEmpty = json::object();
  const json& arch = obj.contains("arch") ? obj["arch"] : kEmpty;
  const json& data = obj.contains("data") ? obj["data"] : kEmpty;
  const json& gen = obj.contains("gen") && !obj["gen"].is_null() ? obj["gen"] : kEmpty;
  if (!arch.is_object() || !data.is_object() || !gen.is_object()) {
    p.flag(ErrorKind::kParse, "", "arch, data and gen must be JSON objects");
    return std::nullopt;
  }

  std::set<std::string> arch_keys = {"total_params", "dimension", "num_heads", "mlp_ratio",
                                     "sequence_length", "batch_instances"};
  if (auto v = p.positive(arch, "total_params", true)) m.arch.total_params = *v;
  m.arch.dimension = p.positive(arch, "dimension", false);
  m.arch.num_heads = p.positive(arch, "num_heads", false);
  m.arch.mlp_ratio = p.positive(arch, "mlp_ratio", false);
  m.arch.sequence_length = p.positive(arch, "sequence_length", false);
  m.arch.batch_instances = p.positive(arch, "batch_instances", false);
  for (std::size_t c = 0; c < kNumCategorical; ++c) {
    const auto cat = static_cast<Categorical>(c);
    const std::string key(enum_vocab()[c].feature);
    arch_keys.insert(key);
    auto it = arch.find(key);
    if (it == arch.end() || it->is_null()) continue;
    if (!it->is_string()) {
      p.flag(ErrorKind::kUnknownLevel, key, "field '" + key + "' must be a single level string");
      continue;
    }
    const auto level = level_index(cat, it->get<std::string>());
    if (!level) {
      p.flag(ErrorKind::kUnknownLevel, key,
             "unknown level '" + it->get<std::string>() + "' for '" + key + "'");
      continue;
    }
    m.arch.level(cat) = *level;
  }
  p.reject_unknown_keys(arch, arch_keys, "arch");

  if (auto v = p.positive(data, "total_tokens_billions", true)) {
    m.data.total_tokens_billions = *v;
  }
  m.data.pct_web = p.percent(data, "pct_web");
  m.data.pct_code = p.percent(data, "pct_code");
  m.data.pct_books = p.percent(data, "pct_books");
  m.data.pct_reference = p.percent(data, "pct_reference");
  m.data.pct_academic = p.percent(data, "pct_academic");
  m.data.pct_english = p.percent(data, "pct_english");
  p.reject_unknown_keys(data,
                        {"total_tokens_billions", "pct_web", "pct_code", "pct_books",
                         "pct_reference", "pct_academic", "pct_english"},
                        "data");
  double domain_sum = 0.0;
  for (const auto& v : {m.data.pct_web, m.data.pct_code, m.data.pct_books, m.data.pct_reference,
                        m.data.pct_academic}) {
    if (v) domain_sum += *v;
  }
  if (domain_sum > 100.5) {
    p.flag(ErrorKind::kRange, "data", "domain percentages sum to more than 100");
  }

  for (auto it = gen.begin(); it != gen.end(); ++it) {
    const FeatureDef* def = find_feature(it.key());
    if (!def || def->group != SourceGroup::kGen) {
      p.flag(ErrorKind::kUnknownFeature, it.key(), "unknown gen feature '" + it.key() + "'");
      continue;
    }
    std::optional<double> v = def->gen_range == GenRange::kPercent
                                  ? p.percent(gen, it.key())
                                  : p.number(gen, it.key(), false);
    if (v && def->gen_range == GenRange::kNonNegative && *v < 0.0) {
      p.flag(ErrorKind::kRange, it.key(), "field '" + it.key() + "' must be >= 0");
      continue;
    }
    if (v) m.gen.emplace(it.key(), *v);
  }

  if (out.size() != before) return std::nullopt;
  return m;
}

}  // namespace detail

struct LoadReport {
  Registry registry;  // records that passed validation
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

inline LoadReport check_registry_json(std::string_view text) {
  LoadReport report;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
      report.violations.push_back({ErrorKind::kParse, "", "", "no records"});
    } else {
      report.violations.push_back({ErrorKind::kParse, "", "", e.what()});
    }
    return report;
  }
  if (doc.is_object() && doc.contains("models")) doc = doc["models"];
  if (!doc.is_array()) {
    report.violations.push_back({ErrorKind::kParse, "", "", "registry must be a JSON array"});
    return report;
  }
  if (doc.empty()) {
    report.violations.push_back({ErrorKind::kParse, "", "", "no records"});
    return report;
  }
  std::set<std::string, std::less<>> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    auto rec = detail::parse_record(doc[i], report.violations, i);
    if (!rec) continue;
    if (!seen.insert(rec->model_id).second) {
      report.violations.push_back(
          {ErrorKind::kDuplicateId, rec->model_id, "model_id", "duplicate model_id"});
      continue;
    }
    report.registry.models.push_back(std::move(*rec));
  }
  return report;
}

// External column name -> canonical name, plus optional per-feature value
// rewrites, e.g. {"columns": {"Params": "total_params"},
//                 "values": {"attention_variant": {"local,full": "local_full"}}}.
struct CsvMapping {
  std::map<std::string, std::string> columns;
  std::map<std::string, std::map<std::string, std::string>> values;

  static CsvMapping from_json(const json& j) {
    CsvMapping m;
    if (!j.is_object() || !j.contains("columns") || !j["columns"].is_object()) {
      throw Error(ErrorKind::kParse, "CSV mapping needs a 'columns' object");
    }
    for (auto it = j["columns"].begin(); it != j["columns"].end(); ++it) {
      m.columns[it.key()] = it.value().get<std::string>();
    }
    if (j.contains("values")) {
      for (auto it = j["values"].begin(); it != j["values"].end(); ++it) {
        for (auto v = it.value().begin(); v != it.value().end(); ++v) {
          m.values[it.key()][v.key()] = v.value().get<std::string>();
        }
      }
    }
    return m;
  }
};

inline LoadReport check_registry_csv(std::string_view text, const CsvMapping& mapping) {
  LoadReport report;
  const auto rows = io::parse_csv(text);
  if (rows.size() < 2) {
    report.violations.push_back({ErrorKind::kParse, "", "", "no records"});
    return report;
  }
  const auto& header = rows.front();
  std::vector<std::string> canonical(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    auto it = mapping.columns.find(header[c]);
    canonical[c] = it == mapping.columns.end() ? std::string() : it->second;
  }
  json records = json::array();
  for (std::size_t r = 1; r < rows.size(); ++r) {
    json rec = {{"arch", json::object()}, {"data", json::object()}, {"gen", json::object()}};
    for (std::size_t c = 0; c < header.size() && c < rows[r].size(); ++c) {
      const std::string& name = canonical[c];
      std::string cell = rows[r][c];
      if (name.empty() || cell.empty()) continue;
      if (name == "model_id" || name == "organization" || name == "provenance") {
        rec[name] = cell;
        continue;
      }
      const FeatureDef* def = find_feature(name);
      if (!def) {
        throw Error(ErrorKind::kUnknownFeature, "mapping targets unknown feature '" + name + "'");
      }
      const char* section = def->group == SourceGroup::kArch   ? "arch"
                            : def->group == SourceGroup::kData ? "data"
                                                               : "gen";
      if (def->kind == FeatureKind::kCategorical) {
        if (auto vm = mapping.values.find(name); vm != mapping.values.end()) {
          if (auto hit = vm->second.find(cell); hit != vm->second.end()) cell = hit->second;
        }
        rec[section][name] = cell;
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') {
        rec[section][name] = cell;  // non-numeric text: flagged by the record parser
      } else {
        rec[section][name] = v;
      }
    }
    records.push_back(std::move(rec));
  }
  return check_registry_json(records.dump());
}

enum class RegistryFormat { kCanonicalJson, kCsvWithMapping };

inline Registry throw_on_violations(LoadReport report) {
  if (!report.ok()) {
    const auto& first = report.violations.front();
    std::string what = first.subject.empty() ? first.message : first.subject + ": " + first.message;
    if (report.violations.size() > 1) {
      what += " (+" + std::to_string(report.violations.size() - 1) + " more)";
    }
    throw Error(first.kind, what, std::move(report.violations));
  }
  return std::move(report.registry);
}

inline Registry load_registry(const std::filesystem::path& path,
                              RegistryFormat format = RegistryFormat::kCanonicalJson,
                              const std::filesystem::path& mapping_path = {}) {
  const std::string text = io::read_file(path);
  if (format == RegistryFormat::kCanonicalJson) {
    return throw_on_violations(check_registry_json(text));
  }
  if (mapping_path.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "CSV registry import needs a mapping file");
  }
  const auto mapping = CsvMapping::from_json(json::parse(io::read_file(mapping_path)));
  return throw_on_violations(check_registry_csv(text, mapping));
}

inline json to_json(const ModelRecord& m) {
  json arch = {{"total_params", m.arch.total_params}};
  auto put = [](json& obj, const char* key, const std::optional<double>& v) {
    if (v) obj[key] = *v;
  };
  put(arch, "dimension", m.arch.dimension);
  put(arch, "num_heads", m.arch.num_heads);
  put(arch, "mlp_ratio", m.arch.mlp_ratio);
  put(arch, "sequence_length", m.arch.sequence_length);
  put(arch, "batch_instances", m.arch.batch_instances);
  for (std::size_t c = 0; c < kNumCategorical; ++c) {
    if (const auto& lv = m.arch.categorical[c]) {
      arch[std::string(enum_vocab()[c].feature)] =
          std::string(enum_vocab()[c].levels[static_cast<std::size_t>(*lv)]);
    }
  }
  json data = {{"total_tokens_billions", m.data.total_tokens_billions}};
  put(data, "pct_web", m.data.pct_web);
  put(data, "pct_code", m.data.pct_code);
  put(data, "pct_books", m.data.pct_books);
  put(data, "pct_reference", m.data.pct_reference);
  put(data, "pct_academic", m.data.pct_academic);
  put(data, "pct_english", m.data.pct_english);
  json gen = json::object();
  for (const auto& [k, v] : m.gen) gen[k] = v;
  json out = {{"model_id", m.model_id}, {"organization", m.organization},
              {"arch", arch},           {"data", data},
              {"gen", gen}};
  if (!m.provenance.empty()) out["provenance"] = m.provenance;
  return out;
}

inline std::string serialize_registry(const Registry& r) {
  json arr = json::array();
  for (const auto& m : r.models) arr.push_back(to_json(m));
  return arr.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

struct ScoreReport {
  std::vector<ScoreRecord> scores;
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

inline std::string score_subject(const ScoreRecord& s) {
  return s.model_id + "/" + s.task_id + "@" + std::to_string(s.shots);
}

// Parses `model_id,task_id,shots,metric_kind,value`. Range checks use the
// row's metric kind; `registry`, when given, also flags orphan model ids.
inline ScoreReport check_scores_csv(std::string_view text, const Registry* registry = nullptr) {
  ScoreReport report;
  const auto rows = io::parse_csv(text);
  const std::vector<std::string> expected = {"model_id", "task_id", "shots", "metric_kind",
                                             "value"};
  if (rows.empty() || rows.front() != expected) {
    report.violations.push_back(
        {ErrorKind::kParse, "", "", "scores header must be model_id,task_id,shots,metric_kind,value"});
    return report;
  }
  std::set<std::string> seen;
  std::map<std::string, MetricKind> task_kind;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string line = "line " + std::to_string(r + 1);
    if (row.size() != 5) {
      report.violations.push_back({ErrorKind::kParse, line, "", "expected 5 fields"});
      continue;
    }
    ScoreRecord s;
    s.model_id = row[0];
    s.task_id = row[1];
    char* end = nullptr;
    const long shots = std::strtol(row[2].c_str(), &end, 10);
    const auto kind = parse_metric_kind(row[3]);
    char* vend = nullptr;
    const double value = std::strtod(row[4].c_str(), &vend);
    if (end == row[2].c_str() || *end != '\0' || shots < 0) {
      report.violations.push_back({ErrorKind::kParse, line, "shots", "bad shots value"});
      continue;
    }
    if (!kind) {
      report.violations.push_back(
          {ErrorKind::kParse, line, "metric_kind", "unknown metric kind '" + row[3] + "'"});
      continue;
    }
    if (vend == row[4].c_str() || *vend != '\0' || !std::isfinite(value)) {
      report.violations.push_back({ErrorKind::kParse, line, "value", "value is not a number"});
      continue;
    }
    s.shots = static_cast<int>(shots);
    s.metric_kind = *kind;
    s.value = value;
    const std::string subject = score_subject(s);
    bool bad = false;
    if (value < 0.0 || value > metric_upper_bound(s.metric_kind)) {
      report.violations.push_back({ErrorKind::kRange, subject, "value",
                                   std::string(to_string(s.metric_kind)) + " value " + row[4] +
                                       " out of range"});
      bad = true;
    }
    if (!seen.insert(subject).second) {
      report.violations.push_back({ErrorKind::kDuplicateId, subject, "", "duplicate score"});
      bad = true;
    }
    const std::string tkey = s.task_id + "@" + std::to_string(s.shots);
    if (auto [it, fresh] = task_kind.emplace(tkey, s.metric_kind); !fresh && it->second != s.metric_kind) {
      report.violations.push_back(
          {ErrorKind::kValidation, subject, "metric_kind", "metric kind differs across rows of task"});
      bad = true;
    }
    if (registry && !registry->find(s.model_id)) {
      report.violations.push_back(
          {ErrorKind::kOrphanModel, subject, "model_id", "model not in registry"});
      bad = true;
    }
    if (!bad) report.scores.push_back(std::move(s));
  }
  return report;
}

inline std::vector<ScoreRecord> load_scores(const std::filesystem::path& path) {
  auto report = check_scores_csv(io::read_file(path));
  if (!report.ok()) {
    const auto& first = report.violations.front();
    throw Error(first.kind, first.subject + ": " + first.message, std::move(report.violations));
  }
  return std::move(report.scores);
}

inline std::string serialize_scores(std::span<const ScoreRecord> scores) {
  std::string out = "model_id,task_id,shots,metric_kind,value\n";
  for (const auto& s : scores) {
    out += io::csv_line({s.model_id, s.task_id, std::to_string(s.shots), to_string(s.metric_kind),
                         io::format_double(s.value)});
  }
  return out;
}

// Distinct (task_id, shots) settings present in `scores`, in first-seen order.
// n_items comes from the task catalog when the task is known.
inline std::vector<TaskSpec> tasks_in(std::span<const ScoreRecord> scores) {
  std::vector<TaskSpec> out;
  for (const auto& s : scores) {
    const bool known = std::any_of(out.begin(), out.end(), [&](const TaskSpec& t) {
      return t.task_id == s.task_id && t.shots == s.shots;
    });
    if (known) continue;
    TaskSpec t = TaskSpec::make(s.task_id, s.shots, s.metric_kind);
    for (const auto& c : task_catalog()) {
      if (c.task_id == s.task_id && c.shots == s.shots) t.n_items = c.n_items;
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets and encoding
// ---------------------------------------------------------------------------

struct Dataset {
  TaskSpec task;
  std::vector<ModelRecord> models;
  std::vector<double> targets;

  std::size_t size() const { return models.size(); }
};

inline Dataset join_scores(const Registry& registry, std::span<const ScoreRecord> scores,
                           const TaskSpec& task) {
  std::map<std::string, double, std::less<>> by_model;
  for (const auto& s : scores) {
    if (!registry.find(s.model_id)) {
      throw Error(ErrorKind::kOrphanModel, "score for unknown model '" + s.model_id + "'");
    }
    if (s.task_id != task.task_id || s.shots != task.shots) continue;
    if (s.value < 0.0 || s.value > metric_upper_bound(task.metric_kind)) {
      throw Error(ErrorKind::kRange, score_subject(s) + ": value out of range for " +
                                         to_string(task.metric_kind));
    }
    by_model[s.model_id] = s.value;
  }
  Dataset ds{task, {}, {}};
  for (const auto& m : registry.models) {
    if (auto it = by_model.find(m.model_id); it != by_model.end()) {
      ds.models.push_back(m);
      ds.targets.push_back(it->second);
    }
  }
  return ds;
}

enum class Transform { kIdentity, kLog10, kOneHot };

inline const char* to_string(Transform t) {
  switch (t) {
    case Transform::kIdentity: return "identity";
    case Transform::kLog10: return "log10";
    case Transform::kOneHot: return "onehot";
  }
  return "?";
}

struct FeatureColumn {
  std::string name;     // "layer_norm=rmsnorm" for one-hot columns
  std::string feature;  // originating feature name
  SourceGroup group = SourceGroup::kArch;
  Transform transform = Transform::kIdentity;
  std::string level;  // one-hot level, empty otherwise
  bool operator==(const FeatureColumn&) const = default;
};

struct FeatureMatrix {
  std::vector<std::string> row_ids;
  std::vector<FeatureColumn> columns;
  std::vector<double> values;          // row-major; NaN where missing
  std::vector<std::uint8_t> missing;   // row-major mask

  std::size_t rows() const { return row_ids.size(); }
  std::size_t cols() const { return columns.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  bool is_missing(std::size_t r, std::size_t c) const { return missing[r * cols() + c] != 0; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols(), cols()};
  }
  std::span<const std::uint8_t> row_mask(std::size_t r) const {
    return {missing.data() + r * cols(), cols()};
  }

  std::optional<std::size_t> column_index(std::string_view name) const {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (columns[c].name == name) return c;
    }
    return std::nullopt;
  }

  FeatureMatrix select_rows(std::span<const std::size_t> idx) const {
    FeatureMatrix out;
    out.columns = columns;
    out.row_ids.reserve(idx.size());
    out.values.reserve(idx.size() * cols());
    out.missing.reserve(idx.size() * cols());
    for (std::size_t r : idx) {
      out.row_ids.push_back(row_ids[r]);
      out.values.insert(out.values.end(), values.begin() + r * cols(),
                        values.begin() + (r + 1) * cols());
      out.missing.insert(out.missing.end(), missing.begin() + r * cols(),
                         missing.begin() + (r + 1) * cols());
    }
    return out;
  }

  bool operator==(const FeatureMatrix& o) const {
    if (row_ids != o.row_ids || columns != o.columns || missing != o.missing) return false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (missing[i]) continue;
      if (values[i] != o.values[i]) return false;
    }
    return true;
  }
};

inline FeatureMatrix encode_features(std::span<const ModelRecord> models,
                                     std::span<const std::string> feature_names) {
  FeatureMatrix fm;
  std::vector<const FeatureDef*> defs;
  for (const auto& name : feature_names) {
    const FeatureDef* def = find_feature(name);
    if (!def) throw Error(ErrorKind::kUnknownFeature, "unknown feature '" + name + "'");
    defs.push_back(def);
    if (def->kind == FeatureKind::kCategorical) {
      const auto& vocab = enum_vocab()[static_cast<std::size_t>(*find_categorical(name))];
      for (auto level : vocab.levels) {
        fm.columns.push_back({name + "=" + std::string(level), name, def->group,
                              Transform::kOneHot, std::string(level)});
      }
    } else {
      fm.columns.push_back({name, name, def->group,
                            def->kind == FeatureKind::kLogCount ? Transform::kLog10
                                                                : Transform::kIdentity,
                            ""});
    }
  }
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  for (const auto& m : models) {
    fm.row_ids.push_back(m.model_id);
    for (const FeatureDef* def : defs) {
      if (def->kind == FeatureKind::kCategorical) {
        const auto cat = *find_categorical(def->name);
        const auto n_levels = enum_vocab()[static_cast<std::size_t>(cat)].levels.size();
        const auto& lv = m.arch.level(cat);
        for (std::size_t l = 0; l < n_levels; ++l) {
          fm.values.push_back(lv ? (static_cast<std::size_t>(*lv) == l ? 1.0 : 0.0) : kNaN);
          fm.missing.push_back(lv ? 0 : 1);
        }
        continue;
      }
      auto v = numeric_value(m, def->name);
      if (v && def->kind == FeatureKind::kLogCount) v = std::log10(*v);
      fm.values.push_back(v ? *v : kNaN);
      fm.missing.push_back(v ? 0 : 1);
    }
  }
  return fm;
}

inline FeatureMatrix encode_features(const Dataset& dataset,
                                     std::span<const std::string> feature_names) {
  return encode_features(std::span<const ModelRecord>(dataset.models), feature_names);
}

}  // namespace perfpred
