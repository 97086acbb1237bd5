#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "perfpred/error.hpp"
#include "perfpred/registry.hpp"

namespace perfpred::gbt {

struct GBTConfig {
  int max_depth = 3;
  double learning_rate = 0.1;
  int n_trees = 100;
  int min_samples_leaf = 2;
  std::uint64_t seed = 0;

  bool operator==(const GBTConfig&) const = default;
};

// Depth {2,3,5} x rate {0.01,0.1,0.3} x trees {50,100}: 18 configurations.
inline std::vector<GBTConfig> default_grid(int min_samples_leaf = 2) {
  std::vector<GBTConfig> grid;
  for (int depth : {2, 3, 5}) {
    for (double rate : {0.01, 0.1, 0.3}) {
      for (int trees : {50, 100}) grid.push_back({depth, rate, trees, min_samples_leaf, 0});
    }
  }
  return grid;
}

struct TreeNode {
  int split_feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // present values < threshold go left
  bool default_left = true;
  std::size_t cover = 0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output (mean residual); node mean for internal nodes

  bool is_leaf() const { return split_feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  // Index of the leaf reached by a row; missing features take the default branch.
  std::size_t leaf_index(std::span<const double> x, std::span<const std::uint8_t> missing) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
      const auto& n = nodes[i];
      const auto f = static_cast<std::size_t>(n.split_feature);
      const bool left = missing[f] ? n.default_left : x[f] < n.threshold;
      i = static_cast<std::size_t>(left ? n.left : n.right);
    }
    return i;
  }
  int depth(std::size_t node = 0) const {
    const auto& n = nodes[node];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth(static_cast<std::size_t>(n.left)),
                        depth(static_cast<std::size_t>(n.right)));
  }
  bool operator==(const Tree&) const = default;
};

struct TreeEnsemble {
  double base_score = 0.0;
  double learning_rate = 0.1;
  std::vector<Tree> trees;
  std::vector<FeatureColumn> columns;
  GBTConfig config;

  bool operator==(const TreeEnsemble&) const = default;
};

// Optional per-round diagnostics.
struct FitTrace {
  std::vector<double> train_mse;  // after base (index 0) and after each tree
};

namespace detail {

struct Builder {
  std::size_t n_rows;
  std::size_t n_cols;
  const std::vector<double>& x;            // canonical row-major values
  const std::vector<std::uint8_t>& miss;   // canonical row-major mask
  const std::vector<std::vector<std::uint32_t>>& sorted;  // per column, present rows by value
  const GBTConfig& cfg;
  std::vector<double> residual;
  std::vector<int> node_of;  // node id owning each row at the current build

  struct Split {
    bool found = false;
    double gain = 0.0;
    std::size_t feature = 0;
    double threshold = 0.0;
    bool default_left = true;
  };

  Split best_split(int node, std::size_t n_node, double sum_node, double sq_node) {
    Split best;
    const double parent_score = sum_node * sum_node / static_cast<double>(n_node);
    const double min_gain = 1e-12 * std::max(sq_node, 1e-300);
    const std::size_t min_leaf = static_cast<std::size_t>(std::max(cfg.min_samples_leaf, 1));
    std::vector<std::uint32_t> rows;
    rows.reserve(n_node);
    for (std::size_t f = 0; f < n_cols; ++f) {
      rows.clear();
      for (std::uint32_t r : sorted[f]) {
        if (node_of[r] == node) rows.push_back(r);
      }
      if (rows.size() < 2) continue;
      double sum_present = 0.0;
      for (std::uint32_t r : rows) sum_present += residual[r];
      const std::size_t n_missing = n_node - rows.size();
      const double sum_missing = sum_node - sum_present;
      double prefix = 0.0;
      for (std::size_t k = 0; k + 1 < rows.size(); ++k) {
        prefix += residual[rows[k]];
        const double v = x[rows[k] * n_cols + f];
        const double v_next = x[rows[k + 1] * n_cols + f];
        if (!(v < v_next)) continue;
        double threshold = v + (v_next - v) / 2.0;
        if (!(v < threshold)) threshold = v_next;
        const std::size_t n_left_present = k + 1;
        const std::size_t n_right_present = rows.size() - n_left_present;
        auto consider = [&](bool missing_left) {
          const std::size_t nl = n_left_present + (missing_left ? n_missing : 0);
          const std::size_t nr = n_right_present + (missing_left ? 0 : n_missing);
          if (nl < min_leaf || nr < min_leaf) return;
          const double sl = prefix + (missing_left ? sum_missing : 0.0);
          const double sr = sum_node - sl;
          const double gain = sl * sl / static_cast<double>(nl) +
                              sr * sr / static_cast<double>(nr) - parent_score;
          if (gain <= min_gain) return;
          if (!best.found || gain > best.gain) {
            bool default_left = missing_left;
            if (n_missing == 0) default_left = nl >= nr;
            best = {true, gain, f, threshold, default_left};
          }
        };
        if (n_missing == 0) {
          consider(true);
        } else {
          consider(true);
          consider(false);
        }
      }
    }
    return best;
  }

  void grow(Tree& tree, int node, int depth) {
    std::size_t n_node = 0;
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
      if (node_of[r] != node) continue;
      ++n_node;
      sum += residual[r];
      sq += residual[r] * residual[r];
    }
    const double mean = sum / static_cast<double>(n_node);
    auto& self = tree.nodes[static_cast<std::size_t>(node)];
    self.cover = n_node;
    self.value = mean;
    const std::size_t min_leaf = static_cast<std::size_t>(std::max(cfg.min_samples_leaf, 1));
    if (depth >= cfg.max_depth || n_node < 2 * min_leaf) return;
    const Split s = best_split(node, n_node, sum, sq);
    if (!s.found) return;
    const int left = static_cast<int>(tree.nodes.size());
    const int right = left + 1;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    auto& parent = tree.nodes[static_cast<std::size_t>(node)];
    parent.split_feature = static_cast<int>(s.feature);
    parent.threshold = s.threshold;
    parent.default_left = s.default_left;
    parent.left = left;
    parent.right = right;
    for (std::size_t r = 0; r < n_rows; ++r) {
      if (node_of[r] != node) continue;
      const bool m = miss[r * n_cols + s.feature] != 0;
      const bool go_left = m ? s.default_left : x[r * n_cols + s.feature] < s.threshold;
      node_of[r] = go_left ? left : right;
    }
    grow(tree, left, depth + 1);
    grow(tree, right, depth + 1);
  }
};

}  // namespace detail

inline void accumulate_tree(double& pred, double learning_rate, double leaf) {
  pred += learning_rate * leaf;
}

// Squared-error gradient boosting with exact greedy splits. Rows are put into a
// canonical order first, so any permutation of (X, y) yields the same model.
inline TreeEnsemble fit_gbt(const FeatureMatrix& X, std::span<const double> y,
                            const GBTConfig& config, FitTrace* trace = nullptr) {
  const std::size_t n = X.rows();
  const std::size_t p = X.cols();
  require(n > 0 && p > 0, ErrorKind::kInsufficientData, "empty feature matrix");
  require(y.size() == n, ErrorKind::kInvalidArgument, "target length mismatch");
  for (double v : y) require(std::isfinite(v), ErrorKind::kInvalidArgument, "NaN target");
  require(config.max_depth >= 0 && config.n_trees >= 0 && config.learning_rate > 0.0 &&
              config.learning_rate <= 1.0,
          ErrorKind::kInvalidArgument, "invalid GBT configuration");
  require(n >= 2 * static_cast<std::size_t>(std::max(config.min_samples_leaf, 1)),
          ErrorKind::kInsufficientData, "too few rows for min_samples_leaf");
  bool any_present = false;
  for (auto m : X.missing) any_present = any_present || m == 0;
  require(any_present, ErrorKind::kDegenerate, "all features are missing");

  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    for (std::size_t c = 0; c < p; ++c) {
      const bool ma = X.is_missing(a, c);
      const bool mb = X.is_missing(b, c);
      if (ma != mb) return mb;  // present sorts before missing
      if (ma) continue;
      const double va = X.at(a, c);
      const double vb = X.at(b, c);
      if (va != vb) return va < vb;
    }
    return y[a] < y[b];
  });
  std::vector<double> xs(n * p);
  std::vector<std::uint8_t> ms(n * p);
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < p; ++c) {
      xs[i * p + c] = X.at(order[i], c);
      ms[i * p + c] = X.missing[order[i] * p + c];
    }
    ys[i] = y[order[i]];
  }
  std::vector<std::vector<std::uint32_t>> sorted(p);
  for (std::size_t c = 0; c < p; ++c) {
    for (std::uint32_t r = 0; r < n; ++r) {
      if (!ms[r * p + c]) sorted[c].push_back(r);
    }
    std::stable_sort(sorted[c].begin(), sorted[c].end(), [&](std::uint32_t a, std::uint32_t b) {
      return xs[a * p + c] < xs[b * p + c];
    });
  }

  TreeEnsemble ens;
  ens.learning_rate = config.learning_rate;
  ens.columns = X.columns;
  ens.config = config;
  const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
  ens.base_score = *lo == *hi ? *lo
                              : std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(n);

  std::vector<double> pred(n, ens.base_score);
  auto record_mse = [&] {
    if (!trace) return;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (ys[i] - pred[i]) * (ys[i] - pred[i]);
    trace->train_mse.push_back(s / static_cast<double>(n));
  };
  record_mse();

  detail::Builder b{n, p, xs, ms, sorted, config, std::vector<double>(n), std::vector<int>(n)};
  for (int t = 0; t < config.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) b.residual[i] = ys[i] - pred[i];
    std::fill(b.node_of.begin(), b.node_of.end(), 0);
    Tree tree;
    tree.nodes.emplace_back();
    b.grow(tree, 0, 0);
    for (std::size_t i = 0; i < n; ++i) {
      accumulate_tree(pred[i], ens.learning_rate,
                      tree.nodes[static_cast<std::size_t>(b.node_of[i])].value);
    }
    ens.trees.push_back(std::move(tree));
    record_mse();
  }
  return ens;
}

inline double predict(const TreeEnsemble& ens, std::span<const double> x,
                      std::span<const std::uint8_t> missing) {
  require(x.size() == ens.columns.size() && missing.size() == ens.columns.size(),
          ErrorKind::kColumnMismatch, "row width does not match the ensemble's columns");
  double pred = ens.base_score;
  for (const auto& tree : ens.trees) {
    accumulate_tree(pred, ens.learning_rate, tree.nodes[tree.leaf_index(x, missing)].value);
  }
  return pred;
}

inline void check_columns(const TreeEnsemble& ens, const FeatureMatrix& X) {
  require(X.columns == ens.columns, ErrorKind::kColumnMismatch,
          "feature matrix columns do not match the ensemble's columns");
}

inline double predict(const TreeEnsemble& ens, const FeatureMatrix& X, std::size_t row) {
  check_columns(ens, X);
  return predict(ens, X.row(row), X.row_mask(row));
}

inline std::vector<double> predict_all(const TreeEnsemble& ens, const FeatureMatrix& X) {
  check_columns(ens, X);
  std::vector<double> out(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) out[r] = predict(ens, X.row(r), X.row_mask(r));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const GBTConfig& c) {
  return {{"max_depth", c.max_depth},
          {"learning_rate", c.learning_rate},
          {"n_trees", c.n_trees},
          {"min_samples_leaf", c.min_samples_leaf},
          {"seed", c.seed}};
}

inline GBTConfig config_from_json(const nlohmann::json& j) {
  GBTConfig c;
  c.max_depth = j.at("max_depth").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.n_trees = j.at("n_trees").get<int>();
  c.min_samples_leaf = j.value("min_samples_leaf", 2);
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

inline nlohmann::json to_json(const FeatureColumn& c) {
  return {{"name", c.name},
          {"feature", c.feature},
          {"group", to_string(c.group)},
          {"transform", to_string(c.transform)},
          {"level", c.level}};
}

inline FeatureColumn column_from_json(const nlohmann::json& j) {
  FeatureColumn c;
  c.name = j.at("name").get<std::string>();
  c.feature = j.at("feature").get<std::string>();
  const auto g = j.at("group").get<std::string>();
  c.group = g == "A" ? SourceGroup::kArch : g == "D" ? SourceGroup::kData : SourceGroup::kGen;
  const auto t = j.at("transform").get<std::string>();
  c.transform = t == "log10" ? Transform::kLog10 : t == "onehot" ? Transform::kOneHot
                                                                  : Transform::kIdentity;
  c.level = j.value("level", std::string());
  return c;
}

// Tree dump as parallel node arrays (xgboost-style), one object per tree.
inline nlohmann::json to_json(const TreeEnsemble& ens) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : ens.trees) {
    nlohmann::json feat = nlohmann::json::array();
    nlohmann::json thr = nlohmann::json::array();
    nlohmann::json dl = nlohmann::json::array();
    nlohmann::json cover = nlohmann::json::array();
    nlohmann::json left = nlohmann::json::array();
    nlohmann::json right = nlohmann::json::array();
    nlohmann::json value = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      feat.push_back(n.split_feature);
      thr.push_back(n.threshold);
      dl.push_back(n.default_left ? "left" : "right");
      cover.push_back(n.cover);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
    }
    trees.push_back({{"split_feature", feat},
                     {"threshold", thr},
                     {"default_direction", dl},
                     {"cover", cover},
                     {"left", left},
                     {"right", right},
                     {"value", value}});
  }
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : ens.columns) cols.push_back(to_json(c));
  return {{"base_score", ens.base_score},
          {"learning_rate", ens.learning_rate},
          {"config", to_json(ens.config)},
          {"columns", cols},
          {"trees", trees}};
}

inline TreeEnsemble ensemble_from_json(const nlohmann::json& j) {
  TreeEnsemble ens;
  ens.base_score = j.at("base_score").get<double>();
  ens.learning_rate = j.at("learning_rate").get<double>();
  ens.config = config_from_json(j.at("config"));
  for (const auto& c : j.at("columns")) ens.columns.push_back(column_from_json(c));
  for (const auto& t : j.at("trees")) {
    Tree tree;
    const auto& feat = t.at("split_feature");
    for (std::size_t i = 0; i < feat.size(); ++i) {
      TreeNode n;
      n.split_feature = feat[i].get<int>();
      n.threshold = t.at("threshold")[i].get<double>();
      n.default_left = t.at("default_direction")[i].get<std::string>() == "left";
      n.cover = t.at("cover")[i].get<std::size_t>();
      n.left = t.at("left")[i].get<int>();
      n.right = t.at("right")[i].get<int>();
      n.value = t.at("value")[i].get<double>();
      tree.nodes.push_back(n);
    }
    ens.trees.push_back(std::move(tree));
  }
  return ens;
}

}  // namespace perfpred::gbt
