#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "perfpred/error.hpp"
#include "perfpred/gbtree.hpp"
#include "perfpred/io.hpp"
#include "perfpred/registry.hpp"

namespace perfpred::shap {

struct Explanation {
  std::vector<double> phi;
  double base_value = 0.0;
};

namespace detail {

// One entry of the unique-feature path. `pweight` of entry i is the
// permutation weight of paths with i ones.
struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

inline void extend_path(PathElement* path, std::size_t depth, double zero_fraction,
                        double one_fraction, int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  const double denom = static_cast<double>(depth + 1);
  for (std::size_t k = depth; k-- > 0;) {
    path[k + 1].pweight += one_fraction * path[k].pweight * static_cast<double>(k + 1) / denom;
    path[k].pweight = zero_fraction * path[k].pweight * static_cast<double>(depth - k) / denom;
  }
}

inline void unwind_path(PathElement* path, std::size_t depth, std::size_t index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next_one_portion = path[depth].pweight;
  const double denom = static_cast<double>(depth + 1);
  for (std::size_t k = depth; k-- > 0;) {
    if (one != 0.0) {
      const double tmp = path[k].pweight;
      path[k].pweight = next_one_portion * denom / (static_cast<double>(k + 1) * one);
      next_one_portion = tmp - path[k].pweight * zero * static_cast<double>(depth - k) / denom;
    } else {
      path[k].pweight = path[k].pweight * denom / (zero * static_cast<double>(depth - k));
    }
  }
  for (std::size_t k = index; k < depth; ++k) {
    path[k].feature = path[k + 1].feature;
    path[k].zero_fraction = path[k + 1].zero_fraction;
    path[k].one_fraction = path[k + 1].one_fraction;
  }
}

inline double unwound_path_sum(const PathElement* path, std::size_t depth, std::size_t index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next_one_portion = path[depth].pweight;
  double total = 0.0;
  const double denom = static_cast<double>(depth + 1);
  for (std::size_t k = depth; k-- > 0;) {
    if (one != 0.0) {
      const double tmp = next_one_portion * denom / (static_cast<double>(k + 1) * one);
      total += tmp;
      next_one_portion = path[k].pweight - tmp * zero * (static_cast<double>(depth - k) / denom);
    } else if (zero != 0.0) {
      total += (path[k].pweight / zero) / (static_cast<double>(depth - k) / denom);
    }
  }
  return total;
}

struct Walker {
  const gbt::Tree& tree;
  std::span<const double> x;
  std::span<const std::uint8_t> missing;
  std::vector<double>& phi;
  double scale;

  void recurse(std::size_t node_index, std::size_t depth, PathElement* parent_path,
               double parent_zero, double parent_one, int parent_feature) {
    const auto& node = tree.nodes[node_index];
    PathElement* path = parent_path + depth + 1;
    std::copy(parent_path, parent_path + depth + 1, path);
    extend_path(path, depth, parent_zero, parent_one, parent_feature);

    if (node.is_leaf()) {
      for (std::size_t i = 1; i <= depth; ++i) {
        const double w = unwound_path_sum(path, depth, i);
        const auto& el = path[i];
        phi[static_cast<std::size_t>(el.feature)] +=
            w * (el.one_fraction - el.zero_fraction) * node.value * scale;
      }
      return;
    }
    const auto f = static_cast<std::size_t>(node.split_feature);
    const bool go_left = missing[f] ? node.default_left : x[f] < node.threshold;
    const auto hot = static_cast<std::size_t>(go_left ? node.left : node.right);
    const auto cold = static_cast<std::size_t>(go_left ? node.right : node.left);
    const double w = static_cast<double>(node.cover);
    const double hot_zero = static_cast<double>(tree.nodes[hot].cover) / w;
    const double cold_zero = static_cast<double>(tree.nodes[cold].cover) / w;
    double incoming_zero = 1.0;
    double incoming_one = 1.0;

    // A feature already on the path is unwound and re-extended here.
    std::size_t k = 0;
    for (; k <= depth; ++k) {
      if (path[k].feature == node.split_feature) break;
    }
    if (k != depth + 1) {
      incoming_zero = path[k].zero_fraction;
      incoming_one = path[k].one_fraction;
      unwind_path(path, depth, k);
      depth -= 1;
    }
    recurse(hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, node.split_feature);
    recurse(cold, depth + 1, path, cold_zero * incoming_zero, 0.0, node.split_feature);
  }
};

}  // namespace detail

// Cover-weighted mean leaf value of one tree.
inline double tree_expectation(const gbt::Tree& tree, std::size_t node = 0) {
  const auto& n = tree.nodes[node];
  if (n.is_leaf()) return n.value;
  const auto l = static_cast<std::size_t>(n.left);
  const auto r = static_cast<std::size_t>(n.right);
  const double wl = static_cast<double>(tree.nodes[l].cover);
  const double wr = static_cast<double>(tree.nodes[r].cover);
  return (wl * tree_expectation(tree, l) + wr * tree_expectation(tree, r)) / (wl + wr);
}

inline double base_value(const gbt::TreeEnsemble& ens) {
  double base = ens.base_score;
  for (const auto& t : ens.trees) base += ens.learning_rate * tree_expectation(t);
  return base;
}

// Path-dependent TreeSHAP: exact Shapley values of the cover-weighted
// conditional expectation, in O(leaves * depth^2) per tree.
inline Explanation tree_shap(const gbt::TreeEnsemble& ens, std::span<const double> x,
                             std::span<const std::uint8_t> missing) {
  require(x.size() == ens.columns.size() && missing.size() == ens.columns.size(),
          ErrorKind::kColumnMismatch, "row width does not match the ensemble's columns");
  Explanation out{std::vector<double>(x.size(), 0.0), base_value(ens)};
  for (const auto& tree : ens.trees) {
    if (tree.nodes.empty()) continue;
    const std::size_t max_depth = static_cast<std::size_t>(tree.depth()) + 2;
    std::vector<detail::PathElement> storage(max_depth * (max_depth + 1) / 2 + max_depth);
    detail::Walker walker{tree, x, missing, out.phi, ens.learning_rate};
    walker.recurse(0, 0, storage.data(), 1.0, 1.0, -1);
  }
  return out;
}

// Rows x columns attribution table; columns mirror the ensemble's.
struct ShapMatrix {
  std::vector<std::string> row_ids;
  std::vector<FeatureColumn> columns;
  std::vector<double> values;  // row-major phi
  double base_value = 0.0;

  double at(std::size_t r, std::size_t c) const { return values[r * columns.size() + c]; }
};

inline ShapMatrix shap_matrix(const gbt::TreeEnsemble& ens, const FeatureMatrix& X) {
  gbt::check_columns(ens, X);
  ShapMatrix m{X.row_ids, X.columns, {}, base_value(ens)};
  m.values.reserve(X.rows() * X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto e = tree_shap(ens, X.row(r), X.row_mask(r));
    m.values.insert(m.values.end(), e.phi.begin(), e.phi.end());
  }
  return m;
}

struct SummaryPoint {
  double feature_value;  // NaN when missing
  double phi;
};

struct SummaryEntry {
  std::string feature;
  SourceGroup group = SourceGroup::kArch;
  double mean_abs_phi = 0.0;
  std::vector<SummaryPoint> points;  // one per row, in row order
};

namespace detail {

inline void rank_entries(std::vector<SummaryEntry>& entries) {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const SummaryEntry& a, const SummaryEntry& b) {
                     if (a.mean_abs_phi != b.mean_abs_phi) return a.mean_abs_phi > b.mean_abs_phi;
                     return a.feature < b.feature;
                   });
}

}  // namespace detail

// Per-column ranking by mean |phi|, descending; ties by name.
inline std::vector<SummaryEntry> shap_summary(const gbt::TreeEnsemble& ens,
                                              const FeatureMatrix& X) {
  require(X.rows() > 0, ErrorKind::kInsufficientData, "no rows to explain");
  const ShapMatrix m = shap_matrix(ens, X);
  std::vector<SummaryEntry> entries;
  for (std::size_t c = 0; c < X.cols(); ++c) {
    SummaryEntry e{X.columns[c].name, X.columns[c].group, 0.0, {}};
    for (std::size_t r = 0; r < X.rows(); ++r) {
      const double phi = m.at(r, c);
      e.points.push_back(
          {X.is_missing(r, c) ? std::numeric_limits<double>::quiet_NaN() : X.at(r, c), phi});
      e.mean_abs_phi += std::abs(phi);
    }
    e.mean_abs_phi /= static_cast<double>(X.rows());
    entries.push_back(std::move(e));
  }
  detail::rank_entries(entries);
  return entries;
}

// Same ranking with one-hot columns folded back into their categorical
// feature: phi is summed over levels, the value is the active level index.
inline std::vector<SummaryEntry> shap_summary_grouped(const gbt::TreeEnsemble& ens,
                                                      const FeatureMatrix& X) {
  require(X.rows() > 0, ErrorKind::kInsufficientData, "no rows to explain");
  const ShapMatrix m = shap_matrix(ens, X);
  std::vector<SummaryEntry> entries;
  std::vector<std::string> seen;
  for (std::size_t c = 0; c < X.cols(); ++c) {
    const auto& col = X.columns[c];
    if (std::find(seen.begin(), seen.end(), col.feature) != seen.end()) continue;
    seen.push_back(col.feature);
    std::vector<std::size_t> members;
    for (std::size_t k = 0; k < X.cols(); ++k) {
      if (X.columns[k].feature == col.feature) members.push_back(k);
    }
    SummaryEntry e{col.feature, col.group, 0.0, {}};
    for (std::size_t r = 0; r < X.rows(); ++r) {
      double phi = 0.0;
      double value = std::numeric_limits<double>::quiet_NaN();
      for (std::size_t i = 0; i < members.size(); ++i) {
        const std::size_t k = members[i];
        phi += m.at(r, k);
        if (X.is_missing(r, k)) continue;
        if (col.transform == Transform::kOneHot) {
          if (X.at(r, k) == 1.0) value = static_cast<double>(i);
        } else {
          value = X.at(r, k);
        }
      }
      e.points.push_back({value, phi});
      e.mean_abs_phi += std::abs(phi);
    }
    e.mean_abs_phi /= static_cast<double>(X.rows());
    entries.push_back(std::move(e));
  }
  detail::rank_entries(entries);
  return entries;
}

struct Dependence {
  std::string feature;
  std::vector<std::string> row_ids;
  std::vector<SummaryPoint> points;  // present rows only
  std::size_t n_missing = 0;
};

// (value, phi) for one column, or for a categorical feature aggregated over
// its one-hot levels. Rows where the feature is missing are counted, not shown.
inline Dependence shap_dependence(const gbt::TreeEnsemble& ens, const FeatureMatrix& X,
                                  const std::string& feature) {
  const bool is_column = X.column_index(feature).has_value();
  const bool is_group = std::any_of(X.columns.begin(), X.columns.end(),
                                    [&](const FeatureColumn& c) { return c.feature == feature; });
  require(is_column || is_group, ErrorKind::kUnknownFeature,
          "feature '" + feature + "' is not a column of the model");
  const auto entries = is_column ? shap_summary(ens, X) : shap_summary_grouped(ens, X);
  const auto it = std::find_if(entries.begin(), entries.end(),
                               [&](const SummaryEntry& e) { return e.feature == feature; });
  Dependence d{feature, {}, {}, 0};
  for (std::size_t r = 0; r < it->points.size(); ++r) {
    if (std::isnan(it->points[r].feature_value)) {
      ++d.n_missing;
      continue;
    }
    d.row_ids.push_back(X.row_ids[r]);
    d.points.push_back(it->points[r]);
  }
  return d;
}

// `model_id,feature,feature_value,phi`, one line per (row, column).
inline std::string shap_values_csv(const ShapMatrix& m, const FeatureMatrix& X) {
  std::string out = "model_id,feature,feature_value,phi\n";
  for (std::size_t r = 0; r < m.row_ids.size(); ++r) {
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
      out += io::csv_line({m.row_ids[r], m.columns[c].name,
                           X.is_missing(r, c) ? std::string() : io::format_double(X.at(r, c)),
                           io::format_double(m.at(r, c))});
    }
  }
  return out;
}

inline std::string ranking_csv(const std::vector<SummaryEntry>& entries) {
  std::string out = "rank,feature,group,mean_abs_phi\n";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out += io::csv_line({std::to_string(i + 1), entries[i].feature, to_string(entries[i].group),
                         io::format_double(entries[i].mean_abs_phi)});
  }
  return out;
}

inline std::string dependence_csv(const Dependence& d) {
  std::string out = "model_id,feature,feature_value,phi\n";
  for (std::size_t i = 0; i < d.points.size(); ++i) {
    out += io::csv_line({d.row_ids[i], d.feature, io::format_double(d.points[i].feature_value),
                         io::format_double(d.points[i].phi)});
  }
  return out;
}

}  // namespace perfpred::shap
