#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "perfpred/error.hpp"

namespace perfpred::metrics {

inline constexpr double kRowSumTolerance = 1e-6;

// Row-major samples x classes probability table.
struct ProbMatrix {
  std::size_t n_classes = 0;
  std::vector<double> probs;

  std::size_t rows() const { return n_classes ? probs.size() / n_classes : 0; }
  std::span<const double> row(std::size_t i) const {
    return {probs.data() + i * n_classes, n_classes};
  }
};

namespace detail {
inline void check_pair(std::size_t a, std::size_t b) {
  require(a == b, ErrorKind::kInvalidArgument, "length mismatch");
  require(a > 0, ErrorKind::kInsufficientData, "empty input");
}
}  // namespace detail

// Exact-match accuracy. pass@1 with one sample per problem reduces to this.
template <typename Label>
double accuracy(std::span<const Label> predictions, std::span<const Label> golds) {
  detail::check_pair(predictions.size(), golds.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hits += predictions[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

template <typename Label>
double accuracy(const std::vector<Label>& predictions, const std::vector<Label>& golds) {
  return accuracy(std::span<const Label>(predictions), std::span<const Label>(golds));
}

// Multiclass Brier score in [0, 2]. Rows must already sum to one.
inline double brier(const ProbMatrix& probs, std::span<const std::size_t> golds) {
  require(probs.n_classes > 0 && probs.probs.size() % probs.n_classes == 0,
          ErrorKind::kInvalidArgument, "malformed probability matrix");
  detail::check_pair(probs.rows(), golds.size());
  double total = 0.0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    require(golds[i] < probs.n_classes, ErrorKind::kRange, "gold index out of range");
    const auto row = probs.row(i);
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) {
      require(row[k] >= 0.0 && row[k] <= 1.0, ErrorKind::kRange, "probability outside [0,1]");
      sum += row[k];
      const double diff = row[k] - (k == golds[i] ? 1.0 : 0.0);
      sq += diff * diff;
    }
    require(std::abs(sum - 1.0) <= kRowSumTolerance, ErrorKind::kValidation,
            "probability row " + std::to_string(i) + " does not sum to 1");
    total += sq;
  }
  return total / static_cast<double>(golds.size());
}

inline double mae(std::span<const double> predictions, std::span<const double> actuals) {
  detail::check_pair(predictions.size(), actuals.size());
  double total = 0.0;
  for (std::size_t i = 0; i < actuals.size(); ++i) total += std::abs(actuals[i] - predictions[i]);
  return total / static_cast<double>(actuals.size());
}

inline double r_squared(std::span<const double> predictions, std::span<const double> actuals) {
  detail::check_pair(predictions.size(), actuals.size());
  double mean = 0.0;
  for (double a : actuals) mean += a;
  mean /= static_cast<double>(actuals.size());
  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    ss_tot += (actuals[i] - mean) * (actuals[i] - mean);
    ss_res += (actuals[i] - predictions[i]) * (actuals[i] - predictions[i]);
  }
  require(ss_tot > 0.0, ErrorKind::kDegenerate, "actuals have zero variance");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace perfpred::metrics
