#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "perfpred/error.hpp"
#include "perfpred/metrics.hpp"
#include "perfpred/registry.hpp"
#include "perfpred/wls.hpp"

namespace perfpred::baselines {

// L(N, D) = ((Nc / N)^(alphaN / alphaD) + Dc / D)^alphaD
struct PowerLawParams {
  double Nc = 1.0;
  double Dc = 1.0;
  double alphaN = 1.0;
  double alphaD = 1.0;

  bool valid() const { return Nc > 0 && Dc > 0 && alphaN > 0 && alphaD > 0; }
};

struct ScalePoint {
  double N = 0.0;  // parameters
  double D = 0.0;  // tokens
  double target = 0.0;
};

inline double eval_power_law(const PowerLawParams& p, double N, double D) {
  require(p.valid(), ErrorKind::kInvalidArgument, "power-law parameters must be positive");
  require(N > 0.0 && D > 0.0, ErrorKind::kRange, "N and D must be positive");
  const double log_u1 = (p.alphaN / p.alphaD) * (std::log(p.Nc) - std::log(N));
  const double log_u2 = std::log(p.Dc) - std::log(D);
  const double hi = std::max(log_u1, log_u2);
  const double log_s = hi + std::log(std::exp(log_u1 - hi) + std::exp(log_u2 - hi));
  return std::exp(p.alphaD * log_s);
}

// Maps a score onto the decreasing, loss-like quantity the power law is fit to.
enum class TargetTransform {
  kIdentity,  // fit the target as given
  kOneMinus,  // higher-better scores: 1 - s
  kHalf,      // Brier: s / 2
};

inline TargetTransform transform_for(Polarity polarity) {
  return polarity == Polarity::kHigherBetter ? TargetTransform::kOneMinus
                                             : TargetTransform::kHalf;
}

inline double to_loss(TargetTransform t, double score) {
  switch (t) {
    case TargetTransform::kIdentity: return score;
    case TargetTransform::kOneMinus: return 1.0 - score;
    case TargetTransform::kHalf: return score / 2.0;
  }
  return score;
}

inline double from_loss(TargetTransform t, double loss) {
  switch (t) {
    case TargetTransform::kIdentity: return loss;
    case TargetTransform::kOneMinus: return 1.0 - loss;
    case TargetTransform::kHalf: return 2.0 * loss;
  }
  return loss;
}

struct PowerLawFit {
  PowerLawParams params;
  TargetTransform transform = TargetTransform::kIdentity;
  double r_squared = 0.0;  // on the original score scale
  double sse = 0.0;        // on the fitted (loss) scale
  std::size_t start_index = 0;
  std::size_t starts_refined = 0;

  double predict(double N, double D) const {
    return from_loss(transform, eval_power_law(params, N, D));
  }
};

namespace detail {

// Parameters optimized on the log scale so positivity holds by construction.
using Theta = Eigen::Vector4d;  // log Nc, log Dc, log alphaN, log alphaD

inline PowerLawParams from_theta(const Theta& t) {
  return {std::exp(t[0]), std::exp(t[1]), std::exp(t[2]), std::exp(t[3])};
}

struct PointLogs {
  double log_n;
  double log_d;
  double target;
};

// Residuals (model - target) and, optionally, the Jacobian w.r.t. theta.
inline double residuals(const Theta& t, std::span<const PointLogs> pts, Eigen::VectorXd& r,
                        Eigen::MatrixXd* jac) {
  const double alpha_n = std::exp(t[2]);
  const double alpha_d = std::exp(t[3]);
  const double ratio = alpha_n / alpha_d;
  double sse = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dn = t[0] - pts[i].log_n;
    const double log_u1 = ratio * dn;
    const double log_u2 = t[1] - pts[i].log_d;
    const double hi = std::max(log_u1, log_u2);
    const double log_s = hi + std::log(std::exp(log_u1 - hi) + std::exp(log_u2 - hi));
    const double L = std::exp(alpha_d * log_s);
    const auto row = static_cast<Eigen::Index>(i);
    r[row] = L - pts[i].target;
    sse += r[row] * r[row];
    if (jac) {
      const double f1 = std::exp(log_u1 - log_s);  // u1 / S
      const double f2 = std::exp(log_u2 - log_s);  // u2 / S
      (*jac)(row, 0) = L * alpha_n * f1;
      (*jac)(row, 1) = L * alpha_d * f2;
      (*jac)(row, 2) = L * alpha_n * f1 * dn;
      (*jac)(row, 3) = L * alpha_d * (log_s - ratio * f1 * dn);
    }
  }
  return std::isfinite(sse) ? sse : std::numeric_limits<double>::infinity();
}

// Levenberg-Marquardt (damped Gauss-Newton) from a single start.
inline double refine(Theta& theta, std::span<const PointLogs> pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::VectorXd r(n);
  Eigen::VectorXd r_try(n);
  Eigen::MatrixXd J(n, 4);
  double sse = residuals(theta, pts, r, &J);
  double lambda = 1e-3;
  for (int iter = 0; iter < 500; ++iter) {
    const Eigen::Matrix4d JtJ = J.transpose() * J;
    const Eigen::Vector4d g = J.transpose() * r;
    bool improved = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::Matrix4d A = JtJ;
      for (int k = 0; k < 4; ++k) A(k, k) += lambda * std::max(JtJ(k, k), 1e-12);
      const Eigen::Vector4d step = A.ldlt().solve(-g);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      Theta trial = theta + step;
      // Keep exponents inside a sane window; beyond it the model saturates.
      trial[2] = std::clamp(trial[2], std::log(1e-4), std::log(10.0));
      trial[3] = std::clamp(trial[3], std::log(1e-4), std::log(10.0));
      const double sse_try = residuals(trial, pts, r_try, nullptr);
      if (sse_try < sse) {
        const double rel = (sse - sse_try) / std::max(sse, 1e-300);
        const double step_norm = (trial - theta).norm();
        theta = trial;
        sse = residuals(theta, pts, r, &J);
        lambda = std::max(lambda / 10.0, 1e-15);
        improved = true;
        if (rel < 1e-15 || step_norm < 1e-13 || sse == 0.0) return sse;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return sse;
}

}  // namespace detail

inline constexpr std::size_t kRefinedStarts = 16;

// Multi-start nonlinear least squares for the power law. Every point of the
// start grid (Nc, Dc in 1e6..1e15, both exponents in {0.05, 0.1, 0.3, 0.5})
// is scored; the best kRefinedStarts are refined and the lowest objective wins,
// ties going to the smaller start index.
inline PowerLawFit fit_power_law(std::span<const ScalePoint> points, TargetTransform transform) {
  require(points.size() >= 8, ErrorKind::kInsufficientData,
          "power-law fit needs at least 8 points");
  double n_min = std::numeric_limits<double>::infinity();
  double n_max = 0.0;
  double d_min = n_min;
  double d_max = 0.0;
  std::vector<detail::PointLogs> pts;
  pts.reserve(points.size());
  for (const auto& p : points) {
    require(p.N > 0.0 && p.D > 0.0, ErrorKind::kRange, "N and D must be positive");
    n_min = std::min(n_min, p.N);
    n_max = std::max(n_max, p.N);
    d_min = std::min(d_min, p.D);
    d_max = std::max(d_max, p.D);
    pts.push_back({std::log(p.N), std::log(p.D), to_loss(transform, p.target)});
  }
  require(n_max / n_min > 10.0 && d_max / d_min > 10.0, ErrorKind::kInsufficientData,
          "points must span more than one order of magnitude in N and D");
  const bool all_equal = std::all_of(points.begin(), points.end(), [&](const ScalePoint& p) {
    return p.target == points.front().target;
  });
  require(!all_equal, ErrorKind::kDegenerate, "all targets are identical");

  constexpr std::array<double, 4> kAlphas = {0.05, 0.1, 0.3, 0.5};
  std::vector<detail::Theta> starts;
  for (int en = 6; en <= 15; ++en) {
    for (int ed = 6; ed <= 15; ++ed) {
      for (double an : kAlphas) {
        for (double ad : kAlphas) {
          starts.push_back({en * std::log(10.0), ed * std::log(10.0), std::log(an),
                            std::log(ad)});
        }
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::VectorXd r(n);
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) {
    scored.emplace_back(detail::residuals(starts[i], pts, r, nullptr), i);
  }
  const std::size_t keep = std::min(kRefinedStarts, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end());

  PowerLawFit best;
  best.transform = transform;
  best.sse = std::numeric_limits<double>::infinity();
  best.starts_refined = keep;
  std::vector<std::size_t> order(keep);
  for (std::size_t k = 0; k < keep; ++k) order[k] = scored[k].second;
  std::sort(order.begin(), order.end());
  for (std::size_t idx : order) {
    detail::Theta theta = starts[idx];
    const double sse = detail::refine(theta, pts);
    if (sse < best.sse) {
      best.sse = sse;
      best.params = detail::from_theta(theta);
      best.start_index = idx;
    }
  }
  std::vector<double> pred(points.size());
  std::vector<double> actual(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    pred[i] = best.predict(points[i].N, points[i].D);
    actual[i] = points[i].target;
  }
  best.r_squared = metrics::r_squared(pred, actual);
  return best;
}

inline PowerLawFit fit_power_law(std::span<const ScalePoint> points, Polarity polarity) {
  return fit_power_law(points, transform_for(polarity));
}

// s = a + b log10 N + c log10 D
struct LogLinearFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double predict(double N, double D) const { return a + b * std::log10(N) + c * std::log10(D); }
};

inline LogLinearFit fit_log_linear(std::span<const ScalePoint> points) {
  require(points.size() >= 3, ErrorKind::kInsufficientData, "log-linear fit needs 3 points");
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    require(p.N > 0.0 && p.D > 0.0, ErrorKind::kRange, "N and D must be positive");
    X(i, 0) = 1.0;
    X(i, 1) = std::log10(p.N);
    X(i, 2) = std::log10(p.D);
    y[i] = p.target;
  }
  const WlsFit fit = ols(X, y);
  return {fit.coef[0], fit.coef[1], fit.coef[2]};
}

struct MedianPredictor {
  double value = 0.0;
  double predict() const { return value; }
};

inline MedianPredictor median_predictor(std::span<const double> train_targets) {
  require(!train_targets.empty(), ErrorKind::kInsufficientData, "median of empty set");
  std::vector<double> v(train_targets.begin(), train_targets.end());
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return {v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m])};
}

// Scale points for a dataset: N = parameters, D = tokens (not billions).
inline std::vector<ScalePoint> scale_points(const Dataset& ds) {
  std::vector<ScalePoint> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back({ds.models[i].arch.total_params, ds.models[i].data.total_tokens_billions * 1e9,
                   ds.targets[i]});
  }
  return out;
}

inline nlohmann::json to_json(const PowerLawFit& fit) {
  const char* transform = fit.transform == TargetTransform::kOneMinus ? "one_minus_score"
                          : fit.transform == TargetTransform::kHalf   ? "half_score"
                                                                      : "identity";
  return {{"Nc", fit.params.Nc},
          {"Dc", fit.params.Dc},
          {"alphaN", fit.params.alphaN},
          {"alphaD", fit.params.alphaD},
          {"target_transform", transform},
          {"r_squared", fit.r_squared},
          {"sse", fit.sse},
          {"start_index", fit.start_index},
          {"starts_refined", fit.starts_refined}};
}

}  // namespace perfpred::baselines
