#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "perfpred/error.hpp"

namespace perfpred::stats {

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error(ErrorKind::kDegenerate, "incomplete beta continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b). `one_minus_x` is passed separately so
// callers holding 1 - x in exact form avoid cancellation in the far tail.
inline double incomplete_beta(double a, double b, double x, double one_minus_x) {
  if (x <= 0.0) return 0.0;
  if (one_minus_x <= 0.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log(one_minus_x);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * detail::beta_cf(a, b, x) / a;
  }
  return 1.0 - std::exp(log_front) * detail::beta_cf(b, a, one_minus_x) / b;
}

inline double incomplete_beta(double a, double b, double x) {
  return incomplete_beta(a, b, x, 1.0 - x);
}

// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  const double t2 = t * t;
  return incomplete_beta(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2));
}

inline double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided_p(t, df);
  return t >= 0.0 ? 1.0 - tail : tail;
}

// Upper quantile: t such that P(T > t) = upper_tail, for upper_tail in (0, 0.5].
inline double student_t_upper_quantile(double upper_tail, double df) {
  require(upper_tail > 0.0 && upper_tail <= 0.5, ErrorKind::kInvalidArgument,
          "upper tail probability must be in (0, 0.5]");
  double lo = 0.0;
  double hi = 1.0;
  while (0.5 * student_t_two_sided_p(hi, df) > upper_tail) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * student_t_two_sided_p(mid, df) > upper_tail) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * hi) break;
  }
  return 0.5 * (lo + hi);
}

inline double mean(std::span<const double> v) {
  require(!v.empty(), ErrorKind::kInsufficientData, "empty input");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1 denominator).
inline double sample_sd(std::span<const double> v) {
  require(v.size() >= 2, ErrorKind::kInsufficientData, "need at least two values");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p_two_sided = 1.0;
};

// Paired t-test on d = a - b. Zero-variance differences: p = 1 when the mean
// difference is zero, p = 0 otherwise.
inline TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorKind::kInvalidArgument, "length mismatch");
  require(a.size() >= 2, ErrorKind::kInsufficientData, "paired t-test needs n >= 2");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double md = mean(d);
  const double sd = sample_sd(d);
  TTest out;
  out.df = n - 1.0;
  if (sd == 0.0) {
    out.t = md == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), md);
    out.p_two_sided = md == 0.0 ? 1.0 : 0.0;
    return out;
  }
  out.t = md / (sd / std::sqrt(n));
  out.p_two_sided = student_t_two_sided_p(out.t, out.df);
  return out;
}

struct FdrResult {
  std::vector<bool> rejected;
  std::vector<double> adjusted;
};

// Benjamini-Hochberg step-up at level q. Outputs follow input order.
inline FdrResult bh_fdr(std::span<const double> p, double q) {
  for (double v : p) {
    require(v >= 0.0 && v <= 1.0, ErrorKind::kRange, "p-value outside [0,1]");
  }
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return p[i] < p[j]; });
  FdrResult out{std::vector<bool>(m, false), std::vector<double>(m, 1.0)};
  std::size_t last_rejected = 0;  // 1-based rank, 0 = none
  for (std::size_t rank = 1; rank <= m; ++rank) {
    if (p[order[rank - 1]] <= static_cast<double>(rank) * q / static_cast<double>(m)) {
      last_rejected = rank;
    }
  }
  for (std::size_t rank = 1; rank <= last_rejected; ++rank) out.rejected[order[rank - 1]] = true;
  double running = 1.0;
  for (std::size_t rank = m; rank >= 1; --rank) {
    const std::size_t i = order[rank - 1];
    running = std::min(running, static_cast<double>(m) * p[i] / static_cast<double>(rank));
    out.adjusted[i] = std::min(1.0, running);
  }
  return out;
}

struct MeanCi {
  double mean = 0.0;
  double halfwidth = 0.0;
};

inline MeanCi mean_ci95(std::span<const double> v) {
  require(v.size() >= 2, ErrorKind::kInsufficientData, "confidence interval needs n >= 2");
  const double n = static_cast<double>(v.size());
  const double tcrit = student_t_upper_quantile(0.025, n - 1.0);
  return {mean(v), tcrit * sample_sd(v) / std::sqrt(n)};
}

struct Correlation {
  double r = 0.0;
  double p_two_sided = 1.0;
};

inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::kInvalidArgument, "length mismatch");
  require(x.size() >= 3, ErrorKind::kInsufficientData, "pearson needs n >= 3");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0 && syy > 0.0, ErrorKind::kDegenerate, "constant input");
  double r = sxy / std::sqrt(sxx * syy);
  r = std::clamp(r, -1.0, 1.0);
  const double df = static_cast<double>(x.size()) - 2.0;
  Correlation out{r, 0.0};
  if (std::abs(r) < 1.0) {
    out.p_two_sided = student_t_two_sided_p(r * std::sqrt(df / (1.0 - r * r)), df);
  }
  return out;
}

// Average ranks (ties share the mean rank), 1-based.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = avg;
    i = j + 1;
  }
  return out;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry).r;
}

template <typename Label>
double cohen_kappa(std::span<const Label> a, std::span<const Label> b) {
  require(a.size() == b.size(), ErrorKind::kInvalidArgument, "length mismatch");
  require(!a.empty(), ErrorKind::kInsufficientData, "empty input");
  const double n = static_cast<double>(a.size());
  std::map<Label, double> ma;
  std::map<Label, double> mb;
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma[a[i]] += 1.0;
    mb[b[i]] += 1.0;
    agree += a[i] == b[i] ? 1.0 : 0.0;
  }
  const double po = agree / n;
  double pe = 0.0;
  for (const auto& [label, count] : ma) {
    if (auto it = mb.find(label); it != mb.end()) pe += (count / n) * (it->second / n);
  }
  if (pe >= 1.0) {
    require(po == 1.0, ErrorKind::kDegenerate, "kappa undefined: chance agreement is 1");
    return 1.0;
  }
  return (po - pe) / (1.0 - pe);
}

template <typename Label>
double cohen_kappa(const std::vector<Label>& a, const std::vector<Label>& b) {
  return cohen_kappa(std::span<const Label>(a), std::span<const Label>(b));
}

}  // namespace perfpred::stats
