#pragma once

#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

#include "perfpred/error.hpp"

namespace perfpred {

struct WlsFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd se;       // sqrt(diag(sigma2 * (X'WX)^-1))
  Eigen::VectorXd residuals;
  double sigma2 = 0.0;      // weighted residual variance, rss_w / dof
  std::size_t dof = 0;
  bool exact = false;       // residuals vanish to rounding; se reported as 0
};

// Weighted least squares with the residual dispersion estimated from the
// data (weights need only be known up to a constant). Unit weights give OLS.
inline WlsFit wls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const auto n = X.rows();
  const auto p = X.cols();
  require(y.size() == n && w.size() == n, ErrorKind::kInvalidArgument, "WLS size mismatch");
  require(n >= p, ErrorKind::kInsufficientData, "fewer observations than coefficients");
  for (Eigen::Index i = 0; i < n; ++i) {
    require(w[i] > 0.0 && std::isfinite(w[i]), ErrorKind::kInvalidArgument,
            "WLS weights must be positive");
  }
  const Eigen::VectorXd sw = w.array().sqrt();
  const Eigen::MatrixXd Xw = sw.asDiagonal() * X;
  const Eigen::VectorXd yw = sw.cwiseProduct(y);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  qr.setThreshold(1e-10);
  require(qr.rank() == p, ErrorKind::kRankDeficient, "design matrix is rank deficient");

  WlsFit fit;
  fit.coef = qr.solve(yw);
  fit.residuals = y - X * fit.coef;
  const Eigen::VectorXd rw = sw.cwiseProduct(fit.residuals);
  const double rss = rw.squaredNorm();
  fit.dof = static_cast<std::size_t>(n - p);
  fit.exact = std::sqrt(rss) <= 1e-12 * std::max(yw.norm(), 1e-300) || fit.dof == 0;
  fit.sigma2 = fit.dof > 0 ? rss / static_cast<double>(fit.dof) : 0.0;
  const Eigen::MatrixXd xtwx_inv =
      (Xw.transpose() * Xw).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  fit.se = fit.exact ? Eigen::VectorXd::Zero(p)
                     : Eigen::VectorXd((fit.sigma2 * xtwx_inv.diagonal()).array().sqrt());
  return fit;
}

inline WlsFit ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return wls(X, y, Eigen::VectorXd::Ones(X.rows()));
}

}  // namespace perfpred
