#pragma once

// Gaussian random-intercept linear mixed model
//
//   y_ij = x_ij' beta + b_i + e_ij,  b_i ~ N(0, tau2),  e_ij ~ N(0, sigma2),
//
// fitted by REML. With lambda = tau2 / sigma2 the cluster covariance is
// sigma2 (I + lambda 11'), whose inverse is (I - w_i 11') / sigma2 with
// w_i = lambda / (1 + n_i lambda). Every quantity the likelihood needs is
// therefore a correction of the pooled cross-products by per-cluster sums,
// and sigma2 profiles out in closed form, leaving a 1-D search over lambda.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>
#include <boost/math/tools/minima.hpp>

#include "deltametrics/error.hpp"

namespace deltametrics {

class LmmData {
 public:
  explicit LmmData(int num_covariates) : p_(num_covariates) {
    if (num_covariates < 1) throw InputError("design needs at least one column");
  }

  // Appends one row. The caller includes the intercept column in `x`.
  void add(std::uint64_t cluster_id, std::span<const double> x, double y) {
    if (static_cast<int>(x.size()) != p_) throw InputError("covariate length mismatch");
    if (!std::isfinite(y)) throw InputError("non-finite response");
    for (double v : x) {
      if (!std::isfinite(v)) throw InputError("non-finite covariate");
    }
    auto [it, inserted] = index_.try_emplace(cluster_id, ids_.size());
    if (inserted) ids_.push_back(cluster_id);
    cluster_.push_back(it->second);
    x_.insert(x_.end(), x.begin(), x.end());
    y_.push_back(y);
  }

  void add(std::uint64_t cluster_id, std::initializer_list<double> x, double y) {
    add(cluster_id, std::span<const double>(x.begin(), x.size()), y);
  }

  int num_covariates() const noexcept { return p_; }
  std::size_t rows() const noexcept { return y_.size(); }
  std::size_t clusters() const noexcept { return ids_.size(); }
  // Original cluster ids in compact-index order (order of first appearance).
  const std::vector<std::uint64_t>& cluster_ids() const noexcept { return ids_; }
  std::size_t cluster_of(std::size_t row) const { return cluster_[row]; }
  double x(std::size_t row, int col) const { return x_[row * p_ + col]; }
  double y(std::size_t row) const { return y_[row]; }

 private:
  int p_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::vector<std::uint64_t> ids_;
  std::vector<std::size_t> cluster_;
  std::vector<double> x_;
  std::vector<double> y_;
};

struct LmmFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd se_beta;
  Eigen::MatrixXd cov_beta;
  double tau2 = 0.0;
  double sigma2 = 0.0;
  double lambda = 0.0;  // tau2 / sigma2
  Eigen::VectorXd blup;  // per cluster, compact-index order
  std::vector<std::uint64_t> cluster_ids;
  std::vector<double> cluster_sizes;
  bool at_boundary = false;      // lambda landed on the search boundary
  bool non_identifiable = false;  // every cluster has a single row
  double reml_objective = 0.0;   // -2 restricted log-likelihood minus constants
};

namespace detail {

class RemlProblem {
 public:
  explicit RemlProblem(const LmmData& data)
      : p_(data.num_covariates()), k_(data.clusters()) {
    const std::size_t rows = data.rows();
    xtx_ = Eigen::MatrixXd::Zero(p_, p_);
    xty_ = Eigen::VectorXd::Zero(p_);
    yty_ = 0.0;
    sx_ = Eigen::MatrixXd::Zero(p_, static_cast<Eigen::Index>(k_));
    sy_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_));
    n_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k_));
    // Centre y for conditioning; the intercept absorbs the shift.
    y_shift_ = rows > 0 ? data.y(0) : 0.0;
    Eigen::VectorXd row(p_);
    for (std::size_t r = 0; r < rows; ++r) {
      for (int c = 0; c < p_; ++c) row[c] = data.x(r, c);
      const double y = data.y(r) - y_shift_;
      const auto k = static_cast<Eigen::Index>(data.cluster_of(r));
      xtx_.noalias() += row * row.transpose();
      xty_ += row * y;
      yty_ += y * y;
      sx_.col(k) += row;
      sy_[k] += y;
      n_[k] += 1.0;
    }
    rows_ = static_cast<double>(rows);
  }

  int p() const { return p_; }
  double rows() const { return rows_; }
  const Eigen::VectorXd& sizes() const { return n_; }

  struct Evaluation {
    Eigen::MatrixXd a;      // X' V^{-1} X * sigma2
    Eigen::VectorXd beta;   // for centred y
    double rss = 0.0;       // (y - X beta)' V^{-1} (y - X beta) * sigma2
    double log_det_a = 0.0;
    double sum_log = 0.0;   // sum log(1 + n_i lambda)
    double objective = 0.0;
    bool ok = false;
  };

  Evaluation evaluate(double lambda) const {
    Evaluation e;
    e.a = xtx_;
    Eigen::VectorXd b = xty_;
    double yvy = yty_;
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(k_); ++k) {
      const double w = lambda / (1.0 + n_[k] * lambda);
      e.a.noalias() -= w * sx_.col(k) * sx_.col(k).transpose();
      b -= w * sx_.col(k) * sy_[k];
      yvy -= w * sy_[k] * sy_[k];
      e.sum_log += std::log1p(n_[k] * lambda);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(e.a);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return e;
    const auto d = ldlt.vectorD();
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (!(d[i] > 0.0)) return e;
      e.log_det_a += std::log(d[i]);
    }
    e.beta = ldlt.solve(b);
    e.rss = std::max(yvy - b.dot(e.beta), std::numeric_limits<double>::min());
    const double dof = rows_ - p_;
    e.objective = dof * std::log(e.rss / dof) + e.sum_log + e.log_det_a + dof;
    e.ok = true;
    return e;
  }

  double objective(double lambda) const {
    const Evaluation e = evaluate(lambda);
    return e.ok ? e.objective : std::numeric_limits<double>::infinity();
  }

  LmmFit finish(double lambda, const Evaluation& e) const {
    LmmFit fit;
    const double dof = rows_ - p_;
    fit.lambda = lambda;
    fit.sigma2 = e.rss / dof;
    fit.tau2 = lambda * fit.sigma2;
    fit.beta = e.beta;
    fit.beta[0] += y_shift_;  // intercept column is first
    fit.cov_beta = fit.sigma2 * e.a.ldlt().solve(Eigen::MatrixXd::Identity(p_, p_));
    fit.se_beta = fit.cov_beta.diagonal().cwiseMax(0.0).cwiseSqrt();
    fit.blup = Eigen::VectorXd(static_cast<Eigen::Index>(k_));
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(k_); ++k) {
      const double resid_sum = sy_[k] - sx_.col(k).dot(e.beta);
      fit.blup[k] = lambda / (1.0 + n_[k] * lambda) * resid_sum;
    }
    fit.cluster_sizes.assign(n_.data(), n_.data() + n_.size());
    fit.reml_objective = e.objective;
    return fit;
  }

 private:
  int p_;
  std::size_t k_;
  double rows_ = 0.0;
  double y_shift_ = 0.0;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xty_;
  double yty_ = 0.0;
  Eigen::MatrixXd sx_;
  Eigen::VectorXd sy_;
  Eigen::VectorXd n_;
};

inline void check_design(const LmmData& data) {
  const int p = data.num_covariates();
  if (data.rows() <= static_cast<std::size_t>(p)) {
    throw InsufficientDataError("fewer rows than fixed effects");
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.rows()), p);
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (int c = 0; c < p; ++c) x(static_cast<Eigen::Index>(r), c) = data.x(r, c);
  }
  if ((x.col(0).array() != 1.0).any()) {
    throw InputError("first design column must be the intercept (all ones)");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw InputError("fixed-effect design is rank deficient");
}

}  // namespace detail

inline constexpr double kLogLambdaMin = -8.0;
inline constexpr double kLogLambdaMax = 8.0;

// REML objective (-2 restricted log-likelihood without constants) at lambda.
inline double reml_objective(const LmmData& data, double lambda) {
  return detail::RemlProblem(data).objective(lambda);
}

inline LmmFit fit_random_intercept(const LmmData& data) {
  if (data.clusters() < 2) throw InsufficientDataError("need at least 2 clusters");
  detail::check_design(data);
  const detail::RemlProblem problem(data);

  bool all_singletons = true;
  for (Eigen::Index k = 0; k < problem.sizes().size(); ++k) {
    if (problem.sizes()[k] > 1.0) {
      all_singletons = false;
      break;
    }
  }

  auto f = [&](double log_lambda) { return problem.objective(std::pow(10.0, log_lambda)); };

  double best_t = kLogLambdaMin;
  if (!all_singletons) {
    // Coarse scan, then Brent inside the neighbouring grid cells.
    constexpr int kGrid = 64;
    const double step = (kLogLambdaMax - kLogLambdaMin) / kGrid;
    int best_i = 0;
    double best_f = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kGrid; ++i) {
      const double v = f(kLogLambdaMin + step * i);
      if (v < best_f) {
        best_f = v;
        best_i = i;
      }
    }
    const double lo = kLogLambdaMin + step * std::max(best_i - 1, 0);
    const double hi = kLogLambdaMin + step * std::min(best_i + 1, kGrid);
    std::uintmax_t max_iter = 500;
    const auto [t, ft] = boost::math::tools::brent_find_minima(f, lo, hi, 30, max_iter);
    best_t = ft <= best_f ? t : kLogLambdaMin + step * best_i;
  }

  const double lambda = std::pow(10.0, best_t);
  const auto eval = problem.evaluate(lambda);
  if (!eval.ok) throw DegenerateError("mixed model normal equations are singular");
  LmmFit fit = problem.finish(lambda, eval);
  fit.cluster_ids = data.cluster_ids();
  fit.non_identifiable = all_singletons;
  fit.at_boundary = all_singletons || best_t <= kLogLambdaMin + 1e-6 ||
                    best_t >= kLogLambdaMax - 1e-6;
  return fit;
}

struct OlsFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd se_beta;
  Eigen::MatrixXd cov_beta;
  double sigma2 = 0.0;
};

// Ordinary least squares on the same design (cluster ids ignored).
inline OlsFit fit_ols(const LmmData& data) {
  detail::check_design(data);
  const detail::RemlProblem problem(data);
  const auto e = problem.evaluate(0.0);
  if (!e.ok) throw DegenerateError("normal equations are singular");
  const LmmFit lf = problem.finish(0.0, e);
  OlsFit fit;
  fit.beta = lf.beta;
  fit.sigma2 = lf.sigma2;
  fit.cov_beta = lf.cov_beta;
  fit.se_beta = lf.se_beta;
  return fit;
}

// Size-weighted average of the per-cluster means alpha + b_i.
inline double weighted_cluster_mean(const LmmFit& fit, std::span<const double> sizes) {
  if (static_cast<Eigen::Index>(sizes.size()) != fit.blup.size()) {
    throw InputError("cluster size count does not match BLUP count");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    num += (fit.beta[0] + fit.blup[static_cast<Eigen::Index>(i)]) * sizes[i];
    den += sizes[i];
  }
  if (!(den > 0.0)) throw InputError("cluster sizes must sum to a positive value");
  return num / den;
}

inline double weighted_cluster_mean(const LmmFit& fit) {
  return weighted_cluster_mean(fit, fit.cluster_sizes);
}

}  // namespace deltametrics
