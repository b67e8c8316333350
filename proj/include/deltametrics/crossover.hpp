#pragma once

// Two-period cross-over analysis with arbitrary missingness.
//
// Each (user, period) cell is augmented to (I, X) with X = 0 when the user is
// absent, so the period metric (mean over present users) is X-bar / I-bar,
// a ratio of complete-data means. The Delta method turns the 4x4 covariance
// of (I1, X1, I2, X2) means into a 2x2 covariance of the two period metrics,
// and the cross-over mean model (theta1 + D, theta2, theta1, theta2 + D)
// is then fitted by generalized least squares on the four group-period
// metrics.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>

#include "deltametrics/distributions.hpp"
#include "deltametrics/error.hpp"
#include "deltametrics/lmm.hpp"
#include "deltametrics/moments.hpp"
#include "deltametrics/ratio_ci.hpp"

namespace deltametrics {

// Group I is treated in period 1, group II in period 2.
enum class CrossoverGroup { kI = 0, kII = 1 };

inline std::string_view to_string(CrossoverGroup g) {
  return g == CrossoverGroup::kI ? "I" : "II";
}

struct CrossoverObservation {
  std::uint64_t user = 0;
  CrossoverGroup group = CrossoverGroup::kI;
  int period = 1;
  std::optional<double> value;  // nullopt: recorded as missing
};

struct PanelUser {
  std::uint64_t user = 0;
  CrossoverGroup group = CrossoverGroup::kI;
  std::array<double, 2> present{0.0, 0.0};  // I_t
  std::array<double, 2> value{0.0, 0.0};    // X_t, zero when absent

  bool complete() const { return present[0] == 1.0 && present[1] == 1.0; }
  int periods_present() const { return static_cast<int>(present[0] + present[1]); }
  bool treated(int period_index) const {
    return (group == CrossoverGroup::kI) == (period_index == 0);
  }
};

struct AugmentedPanel {
  std::vector<PanelUser> users;  // order of first appearance

  std::vector<PanelUser> group(CrossoverGroup g) const {
    std::vector<PanelUser> out;
    for (const auto& u : users) {
      if (u.group == g) out.push_back(u);
    }
    return out;
  }
};

inline AugmentedPanel augment(std::span<const CrossoverObservation> raw) {
  AugmentedPanel panel;
  std::unordered_map<std::uint64_t, std::size_t> index;
  std::vector<std::array<bool, 2>> seen;
  for (const auto& o : raw) {
    if (o.period != 1 && o.period != 2) {
      throw InputError("period must be 1 or 2, got " + std::to_string(o.period));
    }
    if (o.group != CrossoverGroup::kI && o.group != CrossoverGroup::kII) {
      throw InputError("unknown group label");
    }
    auto [it, inserted] = index.try_emplace(o.user, panel.users.size());
    if (inserted) {
      PanelUser u;
      u.user = o.user;
      u.group = o.group;
      panel.users.push_back(u);
      seen.push_back({false, false});
    }
    PanelUser& u = panel.users[it->second];
    if (u.group != o.group) {
      throw InputError("user " + std::to_string(o.user) + " appears in both groups");
    }
    const int t = o.period - 1;
    if (seen[it->second][t]) {
      throw InputError("duplicate row for user " + std::to_string(o.user) + " period " +
                       std::to_string(o.period));
    }
    seen[it->second][t] = true;
    if (o.value) {
      if (!std::isfinite(*o.value)) throw InputError("non-finite value");
      u.present[t] = 1.0;
      u.value[t] = *o.value;
    }
  }
  // Users absent from both periods carry no information.
  std::erase_if(panel.users, [](const PanelUser& u) { return u.periods_present() == 0; });
  return panel;
}

inline AugmentedPanel augment(const std::vector<CrossoverObservation>& raw) {
  return augment(std::span<const CrossoverObservation>(raw));
}

struct GroupMetricVector {
  std::int64_t users = 0;
  Eigen::Vector4d means;      // (I1, X1, I2, X2) means
  Eigen::Matrix4d cov_means;  // sample covariance / users
  Eigen::Vector2d metric;     // (X1-bar / I1-bar, X2-bar / I2-bar)
  Eigen::Matrix2d metric_cov; // Delta covariance of `metric`
};

inline GroupMetricVector metric_cov(std::span<const PanelUser> users) {
  if (users.size() < 2) throw InsufficientDataError("need at least 2 users per group");
  QuadMoments acc;
  for (const auto& u : users) {
    acc = accumulate(std::move(acc),
                     Eigen::Vector4d(u.present[0], u.value[0], u.present[1], u.value[1]));
  }
  GroupMetricVector g;
  g.users = acc.n();
  g.means = acc.mean();
  g.cov_means = acc.covariance() / static_cast<double>(acc.n());
  // Gradient of X_t / I_t in (I_t, X_t): (-X_t / I_t^2, 1 / I_t).
  Eigen::Matrix<double, 2, 4> grad = Eigen::Matrix<double, 2, 4>::Zero();
  for (int t = 0; t < 2; ++t) {
    const double i_bar = g.means[2 * t];
    const double x_bar = g.means[2 * t + 1];
    if (!(i_bar > 0.0)) {
      throw InsufficientDataError("period " + std::to_string(t + 1) + " has no observations");
    }
    g.metric[t] = x_bar / i_bar;
    grad(t, 2 * t) = -x_bar / (i_bar * i_bar);
    grad(t, 2 * t + 1) = 1.0 / i_bar;
  }
  g.metric_cov = grad * g.cov_means * grad.transpose();
  g.metric_cov = 0.5 * (g.metric_cov + g.metric_cov.transpose()).eval();
  return g;
}

inline GroupMetricVector metric_cov(const std::vector<PanelUser>& users) {
  return metric_cov(std::span<const PanelUser>(users));
}

struct CrossoverFit {
  Eigen::Vector3d theta;   // (theta1, theta2, Delta)
  Eigen::Matrix3d covariance;
  double se_delta = 0.0;
  ConfidenceInterval ci;   // for Delta
  int iterations = 0;      // Gauss-Newton iterations (relative model)
};

namespace detail {

struct StackedMetrics {
  Eigen::Vector4d x;       // (group I p1, group I p2, group II p1, group II p2)
  Eigen::Matrix4d weight;  // Sigma_X^{-1}
};

inline StackedMetrics stack_groups(const GroupMetricVector& g1, const GroupMetricVector& g2) {
  StackedMetrics s;
  s.x << g1.metric[0], g1.metric[1], g2.metric[0], g2.metric[1];
  Eigen::Matrix4d sigma = Eigen::Matrix4d::Zero();
  sigma.topLeftCorner<2, 2>() = g1.metric_cov;
  sigma.bottomRightCorner<2, 2>() = g2.metric_cov;
  Eigen::LDLT<Eigen::Matrix4d> ldlt(sigma);
  const auto d = ldlt.vectorD();
  const double scale = sigma.diagonal().cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(scale > 0.0) || (d.array() <= 1e-14 * scale).any()) {
    throw DegenerateError("metric covariance is singular");
  }
  s.weight = ldlt.solve(Eigen::Matrix4d::Identity());
  s.weight = 0.5 * (s.weight + s.weight.transpose()).eval();
  return s;
}

inline void finish_fit(CrossoverFit& fit, double alpha) {
  fit.se_delta = std::sqrt(std::max(fit.covariance(2, 2), 0.0));
  fit.ci.alpha = alpha;
  fit.ci.method = IntervalMethod::kDelta;
  fit.ci.point = fit.theta[2];
  fit.ci.se = fit.se_delta;
  const double half = normal_critical(alpha) * fit.se_delta;
  fit.ci.lower = fit.theta[2] - half;
  fit.ci.upper = fit.theta[2] + half;
}

}  // namespace detail

// Design of the additive cross-over mean model.
inline Eigen::Matrix<double, 4, 3> crossover_design() {
  Eigen::Matrix<double, 4, 3> m;
  m << 1, 0, 1,  //
      0, 1, 0,   //
      1, 0, 0,   //
      0, 1, 1;
  return m;
}

// GLS estimate (M' W M)^{-1} M' W X with W = Sigma_X^{-1}; covariance is the
// inverse Fisher information (M' W M)^{-1}.
inline CrossoverFit fit_crossover(const GroupMetricVector& group_i,
                                  const GroupMetricVector& group_ii, double alpha = 0.05) {
  check_alpha(alpha);
  const auto s = detail::stack_groups(group_i, group_ii);
  const auto m = crossover_design();
  const Eigen::Matrix3d info = m.transpose() * s.weight * m;
  CrossoverFit fit;
  fit.covariance = info.ldlt().solve(Eigen::Matrix3d::Identity());
  fit.theta = fit.covariance * (m.transpose() * s.weight * s.x);
  detail::finish_fit(fit, alpha);
  return fit;
}

inline CrossoverFit fit_crossover(const AugmentedPanel& panel, double alpha = 0.05) {
  return fit_crossover(metric_cov(panel.group(CrossoverGroup::kI)),
                       metric_cov(panel.group(CrossoverGroup::kII)), alpha);
}

// Multiplicative variant (theta1 (1 + D), theta2, theta1, theta2 (1 + D)),
// solved by Gauss-Newton under the same GLS weight.
inline CrossoverFit fit_crossover_relative(const GroupMetricVector& group_i,
                                           const GroupMetricVector& group_ii,
                                           double alpha = 0.05) {
  check_alpha(alpha);
  const auto s = detail::stack_groups(group_i, group_ii);
  Eigen::Vector3d th;
  th[0] = s.x[2];
  th[1] = s.x[1];
  if (th[0] == 0.0 || th[1] == 0.0) throw DegenerateError("baseline metric is zero");
  th[2] = 0.5 * (s.x[0] / th[0] + s.x[3] / th[1]) - 1.0;

  auto mean_of = [](const Eigen::Vector3d& t) {
    return Eigen::Vector4d(t[0] * (1.0 + t[2]), t[1], t[0], t[1] * (1.0 + t[2]));
  };
  auto jacobian_of = [](const Eigen::Vector3d& t) {
    Eigen::Matrix<double, 4, 3> j;
    j << 1.0 + t[2], 0, t[0],  //
        0, 1, 0,               //
        1, 0, 0,               //
        0, 1.0 + t[2], t[1];
    return j;
  };

  CrossoverFit fit;
  constexpr int kMaxIter = 100;
  for (fit.iterations = 1; fit.iterations <= kMaxIter; ++fit.iterations) {
    const auto j = jacobian_of(th);
    const Eigen::Matrix3d info = j.transpose() * s.weight * j;
    const Eigen::Vector3d step =
        info.ldlt().solve(j.transpose() * s.weight * (s.x - mean_of(th)));
    th += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  const auto j = jacobian_of(th);
  fit.theta = th;
  fit.covariance = (j.transpose() * s.weight * j).ldlt().solve(Eigen::Matrix3d::Identity());
  detail::finish_fit(fit, alpha);
  return fit;
}

namespace detail {

// Long-format rows y ~ 1 + IsTreatment + Period2 over observed cells.
inline LmmData crossover_rows(std::span<const PanelUser> users) {
  LmmData data(3);
  for (const auto& u : users) {
    for (int t = 0; t < 2; ++t) {
      if (u.present[t] != 1.0) continue;
      data.add(u.user, {1.0, u.treated(t) ? 1.0 : 0.0, t == 1 ? 1.0 : 0.0}, u.value[t]);
    }
  }
  return data;
}

// (b0, b1, b2) -> (theta1, theta2, Delta) = (b0, b0 + b2, b1).
inline Eigen::Matrix3d regression_to_theta() {
  Eigen::Matrix3d j;
  j << 1, 0, 0,  //
      1, 0, 1,   //
      0, 1, 0;
  return j;
}

inline CrossoverFit fit_from_regression(const Eigen::VectorXd& beta, const Eigen::MatrixXd& cov,
                                        double alpha) {
  const Eigen::Matrix3d j = regression_to_theta();
  CrossoverFit fit;
  fit.theta = j * Eigen::Vector3d(beta[0], beta[1], beta[2]);
  fit.covariance = j * Eigen::Matrix3d(cov) * j.transpose();
  finish_fit(fit, alpha);
  return fit;
}

}  // namespace detail

// Random-intercept mixed model y ~ IsTreatment + Period + (1 | user) over the
// observed cells.
inline CrossoverFit fit_crossover_lmm(const AugmentedPanel& panel, double alpha = 0.05) {
  check_alpha(alpha);
  const LmmFit lf = fit_random_intercept(detail::crossover_rows(panel.users));
  return detail::fit_from_regression(lf.beta, lf.cov_beta, alpha);
}

struct EffectEstimate {
  double estimate = 0.0;
  double variance = 0.0;
};

struct DecompositionReport {
  EffectEstimate complete;    // mixed model on users seen in both periods
  EffectEstimate incomplete;  // OLS on users seen once
  EffectEstimate weighted;    // inverse-variance weighted average
  std::size_t complete_users = 0;
  std::size_t incomplete_users = 0;
};

inline EffectEstimate inverse_variance_average(const EffectEstimate& a, const EffectEstimate& b) {
  if (!(a.variance > 0.0) || !(b.variance > 0.0)) {
    throw DegenerateError("inverse-variance weighting needs positive variances");
  }
  const double wa = 1.0 / a.variance;
  const double wb = 1.0 / b.variance;
  return {(wa * a.estimate + wb * b.estimate) / (wa + wb), 1.0 / (wa + wb)};
}

inline DecompositionReport decompose_complete_incomplete(const AugmentedPanel& panel) {
  std::vector<PanelUser> complete;
  std::vector<PanelUser> incomplete;
  for (const auto& u : panel.users) {
    (u.complete() ? complete : incomplete).push_back(u);
  }
  if (complete.empty()) throw InsufficientDataError("no users observed in both periods");
  if (incomplete.empty()) throw InsufficientDataError("no users observed in a single period");

  DecompositionReport r;
  r.complete_users = complete.size();
  r.incomplete_users = incomplete.size();
  const LmmFit lf = fit_random_intercept(detail::crossover_rows(complete));
  r.complete = {lf.beta[1], lf.cov_beta(1, 1)};
  const OlsFit of = fit_ols(detail::crossover_rows(incomplete));
  r.incomplete = {of.beta[1], of.cov_beta(1, 1)};
  r.weighted = inverse_variance_average(r.complete, r.incomplete);
  return r;
}

}  // namespace deltametrics
