#pragma once

// Confidence intervals for the percent change (mu_y - mu_x) / mu_x.
//
// All five methods work from the same sufficient statistics: the two sample
// means, the variances/covariance of those means, and third central moments
// for the skewness of the linearized estimator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include <boost/math/tools/roots.hpp>

#include "deltametrics/distributions.hpp"
#include "deltametrics/error.hpp"
#include "deltametrics/moments.hpp"

namespace deltametrics {

enum class IntervalMethod {
  kDelta,
  kDeltaBiasCorrected,
  kFieller,
  kEdgeworth,
  kEdgeworthBiasCorrected,
};

inline std::string_view to_string(IntervalMethod m) {
  switch (m) {
    case IntervalMethod::kDelta: return "delta";
    case IntervalMethod::kDeltaBiasCorrected: return "delta-bc";
    case IntervalMethod::kFieller: return "fieller";
    case IntervalMethod::kEdgeworth: return "edgeworth";
    case IntervalMethod::kEdgeworthBiasCorrected: return "edgeworth-bc";
  }
  return "unknown";
}

inline IntervalMethod parse_interval_method(std::string_view name) {
  for (auto m : {IntervalMethod::kDelta, IntervalMethod::kDeltaBiasCorrected,
                 IntervalMethod::kFieller, IntervalMethod::kEdgeworth,
                 IntervalMethod::kEdgeworthBiasCorrected}) {
    if (to_string(m) == name) return m;
  }
  throw InputError("unknown interval method '" + std::string(name) + "'");
}

struct ConfidenceInterval {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
  IntervalMethod method = IntervalMethod::kDelta;
  double se = 0.0;       // standard error of the point estimate
  std::string warning;   // non-empty when a fallback was taken

  double width() const { return upper - lower; }
  bool contains(double value) const { return lower <= value && value <= upper; }
};

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
}

class RatioInput {
 public:
  // Paired treatment/control samples of equal length; s_xy is estimated.
  static RatioInput paired(const PairedMoments& moments, double alpha = 0.05) {
    check_alpha(alpha);
    const PairedStats s = derive_stats(moments);
    const double n = static_cast<double>(s.n);
    RatioInput in;
    in.alpha_ = alpha;
    in.n_x_ = in.n_y_ = s.n;
    in.mean_x_ = s.mean_x;
    in.mean_y_ = s.mean_y;
    in.var_mean_x_ = s.var_x / n;
    in.var_mean_y_ = s.var_y / n;
    in.cov_means_ = s.cov_xy / n;
    in.k2_x_ = s.m20 / n;
    in.k2_y_ = s.m02 / n;
    in.k2_xy_ = s.m11 / n;
    in.k3_x_ = s.m30 / (n * n);
    in.k3_y_ = s.m03 / (n * n);
    in.k3_xxy_ = s.m21 / (n * n);
    in.k3_xyy_ = s.m12 / (n * n);
    return in;
  }

  // Independent groups, possibly of unequal length; the covariance of the
  // two means is zero.
  static RatioInput independent(const UniMoments& control, const UniMoments& treatment,
                                double alpha = 0.05) {
    check_alpha(alpha);
    const UniStats x = derive_stats(control);
    const UniStats y = derive_stats(treatment);
    const double nx = static_cast<double>(x.n);
    const double ny = static_cast<double>(y.n);
    RatioInput in;
    in.alpha_ = alpha;
    in.n_x_ = x.n;
    in.n_y_ = y.n;
    in.mean_x_ = x.mean;
    in.mean_y_ = y.mean;
    in.var_mean_x_ = x.variance / nx;
    in.var_mean_y_ = y.variance / ny;
    in.k2_x_ = x.central_m2 / nx;
    in.k2_y_ = y.central_m2 / ny;
    in.k3_x_ = x.central_m3 / (nx * nx);
    in.k3_y_ = y.central_m3 / (ny * ny);
    return in;
  }

  double alpha() const { return alpha_; }
  std::int64_t n_x() const { return n_x_; }
  std::int64_t n_y() const { return n_y_; }
  std::int64_t min_n() const { return std::min(n_x_, n_y_); }
  double mean_x() const { return mean_x_; }
  double mean_y() const { return mean_y_; }
  double var_mean_x() const { return var_mean_x_; }
  double var_mean_y() const { return var_mean_y_; }
  double cov_means() const { return cov_means_; }

  // Skewness of the linearized estimator W-bar = b * Y-bar + a * X-bar with
  // plug-in gradient (a, b) = (-Y-bar / X-bar^2, 1 / X-bar). For paired data
  // this equals kappa_w / sqrt(n).
  double linearized_skewness() const {
    const double a = -mean_y_ / (mean_x_ * mean_x_);
    const double b = 1.0 / mean_x_;
    const double k2 = a * a * k2_x_ + 2.0 * a * b * k2_xy_ + b * b * k2_y_;
    const double k3 = a * a * a * k3_x_ + 3.0 * a * a * b * k3_xxy_ +
                      3.0 * a * b * b * k3_xyy_ + b * b * b * k3_y_;
    if (!(k2 > 0.0)) return 0.0;
    return k3 / std::pow(k2, 1.5);
  }

 private:
  RatioInput() = default;

  double alpha_ = 0.05;
  std::int64_t n_x_ = 0;
  std::int64_t n_y_ = 0;
  double mean_x_ = 0.0;
  double mean_y_ = 0.0;
  double var_mean_x_ = 0.0;
  double var_mean_y_ = 0.0;
  double cov_means_ = 0.0;
  // Cumulants of the means computed with divisor-n central moments.
  double k2_x_ = 0.0, k2_y_ = 0.0, k2_xy_ = 0.0;
  double k3_x_ = 0.0, k3_y_ = 0.0, k3_xxy_ = 0.0, k3_xyy_ = 0.0;
};

namespace detail {

inline void require_nonzero_denominator(const RatioInput& in) {
  if (in.mean_x() == 0.0 || !std::isfinite(in.mean_y() / in.mean_x())) {
    throw DegenerateError("control mean is zero; percent change undefined");
  }
}

// Variance of Y-bar / X-bar by the Delta method.
inline double delta_ratio_variance(const RatioInput& in) {
  // Factored through r = Y-bar / X-bar so that Y = X cancels exactly.
  const double mx = in.mean_x();
  const double r = in.mean_y() / mx;
  const double v = (in.var_mean_y() - 2.0 * r * in.cov_means() + r * r * in.var_mean_x()) / (mx * mx);
  return std::max(v, 0.0);
}

}  // namespace detail

// Second-order bias correction: Y-bar s_x^2 / (n X-bar^3) - s_xy / (n X-bar^2).
inline double ratio_bias_correction(const RatioInput& in) {
  const double mx = in.mean_x();
  const double r = in.mean_y() / mx;
  return (r * in.var_mean_x() - in.cov_means()) / (mx * mx);
}

inline ConfidenceInterval delta_ci(const RatioInput& in, bool bias_correct) {
  detail::require_nonzero_denominator(in);
  ConfidenceInterval ci;
  ci.alpha = in.alpha();
  ci.method = bias_correct ? IntervalMethod::kDeltaBiasCorrected : IntervalMethod::kDelta;
  ci.point = in.mean_y() / in.mean_x() - 1.0;
  if (bias_correct) ci.point += ratio_bias_correction(in);
  ci.se = std::sqrt(detail::delta_ratio_variance(in));
  const double half = normal_critical(in.alpha()) * ci.se;
  ci.lower = ci.point - half;
  ci.upper = ci.point + half;
  return ci;
}

// Fieller's interval for the percent change in its textbook form
//   {Y/X - 1 - g s_xy / s_x^2 +- t / (sqrt(n) X) sqrt(...)} / (1 - g),
// with the -1 inside the braces. Degrees of freedom are min(n_x, n_y) - 1.
inline ConfidenceInterval fieller_ci(const RatioInput& in) {
  detail::require_nonzero_denominator(in);
  const double mx = in.mean_x();
  const double ratio = in.mean_y() / mx;
  const double t = student_t_critical(in.alpha(), static_cast<double>(in.min_n() - 1));
  const double t2_over_mx2 = t * t / (mx * mx);
  const double g = t2_over_mx2 * in.var_mean_x();
  if (g >= 1.0) {
    throw DegenerateError("Fieller interval is unbounded (g = " + std::to_string(g) + " >= 1)");
  }
  const double c = in.cov_means();
  // g * c / v_x and g * c^2 / v_x written without dividing by v_x.
  const double center = ratio - t2_over_mx2 * c;
  const double disc = in.var_mean_y() - 2.0 * ratio * c + ratio * ratio * in.var_mean_x() -
                      g * in.var_mean_y() + t2_over_mx2 * c * c;
  const double half = t / std::abs(mx) * std::sqrt(std::max(disc, 0.0));
  ConfidenceInterval ci;
  ci.alpha = in.alpha();
  ci.method = IntervalMethod::kFieller;
  ci.point = ratio - 1.0;
  ci.lower = (center - 1.0 - half) / (1.0 - g);
  ci.upper = (center - 1.0 + half) / (1.0 - g);
  ci.se = std::sqrt(detail::delta_ratio_variance(in));
  if (!ci.contains(ci.point)) {
    ci.warning = "Fieller interval excludes the point estimate (g = " + std::to_string(g) +
                 "); scaling the -1 term by 1 / (1 - g) shifts it by -g / (1 - g)";
  }
  return ci;
}

// One-term Edgeworth cdf of the standardized estimator with skewness gamma
// (gamma = kappa_w / sqrt(n)).
inline double edgeworth_cdf(double t, double gamma) {
  return normal_cdf(t) - gamma * (t * t - 1.0) * normal_pdf(t) / 6.0;
}

struct EdgeworthQuantile {
  double value = 0.0;
  bool fallback = false;  // normal quantile used instead
};

// Solves edgeworth_cdf(t) = prob on [-10, 10] to 1e-10. Falls back to the
// normal quantile when the equation has no unique root there.
inline EdgeworthQuantile edgeworth_quantile(double prob, double gamma) {
  if (gamma == 0.0) return {normal_quantile(prob), false};
  constexpr double kLo = -10.0;
  constexpr double kHi = 10.0;
  constexpr int kGrid = 2000;
  auto f = [&](double t) { return edgeworth_cdf(t, gamma) - prob; };
  int sign_changes = 0;
  double bracket_lo = kLo;
  double bracket_hi = kHi;
  double prev_t = kLo;
  double prev_f = f(kLo);
  for (int i = 1; i <= kGrid; ++i) {
    const double t = kLo + (kHi - kLo) * i / kGrid;
    const double ft = f(t);
    if ((prev_f < 0.0) != (ft < 0.0)) {
      ++sign_changes;
      bracket_lo = prev_t;
      bracket_hi = t;
    }
    prev_t = t;
    prev_f = ft;
  }
  if (sign_changes != 1) return {normal_quantile(prob), true};
  auto tol = [](double a, double b) { return std::abs(b - a) < 1e-12; };
  std::uintmax_t max_iter = 200;
  auto [a, b] = boost::math::tools::toms748_solve(f, bracket_lo, bracket_hi, tol, max_iter);
  return {0.5 * (a + b), false};
}

// Delta interval with +/- z replaced by Edgeworth quantiles. The interval
// inverts the pivot sqrt(n)(T - theta)/sigma, so the upper quantile sets the
// lower bound.
inline ConfidenceInterval edgeworth_ci(const RatioInput& in, bool bias_correct) {
  if (in.min_n() < 3) throw InsufficientDataError("Edgeworth interval needs n >= 3");
  ConfidenceInterval ci = delta_ci(in, bias_correct);
  ci.method = bias_correct ? IntervalMethod::kEdgeworthBiasCorrected : IntervalMethod::kEdgeworth;
  const double gamma = in.linearized_skewness();
  const EdgeworthQuantile lo_q = edgeworth_quantile(in.alpha() / 2.0, gamma);
  const EdgeworthQuantile hi_q = edgeworth_quantile(1.0 - in.alpha() / 2.0, gamma);
  if (lo_q.fallback || hi_q.fallback) {
    const double z = normal_critical(in.alpha());
    ci.lower = ci.point - z * ci.se;
    ci.upper = ci.point + z * ci.se;
    ci.warning = "Edgeworth cdf not invertible on [-10, 10]; normal quantiles used";
    return ci;
  }
  // The standardized cdf's correction has the opposite tail sign to the
  // studentized one, so its quantiles are applied without reflection.
  ci.lower = ci.point + lo_q.value * ci.se;
  ci.upper = ci.point + hi_q.value * ci.se;
  return ci;
}

inline ConfidenceInterval ratio_ci(const RatioInput& in, IntervalMethod method) {
  switch (method) {
    case IntervalMethod::kDelta: return delta_ci(in, false);
    case IntervalMethod::kDeltaBiasCorrected: return delta_ci(in, true);
    case IntervalMethod::kFieller: return fieller_ci(in);
    case IntervalMethod::kEdgeworth: return edgeworth_ci(in, false);
    case IntervalMethod::kEdgeworthBiasCorrected: return edgeworth_ci(in, true);
  }
  throw InputError("unknown interval method");
}

}  // namespace deltametrics
