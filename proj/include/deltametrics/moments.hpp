#pragma once

// Mergeable raw-moment accumulators.
//
// Every accumulator stores power sums of the data shifted by the first value
// it saw. Merging re-expresses one side's sums about the other side's shift
// (a binomial expansion) and then adds componentwise, so merge stays a plain
// sum while the shift keeps raw-moment cancellation bounded.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Core>

#include "deltametrics/error.hpp"

namespace deltametrics {

namespace detail {

inline constexpr double kBinomial[4][4] = {
    {1, 0, 0, 0}, {1, 1, 0, 0}, {1, 2, 1, 0}, {1, 3, 3, 1}};

inline double int_pow(double base, int exponent) {
  double r = 1.0;
  for (int i = 0; i < exponent; ++i) r *= base;
  return r;
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw InputError(std::string("non-finite ") + what + " observation");
  }
}

// Power sums S[i][j] = sum (u^i v^j), i + j <= 3, with S[0][0] = n.
using PowerTable = std::array<std::array<double, 4>, 4>;

// Sums of (u + du)^i (v + dv)^j from sums of u^i v^j.
inline PowerTable shift_power_table(const PowerTable& s, double du, double dv) {
  PowerTable out{};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; i + j < 4; ++j) {
      double acc = 0.0;
      for (int k = 0; k <= i; ++k) {
        for (int l = 0; l <= j; ++l) {
          acc += kBinomial[i][k] * kBinomial[j][l] * int_pow(du, i - k) *
                 int_pow(dv, j - l) * s[k][l];
        }
      }
      out[i][j] = acc;
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Univariate

struct UniStats {
  std::int64_t n = 0;
  double mean = 0.0;
  double variance = 0.0;    // divisor n - 1
  double central_m2 = 0.0;  // divisor n
  double central_m3 = 0.0;  // divisor n

  // Bias-uncorrected sample skewness m3 / m2^{3/2}; 0 for constant data.
  double skewness() const {
    return central_m2 > 0.0 ? central_m3 / std::pow(central_m2, 1.5) : 0.0;
  }
};

class UniMoments {
 public:
  UniMoments() = default;

  std::int64_t n() const noexcept { return n_; }
  double shift() const noexcept { return shift_; }

  // sum of (x - shift)^k, k in 1..3.
  double shifted_sum(int k) const { return table_[k][0]; }

  // sum of x^k, k in 0..3.
  double raw_sum(int k) const {
    return detail::shift_power_table(table_, shift_, 0.0)[k][0];
  }

  friend UniMoments accumulate(UniMoments acc, double x) {
    detail::require_finite(x, "x");
    if (acc.n_ == 0) acc.shift_ = x;
    const double u = x - acc.shift_;
    acc.table_[0][0] += 1.0;
    acc.table_[1][0] += u;
    acc.table_[2][0] += u * u;
    acc.table_[3][0] += u * u * u;
    ++acc.n_;
    return acc;
  }

  friend UniMoments merge(UniMoments a, const UniMoments& b) {
    if (b.n_ == 0) return a;
    if (a.n_ == 0) return b;
    const double target = std::min(a.shift_, b.shift_);
    auto ta = detail::shift_power_table(a.table_, a.shift_ - target, 0.0);
    auto tb = detail::shift_power_table(b.table_, b.shift_ - target, 0.0);
    UniMoments out;
    out.n_ = a.n_ + b.n_;
    out.shift_ = target;
    for (int k = 0; k < 4; ++k) out.table_[k][0] = ta[k][0] + tb[k][0];
    return out;
  }

  friend UniStats derive_stats(const UniMoments& m) {
    if (m.n_ < 2) throw InsufficientDataError("need at least 2 observations");
    const double n = static_cast<double>(m.n_);
    const double du = m.table_[1][0] / n;
    const auto c = detail::shift_power_table(m.table_, -du, 0.0);
    UniStats s;
    s.n = m.n_;
    s.mean = m.shift_ + du;
    const double ss = std::max(c[2][0], 0.0);
    s.variance = ss / (n - 1.0);
    s.central_m2 = ss / n;
    s.central_m3 = c[3][0] / n;
    return s;
  }

 private:
  std::int64_t n_ = 0;
  double shift_ = 0.0;
  detail::PowerTable table_{};
};

template <typename Range>
UniMoments accumulate_all(UniMoments acc, const Range& xs) {
  for (double x : xs) acc = accumulate(std::move(acc), x);
  return acc;
}

// ---------------------------------------------------------------------------
// Paired (x, y) up to third order, including the mixed terms x^2 y and x y^2.

struct PairedStats {
  std::int64_t n = 0;
  double mean_x = 0.0;
  double mean_y = 0.0;
  double var_x = 0.0;   // divisor n - 1
  double var_y = 0.0;   // divisor n - 1
  double cov_xy = 0.0;  // divisor n - 1
  // Central moments with divisor n: m[i][j] = mean((x - mean_x)^i (y - mean_y)^j).
  double m20 = 0.0, m02 = 0.0, m11 = 0.0;
  double m30 = 0.0, m03 = 0.0, m21 = 0.0, m12 = 0.0;
};

class PairedMoments {
 public:
  PairedMoments() = default;

  std::int64_t n() const noexcept { return n_; }
  double shift_x() const noexcept { return shift_x_; }
  double shift_y() const noexcept { return shift_y_; }

  // sum of x^i y^j over the accumulated pairs, i + j <= 3.
  double raw_sum(int i, int j) const {
    return detail::shift_power_table(table_, shift_x_, shift_y_)[i][j];
  }

  friend PairedMoments accumulate(PairedMoments acc, double x, double y) {
    detail::require_finite(x, "x");
    detail::require_finite(y, "y");
    if (acc.n_ == 0) {
      acc.shift_x_ = x;
      acc.shift_y_ = y;
    }
    const double u = x - acc.shift_x_;
    const double v = y - acc.shift_y_;
    const double up[4] = {1.0, u, u * u, u * u * u};
    const double vp[4] = {1.0, v, v * v, v * v * v};
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; i + j < 4; ++j) acc.table_[i][j] += up[i] * vp[j];
    }
    ++acc.n_;
    return acc;
  }

  // The merged accumulator takes the lexicographically smaller shift, which
  // makes merge(a, b) and merge(b, a) bitwise identical.
  friend PairedMoments merge(PairedMoments a, const PairedMoments& b) {
    if (b.n_ == 0) return a;
    if (a.n_ == 0) return b;
    const bool keep_a = std::pair(a.shift_x_, a.shift_y_) <= std::pair(b.shift_x_, b.shift_y_);
    const double tx = keep_a ? a.shift_x_ : b.shift_x_;
    const double ty = keep_a ? a.shift_y_ : b.shift_y_;
    auto ta = detail::shift_power_table(a.table_, a.shift_x_ - tx, a.shift_y_ - ty);
    auto tb = detail::shift_power_table(b.table_, b.shift_x_ - tx, b.shift_y_ - ty);
    PairedMoments out;
    out.n_ = a.n_ + b.n_;
    out.shift_x_ = tx;
    out.shift_y_ = ty;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; i + j < 4; ++j) out.table_[i][j] = ta[i][j] + tb[i][j];
    }
    return out;
  }

  friend PairedStats derive_stats(const PairedMoments& m) {
    if (m.n_ < 2) throw InsufficientDataError("need at least 2 observation pairs");
    const double n = static_cast<double>(m.n_);
    const double du = m.table_[1][0] / n;
    const double dv = m.table_[0][1] / n;
    const auto c = detail::shift_power_table(m.table_, -du, -dv);
    PairedStats s;
    s.n = m.n_;
    s.mean_x = m.shift_x_ + du;
    s.mean_y = m.shift_y_ + dv;
    const double sxx = std::max(c[2][0], 0.0);
    const double syy = std::max(c[0][2], 0.0);
    s.var_x = sxx / (n - 1.0);
    s.var_y = syy / (n - 1.0);
    s.cov_xy = c[1][1] / (n - 1.0);
    s.m20 = sxx / n;
    s.m02 = syy / n;
    s.m11 = c[1][1] / n;
    s.m30 = c[3][0] / n;
    s.m03 = c[0][3] / n;
    s.m21 = c[2][1] / n;
    s.m12 = c[1][2] / n;
    return s;
  }

 private:
  std::int64_t n_ = 0;
  double shift_x_ = 0.0;
  double shift_y_ = 0.0;
  detail::PowerTable table_{};
};

inline PairedMoments accumulate_all(PairedMoments acc, std::span<const double> xs,
                                    std::span<const double> ys) {
  if (xs.size() != ys.size()) throw InputError("x and y lengths differ");
  for (std::size_t i = 0; i < xs.size(); ++i) acc = accumulate(std::move(acc), xs[i], ys[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Vector moments up to second order (mean vector and scatter matrix).

template <int Dim>
class VectorMoments {
 public:
  using Vector = Eigen::Matrix<double, Dim, 1>;
  using Matrix = Eigen::Matrix<double, Dim, Dim>;

  VectorMoments() : shift_(Vector::Zero()), sum_(Vector::Zero()), scatter_(Matrix::Zero()) {}

  std::int64_t n() const noexcept { return n_; }
  const Vector& shift() const noexcept { return shift_; }

  friend VectorMoments accumulate(VectorMoments acc, const Vector& x) {
    for (int k = 0; k < Dim; ++k) detail::require_finite(x[k], "vector");
    if (acc.n_ == 0) acc.shift_ = x;
    const Vector u = x - acc.shift_;
    acc.sum_ += u;
    acc.scatter_.noalias() += u * u.transpose();
    ++acc.n_;
    return acc;
  }

  friend VectorMoments merge(VectorMoments a, const VectorMoments& b) {
    if (b.n_ == 0) return a;
    if (a.n_ == 0) return b;
    const bool keep_a = std::lexicographical_compare(
                            b.shift_.data(), b.shift_.data() + Dim, a.shift_.data(),
                            a.shift_.data() + Dim) == false;
    const Vector target = keep_a ? a.shift_ : b.shift_;
    VectorMoments out;
    out.n_ = a.n_ + b.n_;
    out.shift_ = target;
    VectorMoments ra = a.reshifted(target);
    VectorMoments rb = b.reshifted(target);
    out.sum_ = ra.sum_ + rb.sum_;
    out.scatter_ = ra.scatter_ + rb.scatter_;
    return out;
  }

  Vector mean() const {
    if (n_ == 0) throw InsufficientDataError("no observations");
    return shift_ + sum_ / static_cast<double>(n_);
  }

  // Sample covariance with divisor n - 1.
  Matrix covariance() const {
    if (n_ < 2) throw InsufficientDataError("need at least 2 observations");
    const double n = static_cast<double>(n_);
    Matrix c = (scatter_ - sum_ * sum_.transpose() / n) / (n - 1.0);
    Matrix sym = 0.5 * (c + c.transpose());
    for (int k = 0; k < Dim; ++k) sym(k, k) = std::max(sym(k, k), 0.0);
    return sym;
  }

 private:
  VectorMoments reshifted(const Vector& target) const {
    const Vector d = shift_ - target;
    VectorMoments r = *this;
    const double n = static_cast<double>(n_);
    r.shift_ = target;
    r.scatter_ = scatter_ + d * sum_.transpose() + sum_ * d.transpose() + n * d * d.transpose();
    r.sum_ = sum_ + n * d;
    return r;
  }

  std::int64_t n_ = 0;
  Vector shift_;
  Vector sum_;
  Matrix scatter_;
};

// Covariance housing for (I_1, X_1, I_2, X_2) in the cross-over analysis.
using QuadMoments = VectorMoments<4>;

}  // namespace deltametrics
