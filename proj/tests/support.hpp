#pragma once

// Seeded generators and brute-force oracles shared by the test suites. The
// generators are hand-rolled (not <random>) so oracles do not share code with
// the simulation harness.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "deltametrics/rng.hpp"

namespace testing_support {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  // Inclusive range.
  long integer(long lo, long hi) {
    return lo + static_cast<long>(rng_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  double normal() {
    // Box-Muller; the second variate is discarded for simplicity.
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * uniform());
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

  std::vector<double> normals(std::size_t n, double mean, double sd) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(mean, sd);
    return v;
  }

 private:
  deltametrics::CounterRng rng_;
};

// Two-pass moments in long double.
struct Oracle2 {
  long double mean_x = 0, mean_y = 0, var_x = 0, var_y = 0, cov = 0;
  long double m30 = 0, m03 = 0, m21 = 0, m12 = 0;  // divisor n
};

inline Oracle2 two_pass(const std::vector<double>& x, const std::vector<double>& y) {
  Oracle2 o;
  const long double n = static_cast<long double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    o.mean_x += x[i];
    o.mean_y += y[i];
  }
  o.mean_x /= n;
  o.mean_y /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double dx = x[i] - o.mean_x;
    const long double dy = y[i] - o.mean_y;
    o.var_x += dx * dx;
    o.var_y += dy * dy;
    o.cov += dx * dy;
    o.m30 += dx * dx * dx;
    o.m03 += dy * dy * dy;
    o.m21 += dx * dx * dy;
    o.m12 += dx * dy * dy;
  }
  o.var_x /= n - 1;
  o.var_y /= n - 1;
  o.cov /= n - 1;
  o.m30 /= n;
  o.m03 /= n;
  o.m21 /= n;
  o.m12 /= n;
  return o;
}

inline double mean_of(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  return static_cast<double>(s / static_cast<long double>(v.size()));
}

inline double variance_of(const std::vector<double>& v) {
  const long double m = mean_of(v);
  long double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return static_cast<double>(s / static_cast<long double>(v.size() - 1));
}

inline double covariance_of(const std::vector<double>& a, const std::vector<double>& b) {
  const long double ma = mean_of(a);
  const long double mb = mean_of(b);
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return static_cast<double>(s / static_cast<long double>(a.size() - 1));
}

// |a - b| <= rel * max(|b|, scale)
inline bool close_rel(double a, double b, double rel, double scale = 0.0) {
  return std::abs(a - b) <= rel * std::max(std::abs(b), scale);
}

}  // namespace testing_support
