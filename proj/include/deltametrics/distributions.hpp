#pragma once

#include <cmath>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace deltametrics {

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

inline double normal_pdf(double x) {
  static const double kInvSqrt2Pi = 1.0 / std::sqrt(2.0 * M_PI);
  return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

// Two-sided critical value z_{1-alpha/2}.
inline double normal_critical(double alpha) {
  return normal_quantile(1.0 - alpha / 2.0);
}

inline double student_t_critical(double alpha, double degrees_of_freedom) {
  boost::math::students_t_distribution<double> dist(degrees_of_freedom);
  return boost::math::quantile(dist, 1.0 - alpha / 2.0);
}

}  // namespace deltametrics
