#pragma once

// Quantile confidence intervals for clustered observations.
//
// The outer CI brackets the sample quantile X_(floor(np)) between two order
// statistics whose ranks come from a normal approximation to the mean of the
// indicators 1{X <= quantile}. Under clustering the indicator mean is a ratio
// of cluster-level means, so its variance comes from the Delta method and
// replaces p(1 - p) either before the ranks are chosen (pre-adjustment) or
// as a rescaling of an i.i.d. interval afterwards (post-adjustment).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deltametrics/cluster.hpp"
#include "deltametrics/distributions.hpp"
#include "deltametrics/error.hpp"
#include "deltametrics/rng.hpp"
#include "deltametrics/selection.hpp"

namespace deltametrics {

enum class QuantileAdjust { kPre, kPost };

inline std::string_view to_string(QuantileAdjust a) {
  return a == QuantileAdjust::kPre ? "pre" : "post";
}

inline QuantileAdjust parse_quantile_adjust(std::string_view name) {
  if (name == "pre") return QuantileAdjust::kPre;
  if (name == "post") return QuantileAdjust::kPost;
  throw InputError("adjust must be 'pre' or 'post'");
}

struct QuantileQuery {
  double p = 0.5;
  double alpha = 0.05;
  QuantileAdjust adjust = QuantileAdjust::kPost;

  void validate() const {
    if (!(p > 0.0 && p < 1.0)) throw InputError("p must lie in (0, 1)");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  }
};

struct QuantileEstimate {
  std::string method;  // "outer-pre", "outer-post" or "bootstrap"
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t point_rank = 0;
  std::size_t lower_rank = 0;
  std::size_t upper_rank = 0;
  double sigma = 0.0;       // sqrt(n var(indicator mean))
  double correction = 1.0;  // sigma / sqrt(p (1 - p))
  bool degenerate = false;  // zero-width interval
  std::string warning;

  bool contains(double v) const { return lower <= v && v <= upper; }
};

// Observations grouped by cluster (compressed row layout).
class ClusteredSample {
 public:
  ClusteredSample() { offsets_.push_back(0); }

  void add_cluster(std::span<const double> values) {
    if (values.empty()) throw InputError("cluster with no observations");
    for (double v : values) {
      if (!std::isfinite(v)) throw InputError("non-finite value");
    }
    values_.insert(values_.end(), values.begin(), values.end());
    offsets_.push_back(values_.size());
  }

  template <typename Key>
  static ClusteredSample from_observations(std::span<const std::pair<Key, double>> obs) {
    std::unordered_map<Key, std::size_t> index;
    std::vector<std::vector<double>> groups;
    for (const auto& [key, value] : obs) {
      auto [it, inserted] = index.try_emplace(key, groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].push_back(value);
    }
    ClusteredSample s;
    for (const auto& g : groups) s.add_cluster(g);
    return s;
  }

  template <typename Key>
  static ClusteredSample from_observations(const std::vector<std::pair<Key, double>>& obs) {
    return from_observations(std::span<const std::pair<Key, double>>(obs));
  }

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t clusters() const noexcept { return offsets_.size() - 1; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> cluster(std::size_t k) const {
    return std::span<const double>(values_).subspan(offsets_[k], offsets_[k + 1] - offsets_[k]);
  }

 private:
  std::vector<double> values_;
  std::vector<std::size_t> offsets_;
};

// floor(n p), clamped to [1, n].
inline std::size_t quantile_rank(std::size_t n, double p) {
  const double r = std::floor(static_cast<double>(n) * p + 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(r, 1.0)), 1, n);
}

struct OuterRanks {
  std::size_t lower = 0;
  std::size_t upper = 0;
};

// L = floor(n (p - z sigma / sqrt(n))), U = floor(n (p + z sigma / sqrt(n))) + 1,
// both clamped to [1, n]. Both real-valued ranks are truncated; rounding U
// outward instead over-covers by up to 0.015 at 100 clusters.
inline OuterRanks outer_ranks(std::size_t n, double p, double alpha, double sigma) {
  const double nd = static_cast<double>(n);
  const double half = normal_critical(alpha) * sigma / std::sqrt(nd);
  const double lo = std::floor(nd * (p - half) + 1e-9);
  const double hi = std::floor(nd * (p + half) + 1e-9) + 1.0;
  OuterRanks r;
  r.lower = static_cast<std::size_t>(std::clamp(lo, 1.0, nd));
  r.upper = static_cast<std::size_t>(std::clamp(hi, 1.0, nd));
  return r;
}

// sigma with sigma^2 / n equal to the Delta variance of the mean of
// 1{X <= threshold}, clusters as randomization units.
inline double clustered_indicator_sigma(const ClusteredSample& sample, double threshold) {
  if (sample.clusters() < 2) throw InsufficientDataError("need at least 2 clusters");
  PairedMoments size_count;
  for (std::size_t k = 0; k < sample.clusters(); ++k) {
    const auto c = sample.cluster(k);
    const auto hits = std::count_if(c.begin(), c.end(), [&](double v) { return v <= threshold; });
    size_count = accumulate(std::move(size_count), static_cast<double>(c.size()),
                            static_cast<double>(hits));
  }
  const double v = delta_ratio_variance(size_count);
  return std::sqrt(static_cast<double>(sample.size()) * v);
}

namespace detail {

inline void check_quantile_input(const ClusteredSample& sample, const QuantileQuery& q) {
  q.validate();
  if (sample.size() < 2) throw InsufficientDataError("need at least 2 observations");
  if (sample.clusters() < 2) throw InsufficientDataError("need at least 2 clusters");
}

inline void flag_if_degenerate(QuantileEstimate& e) {
  if (e.lower == e.upper) {
    e.degenerate = true;
    e.warning = "zero-width interval: bracketing order statistics coincide";
  }
}

}  // namespace detail

inline QuantileEstimate outer_ci_pre(const ClusteredSample& sample, const QuantileQuery& q) {
  detail::check_quantile_input(sample, q);
  const std::size_t n = sample.size();
  std::vector<double> work(sample.values().begin(), sample.values().end());

  QuantileEstimate e;
  e.method = "outer-pre";
  e.point_rank = quantile_rank(n, q.p);
  e.value = select_ranks_inplace(work, {e.point_rank}).at(e.point_rank);
  e.sigma = clustered_indicator_sigma(sample, e.value);
  e.correction = e.sigma / std::sqrt(q.p * (1.0 - q.p));
  const OuterRanks r = outer_ranks(n, q.p, q.alpha, e.sigma);
  e.lower_rank = r.lower;
  e.upper_rank = r.upper;
  const auto got = select_ranks_inplace(work, {r.lower, r.upper});
  e.lower = got.at(r.lower);
  e.upper = got.at(r.upper);
  detail::flag_if_degenerate(e);
  return e;
}

inline QuantileEstimate outer_ci_post(const ClusteredSample& sample, const QuantileQuery& q) {
  detail::check_quantile_input(sample, q);
  const std::size_t n = sample.size();
  std::vector<double> work(sample.values().begin(), sample.values().end());

  QuantileEstimate e;
  e.method = "outer-post";
  e.point_rank = quantile_rank(n, q.p);
  const double iid_sigma = std::sqrt(q.p * (1.0 - q.p));
  const OuterRanks r = outer_ranks(n, q.p, q.alpha, iid_sigma);
  e.lower_rank = r.lower;
  e.upper_rank = r.upper;
  const auto got = select_ranks_inplace(work, {e.point_rank, r.lower, r.upper});
  e.value = got.at(e.point_rank);
  const double lo = got.at(r.lower);
  const double hi = got.at(r.upper);
  e.sigma = clustered_indicator_sigma(sample, e.value);
  e.correction = e.sigma / iid_sigma;
  e.lower = e.value - e.correction * (e.value - lo);
  e.upper = e.value + e.correction * (hi - e.value);
  if (lo == e.value && hi == e.value) {
    e.degenerate = true;
    e.warning = "zero-width interval: unadjusted bounds equal the quantile, nothing to rescale";
  } else {
    detail::flag_if_degenerate(e);
  }
  return e;
}

inline QuantileEstimate outer_ci(const ClusteredSample& sample, const QuantileQuery& q) {
  return q.adjust == QuantileAdjust::kPre ? outer_ci_pre(sample, q) : outer_ci_post(sample, q);
}

// Cluster bootstrap percentile interval. Replicate b draws from the stream
// split(seed, b), so results do not depend on evaluation order.
inline QuantileEstimate bootstrap_ci(const ClusteredSample& sample, const QuantileQuery& q,
                                     std::size_t replicates, std::uint64_t seed) {
  detail::check_quantile_input(sample, q);
  if (replicates < 100) throw InputError("bootstrap needs at least 100 replicates");
  const std::size_t k = sample.clusters();

  QuantileEstimate e;
  e.method = "bootstrap";
  std::vector<double> work(sample.values().begin(), sample.values().end());
  e.point_rank = quantile_rank(work.size(), q.p);
  e.value = select_ranks_inplace(work, {e.point_rank}).at(e.point_rank);
  e.lower_rank = e.upper_rank = e.point_rank;

  const CounterRng root(seed);
  std::vector<double> estimates(replicates);
  for (std::size_t b = 0; b < replicates; ++b) {
    CounterRng rng = root.split(b);
    work.clear();
    for (std::size_t i = 0; i < k; ++i) {
      // Lemire-style bounded draw; bias is negligible for k << 2^64.
      const auto pick = static_cast<std::size_t>(
          (static_cast<unsigned __int128>(rng()) * k) >> 64);
      const auto c = sample.cluster(pick);
      work.insert(work.end(), c.begin(), c.end());
    }
    const std::size_t r = quantile_rank(work.size(), q.p);
    std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(r - 1), work.end());
    estimates[b] = work[r - 1];
  }
  std::sort(estimates.begin(), estimates.end());
  const double bd = static_cast<double>(replicates);
  auto at = [&](double prob) {
    const double idx = std::ceil(bd * prob - 1e-9) - 1.0;
    return estimates[static_cast<std::size_t>(std::clamp(idx, 0.0, bd - 1.0))];
  };
  e.lower = at(q.alpha / 2.0);
  e.upper = at(1.0 - q.alpha / 2.0);
  detail::flag_if_degenerate(e);
  return e;
}

}  // namespace deltametrics
