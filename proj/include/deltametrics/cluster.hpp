#pragma once

// Variance of an average metric when the randomization unit is a cluster of
// analysis units. Y-bar = sum(S_i) / sum(N_i) = S-bar / N-bar is a ratio of
// two means of i.i.d. cluster-level quantities, so its variance follows from
// the Delta method on (N_i, S_i).

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deltametrics/error.hpp"
#include "deltametrics/moments.hpp"

namespace deltametrics {

struct ClusterRecord {
  double sum = 0.0;   // S_i
  double size = 0.0;  // N_i
};

enum class ClusterMethod { kNaive, kDelta, kDonner };

inline std::string_view to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::kNaive: return "naive";
    case ClusterMethod::kDelta: return "delta";
    case ClusterMethod::kDonner: return "donner";
  }
  return "unknown";
}

struct ClusterEstimate {
  double mean = 0.0;
  double variance = 0.0;
  double se = 0.0;
  ClusterMethod method = ClusterMethod::kDelta;
};

class ClusterSummary {
 public:
  ClusterSummary() = default;

  // Adds one cluster. `unit_values` are the analysis-unit observations of
  // the cluster; it must be nonempty.
  void add_cluster(std::span<const double> unit_values) {
    if (unit_values.empty()) throw InputError("cluster with no observations");
    double s = 0.0;
    for (double v : unit_values) {
      units_ = accumulate(std::move(units_), v);
      s += v;
    }
    add_record({s, static_cast<double>(unit_values.size())});
  }

  std::int64_t clusters() const noexcept { return cluster_moments_.n(); }
  std::int64_t observations() const noexcept { return units_.n(); }
  const std::vector<ClusterRecord>& records() const noexcept { return records_; }

  // (N_i, S_i) moments over clusters.
  const PairedMoments& cluster_moments() const noexcept { return cluster_moments_; }
  // Unit-level value moments, used by the naive estimator.
  const UniMoments& unit_moments() const noexcept { return units_; }

  double total_sum() const { return total_sum_; }
  double total_size() const { return total_size_; }
  double mean() const {
    if (total_size_ <= 0.0) throw InsufficientDataError("no observations");
    return total_sum_ / total_size_;
  }

  // Concatenates clusters from disjoint shards.
  friend ClusterSummary merge(ClusterSummary a, const ClusterSummary& b) {
    a.records_.insert(a.records_.end(), b.records_.begin(), b.records_.end());
    a.cluster_moments_ = merge(std::move(a.cluster_moments_), b.cluster_moments_);
    a.units_ = merge(std::move(a.units_), b.units_);
    a.total_sum_ += b.total_sum_;
    a.total_size_ += b.total_size_;
    return a;
  }

 private:
  void add_record(ClusterRecord r) {
    records_.push_back(r);
    cluster_moments_ = accumulate(std::move(cluster_moments_), r.size, r.sum);
    total_sum_ += r.sum;
    total_size_ += r.size;
  }

  std::vector<ClusterRecord> records_;
  PairedMoments cluster_moments_;
  UniMoments units_;
  double total_sum_ = 0.0;
  double total_size_ = 0.0;
};

// Groups (unit_id, value) observations by unit id. Clusters appear in order of
// first occurrence.
template <typename Key>
ClusterSummary summarize(std::span<const std::pair<Key, double>> observations) {
  if (observations.empty()) throw InputError("no observations");
  std::unordered_map<Key, std::size_t> index;
  std::vector<std::vector<double>> values;
  for (const auto& [key, value] : observations) {
    detail::require_finite(value, "value");
    auto [it, inserted] = index.try_emplace(key, values.size());
    if (inserted) values.emplace_back();
    values[it->second].push_back(value);
  }
  ClusterSummary out;
  for (const auto& v : values) out.add_cluster(v);
  return out;
}

template <typename Key>
ClusterSummary summarize(const std::vector<std::pair<Key, double>>& observations) {
  return summarize(std::span<const std::pair<Key, double>>(observations));
}

// Delta-method variance of S-bar / N-bar from (N_i, S_i) moments:
// (1 / (K N-bar^2)) (s_S^2 - 2 (S-bar/N-bar) s_SN + (S-bar/N-bar)^2 s_N^2).
inline double delta_ratio_variance(const PairedMoments& size_sum) {
  if (size_sum.n() < 2) throw InsufficientDataError("need at least 2 clusters");
  const PairedStats s = derive_stats(size_sum);
  if (!(s.mean_x > 0.0)) throw DegenerateError("mean cluster size must be positive");
  const double k = static_cast<double>(s.n);
  const double r = s.mean_y / s.mean_x;
  const double v = (s.var_y - 2.0 * r * s.cov_xy + r * r * s.var_x) / (k * s.mean_x * s.mean_x);
  return v > 0.0 ? v : 0.0;
}

inline ClusterEstimate delta_variance(const ClusterSummary& cs) {
  ClusterEstimate e;
  e.method = ClusterMethod::kDelta;
  e.variance = delta_ratio_variance(cs.cluster_moments());
  e.mean = cs.mean();
  e.se = std::sqrt(e.variance);
  return e;
}

// Treats every analysis unit as i.i.d.: sample variance / total count.
inline ClusterEstimate naive_variance(const ClusterSummary& cs) {
  if (cs.observations() < 2) throw InsufficientDataError("need at least 2 observations");
  const UniStats u = derive_stats(cs.unit_moments());
  ClusterEstimate e;
  e.method = ClusterMethod::kNaive;
  e.mean = cs.mean();
  e.variance = u.variance / static_cast<double>(u.n);
  e.se = std::sqrt(e.variance);
  return e;
}

// Closed form for equal cluster sizes m and common within-cluster variance:
// ((sigma2 + tau2) / (K m)) (1 + (m - 1) rho), rho = tau2 / (sigma2 + tau2).
inline double donner_variance(double sigma2, double tau2, std::int64_t clusters,
                              std::int64_t cluster_size) {
  if (sigma2 < 0.0 || tau2 < 0.0) throw InputError("variances must be non-negative");
  if (clusters < 1 || cluster_size < 1) throw InputError("K and m must be >= 1");
  const double total = sigma2 + tau2;
  if (total == 0.0) return 0.0;
  const double rho = tau2 / total;
  const double km = static_cast<double>(clusters) * static_cast<double>(cluster_size);
  return total / km * (1.0 + (static_cast<double>(cluster_size) - 1.0) * rho);
}

struct ClusterEffect {
  double difference = 0.0;  // treatment mean - control mean
  double variance = 0.0;
  double se = 0.0;
};

// Difference of two independent cluster-randomized group means.
inline ClusterEffect cluster_ate(const ClusterSummary& treatment, const ClusterSummary& control) {
  const ClusterEstimate t = delta_variance(treatment);
  const ClusterEstimate c = delta_variance(control);
  ClusterEffect e;
  e.difference = t.mean - c.mean;
  e.variance = t.variance + c.variance;
  e.se = std::sqrt(e.variance);
  return e;
}

}  // namespace deltametrics
