#pragma once

// The analysis behind each command-line subcommand, as plain functions over
// an input stream so they can be exercised without a process boundary.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deltametrics/cluster.hpp"
#include "deltametrics/crossover.hpp"
#include "deltametrics/csv.hpp"
#include "deltametrics/distributions.hpp"
#include "deltametrics/error.hpp"
#include "deltametrics/moments.hpp"
#include "deltametrics/quantile.hpp"
#include "deltametrics/ratio_ci.hpp"
#include "deltametrics/report.hpp"
#include "deltametrics/simharness.hpp"

namespace deltametrics {

namespace detail {

// Dense ids for string keys, in order of first appearance.
class KeyIndex {
 public:
  std::uint32_t operator()(const std::string& key) {
    const auto [it, inserted] = ids_.try_emplace(key, static_cast<std::uint32_t>(ids_.size()));
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::uint32_t> ids_;
};

inline std::vector<std::pair<std::uint32_t, double>> read_unit_values(std::istream& in) {
  const csv::Table t = csv::read(in);
  const std::size_t unit = t.column("unit_id");
  const std::size_t value = t.column("value");
  KeyIndex ids;
  std::vector<std::pair<std::uint32_t, double>> out;
  out.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    if (row.fields[unit].empty()) {
      throw InputError("row " + std::to_string(row.line) + ": empty unit_id");
    }
    out.emplace_back(ids(row.fields[unit]), csv::parse_double(row, value));
  }
  if (out.empty()) throw InsufficientDataError("no data rows");
  return out;
}

inline CrossoverGroup parse_group(const csv::Row& row, std::size_t col) {
  std::string g = row.fields[col];
  for (char& c : g) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (g == "I" || g == "1") return CrossoverGroup::kI;
  if (g == "II" || g == "2") return CrossoverGroup::kII;
  throw InputError("row " + std::to_string(row.line) + ": group must be I or II, got '" +
                   row.fields[col] + "'");
}

inline void fill_interval(Report& r, const ConfidenceInterval& ci) {
  r.point = ci.point;
  r.lower = ci.lower;
  r.upper = ci.upper;
  r.alpha = ci.alpha;
  r.se = ci.se;
  if (!ci.warning.empty()) r.warnings.push_back(ci.warning);
}

}  // namespace detail

// CSV columns x (control), y (treatment), paired by row.
inline Report cmd_ratio_ci(std::istream& in, double alpha, IntervalMethod method) {
  const csv::Table t = csv::read(in);
  const std::size_t cx = t.column("x");
  const std::size_t cy = t.column("y");
  PairedMoments pm;
  for (const auto& row : t.rows) {
    const double x = csv::parse_double(row, cx);
    const double y = csv::parse_double(row, cy);
    pm = accumulate(std::move(pm), x, y);
  }
  if (pm.n() < 2) throw InsufficientDataError("ratio CI needs at least 2 rows");
  const RatioInput input = RatioInput::paired(pm, alpha);
  Report r;
  r.method = std::string(to_string(method));
  detail::fill_interval(r, ratio_ci(input, method));
  r.n = static_cast<std::size_t>(pm.n());
  r.extra = {{"mean_x", input.mean_x()}, {"mean_y", input.mean_y()}};
  return r;
}

// CSV columns unit_id, value. The headline interval uses the Delta variance;
// the naive (i.i.d.) interval is reported alongside.
inline Report cmd_cluster_ci(std::istream& in, double alpha) {
  check_alpha(alpha);
  const auto obs = detail::read_unit_values(in);
  const ClusterSummary cs = summarize(obs);
  const ClusterEstimate delta = delta_variance(cs);
  const ClusterEstimate naive = naive_variance(cs);
  const double z = normal_critical(alpha);
  Report r;
  r.method = "delta";
  r.point = delta.mean;
  r.se = delta.se;
  r.lower = delta.mean - z * delta.se;
  r.upper = delta.mean + z * delta.se;
  r.alpha = alpha;
  r.n = static_cast<std::size_t>(cs.observations());
  r.extra = {{"clusters", static_cast<double>(cs.clusters())},
             {"naive_se", naive.se},
             {"naive_lower", naive.mean - z * naive.se},
             {"naive_upper", naive.mean + z * naive.se}};
  return r;
}

// CSV columns unit_id, value. With `bootstrap` set, a cluster bootstrap
// percentile interval replaces the outer CI.
inline Report cmd_quantile_ci(std::istream& in, const QuantileQuery& q,
                              std::optional<std::size_t> bootstrap = std::nullopt,
                              std::uint64_t seed = 0) {
  q.validate();
  const auto obs = detail::read_unit_values(in);
  const ClusteredSample sample = ClusteredSample::from_observations(obs);
  const QuantileEstimate e = bootstrap ? bootstrap_ci(sample, q, *bootstrap, seed) : outer_ci(sample, q);
  Report r;
  r.method = e.method;
  r.point = e.value;
  r.lower = e.lower;
  r.upper = e.upper;
  r.alpha = q.alpha;
  r.se = std::numeric_limits<double>::quiet_NaN();
  r.n = sample.size();
  r.extra = {{"p", q.p},
             {"clusters", static_cast<double>(sample.clusters())},
             {"point_rank", static_cast<double>(e.point_rank)},
             {"lower_rank", static_cast<double>(e.lower_rank)},
             {"upper_rank", static_cast<double>(e.upper_rank)},
             {"sigma", e.sigma},
             {"correction", e.correction}};
  if (!e.warning.empty()) r.warnings.push_back(e.warning);
  return r;
}

enum class CrossoverMethod { kDeltaGls, kLmm, kDecompose };

inline std::string_view to_string(CrossoverMethod m) {
  switch (m) {
    case CrossoverMethod::kDeltaGls: return "delta-gls";
    case CrossoverMethod::kLmm: return "lmm";
    case CrossoverMethod::kDecompose: return "decompose";
  }
  return "unknown";
}

inline CrossoverMethod parse_crossover_method(std::string_view name) {
  if (name == "delta-gls") return CrossoverMethod::kDeltaGls;
  if (name == "lmm") return CrossoverMethod::kLmm;
  if (name == "decompose") return CrossoverMethod::kDecompose;
  throw InputError("method must be delta-gls, lmm or decompose");
}

// CSV columns user_id, group, period, value. Missing cells are absent rows
// or rows with an empty value.
inline std::vector<CrossoverObservation> read_crossover(std::istream& in) {
  const csv::Table t = csv::read(in);
  const std::size_t cu = t.column("user_id");
  const std::size_t cg = t.column("group");
  const std::size_t cp = t.column("period");
  const std::size_t cv = t.column("value");
  detail::KeyIndex ids;
  std::vector<CrossoverObservation> rows;
  rows.reserve(t.rows.size());
  for (const auto& row : t.rows) {
    if (row.fields[cu].empty()) {
      throw InputError("row " + std::to_string(row.line) + ": empty user_id");
    }
    CrossoverObservation o;
    o.user = ids(row.fields[cu]);
    o.group = detail::parse_group(row, cg);
    const long period = csv::parse_integer(row, cp);
    if (period != 1 && period != 2) {
      throw InputError("row " + std::to_string(row.line) + ": period must be 1 or 2");
    }
    o.period = static_cast<int>(period);
    if (!row.fields[cv].empty()) o.value = csv::parse_double(row, cv);
    rows.push_back(o);
  }
  return rows;
}

inline Report cmd_crossover(std::istream& in, double alpha, CrossoverMethod method) {
  check_alpha(alpha);
  const auto rows = read_crossover(in);
  const AugmentedPanel panel = augment(rows);
  std::size_t observed = 0;
  for (const auto& u : panel.users) observed += static_cast<std::size_t>(u.periods_present());
  Report r;
  r.method = std::string(to_string(method));
  r.alpha = alpha;
  r.n = observed;
  if (method == CrossoverMethod::kDecompose) {
    const DecompositionReport d = decompose_complete_incomplete(panel);
    const double z = normal_critical(alpha);
    r.point = d.weighted.estimate;
    r.se = std::sqrt(d.weighted.variance);
    r.lower = r.point - z * r.se;
    r.upper = r.point + z * r.se;
    r.extra = {{"complete_estimate", d.complete.estimate},
               {"complete_variance", d.complete.variance},
               {"incomplete_estimate", d.incomplete.estimate},
               {"incomplete_variance", d.incomplete.variance},
               {"weighted_variance", d.weighted.variance},
               {"complete_users", static_cast<double>(d.complete_users)},
               {"incomplete_users", static_cast<double>(d.incomplete_users)}};
    return r;
  }
  const CrossoverFit fit = method == CrossoverMethod::kLmm ? fit_crossover_lmm(panel, alpha)
                                                           : fit_crossover(panel, alpha);
  detail::fill_interval(r, fit.ci);
  r.extra = {{"theta1", fit.theta[0]},
             {"theta2", fit.theta[1]},
             {"users", static_cast<double>(panel.users.size())}};
  return r;
}

// Scenario for `simulate`: the table's defaults with optional overrides.
inline sim::Scenario simulation_scenario(int table, std::optional<std::size_t> sims,
                                         std::uint64_t seed, double alpha) {
  sim::Scenario s = sim::Scenario::defaults(table);
  if (sims) {
    s.sims = *sims;
    if (s.sims_large > s.sims) s.sims_large = s.sims;
  }
  s.seed = seed;
  s.alpha = alpha;
  s.validate();
  return s;
}

}  // namespace deltametrics
