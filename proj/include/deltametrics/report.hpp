#pragma once

// Structured results for the command-line tools. JSON is the exact contract
// (shortest round-trip doubles, so parsing gives back the same bits); the
// text table rounds to 6 significant digits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deltametrics/simharness.hpp"

namespace deltametrics {

struct Report {
  std::string method;
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
  double se = 0.0;
  std::size_t n = 0;
  std::vector<std::string> warnings;
  // Command-specific values, in output order.
  std::vector<std::pair<std::string, double>> extra;
};

namespace detail {

inline nlohmann::ordered_json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline std::string six_digits(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const Report& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["point"] = detail::number_or_null(r.point);
  j["lower"] = detail::number_or_null(r.lower);
  j["upper"] = detail::number_or_null(r.upper);
  j["alpha"] = r.alpha;
  j["se"] = detail::number_or_null(r.se);
  j["n"] = r.n;
  for (const auto& [k, v] : r.extra) j[k] = detail::number_or_null(v);
  j["warnings"] = r.warnings;
  return j;
}

inline std::string to_table(const Report& r) {
  std::vector<std::pair<std::string, std::string>> cells = {
      {"method", r.method},
      {"point", detail::six_digits(r.point)},
      {"lower", detail::six_digits(r.lower)},
      {"upper", detail::six_digits(r.upper)},
      {"alpha", detail::six_digits(r.alpha)},
      {"se", detail::six_digits(r.se)},
      {"n", std::to_string(r.n)},
  };
  for (const auto& [k, v] : r.extra) cells.emplace_back(k, detail::six_digits(v));
  for (const auto& w : r.warnings) cells.emplace_back("warning", w);
  std::size_t width = 0;
  for (const auto& c : cells) width = std::max(width, c.first.size());
  std::ostringstream out;
  for (const auto& [k, v] : cells) out << k << std::string(width - k.size() + 2, ' ') << v << '\n';
  return out.str();
}

inline nlohmann::ordered_json to_json(const sim::Scenario& s) {
  nlohmann::ordered_json j;
  j["table"] = s.table;
  j["sims"] = s.sims;
  j["seed"] = s.seed;
  j["alpha"] = s.alpha;
  switch (s.table) {
    case 1: j["sample_sizes"] = s.table1_sizes; break;
    case 2: j["clusters"] = s.table2.clusters; break;
    case 3:
      j["users"] = s.table3_users;
      j["p"] = s.table3_p;
      j["bootstrap_replicates"] = s.bootstrap_replicates;
      j["sims_large"] = s.sims_large;
      break;
    default: j["users_per_group"] = s.crossover_users; break;
  }
  return j;
}

inline nlohmann::ordered_json to_json(const sim::MethodSummary& m) {
  using detail::number_or_null;
  nlohmann::ordered_json j;
  j["cell"] = m.cell;
  j["method"] = m.method;
  j["true_value"] = number_or_null(m.true_value);
  j["sims"] = m.sims;
  j["failures"] = m.failures;
  j["coverage"] = number_or_null(m.coverage);
  j["coverage_mc_se"] = number_or_null(m.coverage_mc_se);
  j["mean_estimate"] = number_or_null(m.mean_estimate);
  j["true_sd"] = number_or_null(m.true_sd);
  j["mean_se"] = number_or_null(m.mean_se);
  j["mean_variance"] = number_or_null(m.mean_variance);
  return j;
}

inline nlohmann::ordered_json to_json(const sim::CoverageReport& r) {
  nlohmann::ordered_json j;
  j["scenario"] = to_json(r.scenario);
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) j["rows"].push_back(to_json(row));
  return j;
}

inline void write_csv(std::ostream& out, const sim::CoverageReport& r) {
  out << "cell,method,true_value,sims,failures,coverage,coverage_mc_se,mean_estimate,true_sd,"
         "mean_se,mean_variance\n";
  auto num = [](double v) {
    if (!std::isfinite(v)) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& m : r.rows) {
    out << m.cell << ',' << m.method << ',' << num(m.true_value) << ',' << m.sims << ','
        << m.failures << ',' << num(m.coverage) << ',' << num(m.coverage_mc_se) << ','
        << num(m.mean_estimate) << ',' << num(m.true_sd) << ',' << num(m.mean_se) << ','
        << num(m.mean_variance) << '\n';
  }
}

}  // namespace deltametrics
