#pragma once

// Seeded generators and Monte-Carlo drivers for the five coverage studies:
//
//   table 1  ratio CIs (Fieller, Delta, Delta-BC, Edgeworth, Edgeworth-BC)
//   table 2  cluster-randomized mean (naive, Delta, mixed model, weighted)
//   table 3  clustered quantile CIs (bootstrap, outer pre, outer post)
//   table 4  cross-over ATE with missing data (Delta GLS, mixed model)
//   table 5  complete / incomplete decomposition of the mixed model
//
// Replicate r of cell c draws from CounterRng(split(split(seed, c), r)), so a
// report is a pure function of the scenario regardless of thread count.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "deltametrics/cluster.hpp"
#include "deltametrics/crossover.hpp"
#include "deltametrics/distributions.hpp"
#include "deltametrics/error.hpp"
#include "deltametrics/lmm.hpp"
#include "deltametrics/moments.hpp"
#include "deltametrics/parallel.hpp"
#include "deltametrics/quantile.hpp"
#include "deltametrics/ratio_ci.hpp"
#include "deltametrics/rng.hpp"

namespace deltametrics::sim {

// ---------------------------------------------------------------------------
// Table 1: independent control and treatment samples

enum class RatioModel { kNormal, kPoisson, kBernoulli };

inline std::string_view to_string(RatioModel m) {
  switch (m) {
    case RatioModel::kNormal: return "normal";
    case RatioModel::kPoisson: return "poisson";
    case RatioModel::kBernoulli: return "bernoulli";
  }
  return "unknown";
}

struct PairedSample {
  std::vector<double> x;  // control
  std::vector<double> y;  // treatment
};

// Population means (control, treatment) of each model.
inline std::pair<double, double> table1_means(RatioModel m) {
  switch (m) {
    case RatioModel::kNormal: return {1.0, 1.1};
    case RatioModel::kPoisson: return {1.0, 1.1};
    case RatioModel::kBernoulli: return {0.5, 0.6};
  }
  return {0.0, 0.0};
}

inline double table1_truth(RatioModel m) {
  const auto [mx, my] = table1_means(m);
  return my / mx - 1.0;
}

inline PairedSample gen_table1(RatioModel model, std::size_t n, CounterRng& rng) {
  PairedSample s;
  s.x.resize(n);
  s.y.resize(n);
  switch (model) {
    case RatioModel::kNormal: {
      std::normal_distribution<double> dx(1.0, 0.1);
      std::normal_distribution<double> dy(1.1, 0.1);
      for (std::size_t i = 0; i < n; ++i) s.x[i] = dx(rng);
      for (std::size_t i = 0; i < n; ++i) s.y[i] = dy(rng);
      break;
    }
    case RatioModel::kPoisson: {
      std::poisson_distribution<int> dx(1.0);
      std::poisson_distribution<int> dy(1.1);
      for (std::size_t i = 0; i < n; ++i) s.x[i] = dx(rng);
      for (std::size_t i = 0; i < n; ++i) s.y[i] = dy(rng);
      break;
    }
    case RatioModel::kBernoulli: {
      std::bernoulli_distribution dx(0.5);
      std::bernoulli_distribution dy(0.6);
      for (std::size_t i = 0; i < n; ++i) s.x[i] = dx(rng) ? 1.0 : 0.0;
      for (std::size_t i = 0; i < n; ++i) s.y[i] = dy(rng) ? 1.0 : 0.0;
      break;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Table 2: clustered Bernoulli metric

struct ClusterCategory {
  double probability;  // share of clusters
  double size_mean;    // Poisson mean of N_i
  double mu_mean;      // mean of mu_i
  double mu_sd;        // sd of mu_i
};

struct Table2Config {
  std::size_t clusters = 1000;
  std::vector<ClusterCategory> categories = {
      {1.0 / 3.0, 2.0, 0.3, 0.05},
      {1.0 / 2.0, 5.0, 0.5, 0.1},
      {1.0 / 6.0, 30.0, 0.8, 0.05},
  };
};

// Size-weighted mean of the category means.
inline double table2_truth(const Table2Config& cfg) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& c : cfg.categories) {
    num += c.probability * c.size_mean * c.mu_mean;
    den += c.probability * c.size_mean;
  }
  return num / den;
}

struct ClusteredObservations {
  std::vector<std::pair<std::uint32_t, double>> observations;  // (cluster, Y_ij)
  std::size_t clusters_drawn = 0;    // K
  std::size_t clusters_dropped = 0;  // drawn with N_i = 0
  std::size_t total_size = 0;        // sum of N_i
};

// Category counts are multinomial(K, probabilities); clusters with N_i = 0
// are dropped and mu_i is clamped to [0, 1].
inline ClusteredObservations gen_table2(const Table2Config& cfg, CounterRng& rng) {
  if (cfg.clusters < 10) throw InputError("table 2 needs K >= 10");
  ClusteredObservations out;
  out.clusters_drawn = cfg.clusters;
  std::vector<std::size_t> counts(cfg.categories.size(), 0);
  std::size_t remaining = cfg.clusters;
  double remaining_p = 1.0;
  for (std::size_t c = 0; c < cfg.categories.size(); ++c) {
    if (c + 1 == cfg.categories.size()) {
      counts[c] = remaining;
      break;
    }
    const double q = std::clamp(cfg.categories[c].probability / remaining_p, 0.0, 1.0);
    std::binomial_distribution<std::size_t> bin(remaining, q);
    counts[c] = bin(rng);
    remaining -= counts[c];
    remaining_p -= cfg.categories[c].probability;
  }
  std::uint32_t id = 0;
  for (std::size_t c = 0; c < cfg.categories.size(); ++c) {
    const auto& cat = cfg.categories[c];
    std::poisson_distribution<int> size_dist(cat.size_mean);
    std::normal_distribution<double> mu_dist(cat.mu_mean, cat.mu_sd);
    for (std::size_t k = 0; k < counts[c]; ++k) {
      const int size = size_dist(rng);
      const double mu = std::clamp(mu_dist(rng), 0.0, 1.0);
      if (size == 0) {
        ++out.clusters_dropped;
        continue;
      }
      std::bernoulli_distribution y(mu);
      for (int j = 0; j < size; ++j) out.observations.emplace_back(id, y(rng) ? 1.0 : 0.0);
      out.total_size += static_cast<std::size_t>(size);
      ++id;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Table 3: clustered observations X_i + X_u

enum class QuantileModel { kNormal, kLogNormal };

inline std::string_view to_string(QuantileModel m) {
  return m == QuantileModel::kNormal ? "normal" : "lognormal";
}

inline ClusteredSample gen_table3(QuantileModel model, std::size_t users, CounterRng& rng) {
  if (users < 10) throw InputError("table 3 needs N_u >= 10");
  std::uniform_int_distribution<int> size_dist(1, 10);
  std::normal_distribution<double> z(0.0, 1.0);
  auto draw = [&] {
    const double v = z(rng);
    return model == QuantileModel::kNormal ? v : std::exp(v);
  };
  ClusteredSample s;
  std::vector<double> buf;
  for (std::size_t u = 0; u < users; ++u) {
    const int size = size_dist(rng);
    const double shared = draw();
    buf.clear();
    for (int j = 0; j < size; ++j) buf.push_back(shared + draw());
    s.add_cluster(buf);
  }
  return s;
}

// Population p-quantile of X_i + X_u. Cluster sizes do not change the
// marginal. Normal: sqrt(2) z_p. Log-normal: the convolution cdf
// P(A + B <= s) = int phi(u) Phi(log(s - e^u)) du over u < log s, inverted
// numerically.
inline double table3_true_quantile(QuantileModel model, double p) {
  if (model == QuantileModel::kNormal) return std::sqrt(2.0) * normal_quantile(p);
  auto cdf = [](double s) {
    const double upper = std::log(s);
    auto integrand = [s](double u) {
      const double rest = s - std::exp(u);
      return rest > 0.0 ? normal_pdf(u) * normal_cdf(std::log(rest)) : 0.0;
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        integrand, -40.0, upper, 20, 1e-14);
  };
  auto f = [&](double s) { return cdf(s) - p; };
  auto tol = [](double a, double b) { return std::abs(b - a) < 1e-12; };
  std::uintmax_t iters = 200;
  const auto [a, b] = boost::math::tools::toms748_solve(f, 1e-6, 1e4, tol, iters);
  return 0.5 * (a + b);
}

// ---------------------------------------------------------------------------
// Tables 4-5: cross-over panel with engagement-driven missingness

struct GeneratedPanel {
  std::vector<CrossoverObservation> rows;  // observed cells only
  double observed_effect_sum = 0.0;        // sum of effects over observed treated-or-not cells
  std::size_t observed_cells = 0;
};

// User effect u ~ N(10, 3), engagement l = Phi((u - 10) / 3), per-user effect
// N(10, 0.3) * l added in the treated period, noise N(0, 2), and each
// (user, period) missing with probability 1 - max(0.1, l).
inline GeneratedPanel gen_table45(std::size_t users_per_group, CounterRng& rng,
                                  bool with_missing = true, double effect_mean = 10.0) {
  if (users_per_group < 2) throw InputError("need at least 2 users per group");
  std::normal_distribution<double> user_effect(10.0, 3.0);
  std::normal_distribution<double> noise(0.0, 2.0);
  std::normal_distribution<double> effect(effect_mean, 0.3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  GeneratedPanel out;
  out.rows.reserve(4 * users_per_group);
  for (int g = 0; g < 2; ++g) {
    const auto group = g == 0 ? CrossoverGroup::kI : CrossoverGroup::kII;
    for (std::size_t i = 0; i < users_per_group; ++i) {
      const std::uint64_t id = static_cast<std::uint64_t>(g) * users_per_group + i;
      const double u = user_effect(rng);
      const double level = normal_cdf((u - 10.0) / 3.0);
      const double delta = effect(rng) * level;
      const double show = std::max(0.1, level);
      for (int t = 0; t < 2; ++t) {
        const bool treated = (g == 0) == (t == 0);
        const double value = u + noise(rng) + (treated ? delta : 0.0);
        const bool present = !with_missing || unif(rng) < show;
        if (!present) continue;
        out.rows.push_back({id, group, t + 1, value});
        out.observed_effect_sum += delta;
        ++out.observed_cells;
      }
    }
  }
  return out;
}

// Average effect over observed cells in one large run (10^6 users in total).
inline double table45_oracle_truth(std::uint64_t seed = 0x5eed0de1ULL,
                                   std::size_t users_per_group = 500000) {
  CounterRng rng(seed);
  const GeneratedPanel p = gen_table45(users_per_group, rng);
  return p.observed_effect_sum / static_cast<double>(p.observed_cells);
}

// ---------------------------------------------------------------------------
// Scenario and report

struct Scenario {
  int table = 1;
  std::size_t sims = 0;             // replicates per cell
  std::size_t sims_large = 0;       // table 3, N_u = 10000 cells
  std::size_t bootstrap_replicates = 1000;
  std::uint64_t seed = 20180501;
  double alpha = 0.05;
  std::vector<std::size_t> table1_sizes = {20, 50, 200, 2000};
  std::vector<std::size_t> table3_users = {100, 1000, 10000};
  double table3_p = 0.95;
  Table2Config table2;
  std::size_t crossover_users = 1000;  // per group, tables 4-5

  static Scenario defaults(int table) {
    if (table < 1 || table > 5) throw InputError("table must be in 1..5");
    Scenario s;
    s.table = table;
    switch (table) {
      case 1: s.sims = 10000; break;
      case 2: s.sims = 1000; break;
      case 3: s.sims = 2000; s.sims_large = 500; break;
      case 4: s.sims = 1000; break;
      case 5: s.sims = 1000; s.crossover_users = 10000; break;
    }
    return s;
  }

  void validate() const {
    if (table < 1 || table > 5) throw InputError("table must be in 1..5");
    if (sims < 100) throw InputError("need at least 100 simulations");
    if (table == 3 && bootstrap_replicates < 100) throw InputError("bootstrap needs >= 100 replicates");
    // alpha = 1 is accepted: every interval is then empty or degenerate and
    // counts as not covering.
    if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in (0, 1]");
  }
};

struct MethodSummary {
  std::string cell;    // e.g. "normal n=20"
  std::string method;
  double true_value = 0.0;
  std::size_t sims = 0;
  std::size_t failures = 0;  // replicates where the method raised an error
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double coverage_mc_se = std::numeric_limits<double>::quiet_NaN();
  double mean_estimate = std::numeric_limits<double>::quiet_NaN();
  double true_sd = std::numeric_limits<double>::quiet_NaN();  // MC sd of estimates
  double mean_se = std::numeric_limits<double>::quiet_NaN();
  double mean_variance = std::numeric_limits<double>::quiet_NaN();
};

struct CoverageReport {
  Scenario scenario;
  std::vector<MethodSummary> rows;

  const MethodSummary& find(std::string_view cell, std::string_view method) const {
    for (const auto& r : rows) {
      if (r.cell == cell && r.method == method) return r;
    }
    throw InputError("no report row for " + std::string(cell) + " / " + std::string(method));
  }
};

namespace detail {

// One method's outcome in one replicate.
struct Outcome {
  bool ok = false;
  double estimate = 0.0;
  std::optional<double> se;
  std::optional<bool> covered;
};

inline MethodSummary summarize_outcomes(std::string cell, std::string method, double truth,
                                        const std::vector<Outcome>& outs) {
  MethodSummary m;
  m.cell = std::move(cell);
  m.method = std::move(method);
  m.true_value = truth;
  m.sims = outs.size();
  UniMoments est;
  double se_sum = 0.0;
  double var_sum = 0.0;
  std::size_t se_count = 0;
  std::size_t covered = 0;
  std::size_t cover_count = 0;
  for (const auto& o : outs) {
    if (!o.ok) {
      ++m.failures;
      ++cover_count;  // an interval that could not be formed does not cover
      continue;
    }
    est = accumulate(std::move(est), o.estimate);
    if (o.se) {
      se_sum += *o.se;
      var_sum += *o.se * *o.se;
      ++se_count;
    }
    if (o.covered) {
      ++cover_count;
      if (*o.covered) ++covered;
    }
  }
  if (est.n() >= 1) m.mean_estimate = est.raw_sum(1) / static_cast<double>(est.n());
  if (est.n() >= 2) m.true_sd = std::sqrt(derive_stats(est).variance);
  if (se_count > 0) {
    m.mean_se = se_sum / static_cast<double>(se_count);
    m.mean_variance = var_sum / static_cast<double>(se_count);
  }
  if (cover_count > 0) {
    m.coverage = static_cast<double>(covered) / static_cast<double>(cover_count);
    m.coverage_mc_se = std::sqrt(m.coverage * (1.0 - m.coverage) / static_cast<double>(cover_count));
  }
  return m;
}

template <typename Fn>
Outcome guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error&) {
    return Outcome{};
  }
}

inline Outcome interval_outcome(const ConfidenceInterval& ci, double truth) {
  return Outcome{true, ci.point, ci.se, ci.contains(truth)};
}

inline Outcome normal_outcome(double estimate, double se, double truth, double alpha) {
  const double half = normal_critical(alpha) * se;
  return Outcome{true, estimate, se, estimate - half <= truth && truth <= estimate + half};
}

// Runs `replicate(rng, outcomes)` for each replicate and collects a
// per-method outcome table [method][replicate].
template <typename Fn>
std::vector<std::vector<Outcome>> run_cell(std::size_t sims, std::size_t methods,
                                           std::uint64_t cell_seed, unsigned threads,
                                           Fn&& replicate) {
  std::vector<std::vector<Outcome>> table(methods, std::vector<Outcome>(sims));
  parallel_for(sims, threads, [&](std::size_t r) {
    CounterRng rng(split_seed(cell_seed, r));
    std::vector<Outcome> outs(methods);
    replicate(rng, r, outs);
    for (std::size_t m = 0; m < methods; ++m) table[m][r] = outs[m];
  });
  return table;
}

inline std::string format_size(std::string_view label, std::size_t v) {
  return std::string(label) + "=" + std::to_string(v);
}

inline void run_table1(const Scenario& s, unsigned threads, CoverageReport& report) {
  constexpr std::array kMethods = {IntervalMethod::kFieller, IntervalMethod::kDelta,
                                   IntervalMethod::kDeltaBiasCorrected, IntervalMethod::kEdgeworth,
                                   IntervalMethod::kEdgeworthBiasCorrected};
  std::uint64_t cell_index = 0;
  for (RatioModel model : {RatioModel::kNormal, RatioModel::kPoisson, RatioModel::kBernoulli}) {
    for (std::size_t n : s.table1_sizes) {
      const double truth = table1_truth(model);
      auto table = run_cell(s.sims, kMethods.size(), split_seed(s.seed, cell_index++), threads,
                            [&](CounterRng& rng, std::size_t, std::vector<Outcome>& outs) {
                              const PairedSample d = gen_table1(model, n, rng);
                              const UniMoments mx = accumulate_all(UniMoments{}, d.x);
                              const UniMoments my = accumulate_all(UniMoments{}, d.y);
                              for (std::size_t m = 0; m < kMethods.size(); ++m) {
                                outs[m] = guarded([&] {
                                  const auto in = RatioInput::independent(mx, my, s.alpha);
                                  return interval_outcome(ratio_ci(in, kMethods[m]), truth);
                                });
                              }
                            });
      const std::string cell = std::string(to_string(model)) + " " + format_size("n", n);
      for (std::size_t m = 0; m < kMethods.size(); ++m) {
        report.rows.push_back(
            summarize_outcomes(cell, std::string(to_string(kMethods[m])), truth, table[m]));
      }
    }
  }
}

inline void run_table2(const Scenario& s, unsigned threads, CoverageReport& report) {
  const double truth = table2_truth(s.table2);
  const std::array<std::string, 4> names = {"naive", "mixed-effect", "delta", "mixed-weighted"};
  auto table = run_cell(s.sims, names.size(), split_seed(s.seed, 0), threads,
                        [&](CounterRng& rng, std::size_t, std::vector<Outcome>& outs) {
                          const ClusteredObservations g = gen_table2(s.table2, rng);
                          const ClusterSummary cs = summarize(g.observations);
                          outs[0] = guarded([&] {
                            const auto e = naive_variance(cs);
                            return normal_outcome(e.mean, e.se, truth, s.alpha);
                          });
                          outs[2] = guarded([&] {
                            const auto e = delta_variance(cs);
                            return normal_outcome(e.mean, e.se, truth, s.alpha);
                          });
                          LmmData data(1);
                          for (const auto& [id, y] : g.observations) data.add(id, {1.0}, y);
                          try {
                            const LmmFit fit = fit_random_intercept(data);
                            outs[1] = normal_outcome(fit.beta[0], fit.se_beta[0], truth, s.alpha);
                            outs[3] = Outcome{true, weighted_cluster_mean(fit), std::nullopt,
                                              std::nullopt};
                          } catch (const Error&) {
                          }
                        });
  const std::string cell = format_size("K", s.table2.clusters);
  for (std::size_t m = 0; m < names.size(); ++m) {
    report.rows.push_back(summarize_outcomes(cell, names[m], truth, table[m]));
  }
}

inline void run_table3(const Scenario& s, unsigned threads, CoverageReport& report) {
  const std::array<std::string, 3> names = {"bootstrap", "outer-pre", "outer-post"};
  std::uint64_t cell_index = 0;
  for (QuantileModel model : {QuantileModel::kNormal, QuantileModel::kLogNormal}) {
    const double truth = table3_true_quantile(model, s.table3_p);
    for (std::size_t users : s.table3_users) {
      const std::size_t sims = (users >= 10000 && s.sims_large > 0) ? s.sims_large : s.sims;
      const std::uint64_t cell_seed = split_seed(s.seed, cell_index++);
      auto table = run_cell(
          sims, names.size(), cell_seed, threads,
          [&](CounterRng& rng, std::size_t r, std::vector<Outcome>& outs) {
            const ClusteredSample sample = gen_table3(model, users, rng);
            QuantileQuery q{s.table3_p, s.alpha, QuantileAdjust::kPre};
            auto quantile_outcome = [&](const QuantileEstimate& e) {
              return Outcome{true, e.value, std::nullopt, e.contains(truth)};
            };
            outs[0] = guarded([&] {
              return quantile_outcome(bootstrap_ci(sample, q, s.bootstrap_replicates,
                                                   split_seed(cell_seed ^ 0xb007ULL, r)));
            });
            outs[1] = guarded([&] { return quantile_outcome(outer_ci_pre(sample, q)); });
            outs[2] = guarded([&] { return quantile_outcome(outer_ci_post(sample, q)); });
          });
      const std::string cell = std::string(to_string(model)) + " " + format_size("Nu", users);
      for (std::size_t m = 0; m < names.size(); ++m) {
        report.rows.push_back(summarize_outcomes(cell, names[m], truth, table[m]));
      }
    }
  }
}

inline void run_table45(const Scenario& s, unsigned threads, CoverageReport& report) {
  const double truth = table45_oracle_truth();
  const std::string cell = format_size("users_per_group", s.crossover_users);
  if (s.table == 4) {
    const std::array<std::string, 2> names = {"mixed-effect", "delta-gls"};
    auto table = run_cell(s.sims, names.size(), split_seed(s.seed, 0), threads,
                          [&](CounterRng& rng, std::size_t, std::vector<Outcome>& outs) {
                            const GeneratedPanel g = gen_table45(s.crossover_users, rng);
                            const AugmentedPanel panel = augment(g.rows);
                            outs[0] = guarded([&] {
                              return interval_outcome(fit_crossover_lmm(panel, s.alpha).ci, truth);
                            });
                            outs[1] = guarded([&] {
                              return interval_outcome(fit_crossover(panel, s.alpha).ci, truth);
                            });
                          });
    for (std::size_t m = 0; m < names.size(); ++m) {
      report.rows.push_back(summarize_outcomes(cell, names[m], truth, table[m]));
    }
    return;
  }
  const std::array<std::string, 4> names = {"mixed-effect", "mixed-effect-complete",
                                            "linear-incomplete", "weighted-average"};
  auto table = run_cell(
      s.sims, names.size(), split_seed(s.seed, 0), threads,
      [&](CounterRng& rng, std::size_t, std::vector<Outcome>& outs) {
        const GeneratedPanel g = gen_table45(s.crossover_users, rng);
        const AugmentedPanel panel = augment(g.rows);
        outs[0] = guarded([&] { return interval_outcome(fit_crossover_lmm(panel, s.alpha).ci, truth); });
        try {
          const DecompositionReport d = decompose_complete_incomplete(panel);
          outs[1] = normal_outcome(d.complete.estimate, std::sqrt(d.complete.variance), truth, s.alpha);
          outs[2] = normal_outcome(d.incomplete.estimate, std::sqrt(d.incomplete.variance), truth,
                                   s.alpha);
          outs[3] = normal_outcome(d.weighted.estimate, std::sqrt(d.weighted.variance), truth, s.alpha);
        } catch (const Error&) {
        }
      });
  for (std::size_t m = 0; m < names.size(); ++m) {
    report.rows.push_back(summarize_outcomes(cell, names[m], truth, table[m]));
  }
}

}  // namespace detail

// threads = 0 uses default_thread_count().
inline CoverageReport run_table(const Scenario& scenario, unsigned threads = 0) {
  scenario.validate();
  CoverageReport report;
  report.scenario = scenario;
  switch (scenario.table) {
    case 1: detail::run_table1(scenario, threads, report); break;
    case 2: detail::run_table2(scenario, threads, report); break;
    case 3: detail::run_table3(scenario, threads, report); break;
    case 4:
    case 5: detail::run_table45(scenario, threads, report); break;
  }
  return report;
}

}  // namespace deltametrics::sim
