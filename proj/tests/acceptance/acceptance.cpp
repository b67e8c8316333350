// Acceptance run: one PASS/FAIL line per criterion, with the detail lines that
// failed (or all of them with --verbose). Exit status is the number of failed
// criteria.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "deltametrics/deltametrics.hpp"
#include "../support.hpp"

namespace dm = deltametrics;
namespace sim = deltametrics::sim;
using testing_support::close_rel;
using testing_support::Gen;

namespace {

bool g_verbose = false;

class Criterion {
 public:
  explicit Criterion(std::string name) : name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}

  void check(bool ok, const std::string& detail) {
    ++checks_;
    if (!ok) ++failed_;
    if (!ok || g_verbose) details_.push_back(std::string(ok ? "    ok   " : "    FAIL ") + detail);
  }

  bool finish() const {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::printf("%s %s (%d/%d checks, %.0f s)\n", failed_ == 0 ? "PASS" : "FAIL", name_.c_str(),
                checks_ - failed_, checks_, secs);
    for (const auto& d : details_) std::printf("%s\n", d.c_str());
    std::fflush(stdout);
    return failed_ == 0;
  }

 private:
  std::string name_;
  std::chrono::steady_clock::time_point start_;
  int checks_ = 0;
  int failed_ = 0;
  std::vector<std::string> details_;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Coverage tolerance: the stated bound or three Monte-Carlo standard errors.
double coverage_tol(double stated, double c, std::size_t sims) {
  return std::max(stated, 3.0 * std::sqrt(c * (1.0 - c) / static_cast<double>(sims)));
}

void check_coverage(Criterion& cr, const sim::CoverageReport& r, const std::string& cell,
                    const std::string& method, double target, double stated) {
  const auto& row = r.find(cell, method);
  const double tol = coverage_tol(stated, target, row.sims);
  cr.check(std::abs(row.coverage - target) <= tol,
           fmt("%-22s %-13s coverage %.4f  target %.4f  tol %.4f", cell.c_str(), method.c_str(),
               row.coverage, target, tol));
}

// ---------------------------------------------------------------------------

bool criterion1() {
  Criterion cr("1 ratio-metric coverage (Table 1)");
  const auto r = sim::run_table(sim::Scenario::defaults(1));
  const std::array<const char*, 5> methods = {"fieller", "delta", "delta-bc", "edgeworth", "edgeworth-bc"};
  struct Row {
    const char* cell;
    std::array<double, 5> cov;
  };
  const Row target[] = {
      {"normal n=20", {.9563, .9421, .9422, .9426, .9426}},
      {"normal n=50", {.9529, .9477, .9477, .9478, .9477}},
      {"normal n=200", {.9505, .9490, .9491, .9490, .9490}},
      {"normal n=2000", {.9504, .9503, .9503, .9503, .9503}},
      {"poisson n=20", {.9400, .9322, .9370, .9341, .9396}},
      {"poisson n=50", {.9481, .9448, .9464, .9464, .9478}},
      {"poisson n=200", {.9500, .9491, .9493, .9496, .9498}},
      {"poisson n=2000", {.9494, .9494, .9495, .9494, .9495}},
      {"bernoulli n=20", {.9539, .9403, .9490, .9476, .9521}},
      {"bernoulli n=50", {.9547, .9507, .9484, .9513, .9539}},
      {"bernoulli n=200", {.9525, .9513, .9509, .9517, .9513}},
      {"bernoulli n=2000", {.9502, .9500, .9499, .9501, .9500}},
  };
  for (const auto& row : target) {
    for (std::size_t m = 0; m < methods.size(); ++m) check_coverage(cr, r, row.cell, methods[m], row.cov[m], 0.01);
  }
  return cr.finish();
}

bool criterion2() {
  Criterion cr("2 clustered mean (Table 2)");
  const auto r = sim::run_table(sim::Scenario::defaults(2));
  const std::string cell = "K=1000";
  const auto& naive = r.find(cell, "naive");
  const auto& delta = r.find(cell, "delta");
  const auto& lmm = r.find(cell, "mixed-effect");
  const auto& weighted = r.find(cell, "mixed-weighted");
  cr.check(std::abs(naive.mean_estimate - 0.667) <= 0.003, fmt("naive estimate %.5f, want 0.667 +- 0.003", naive.mean_estimate));
  cr.check(naive.mean_se <= 0.006, fmt("naive avg SE %.5f, want <= 0.006", naive.mean_se));
  cr.check(std::abs(delta.mean_estimate - 0.667) <= 0.003, fmt("delta estimate %.5f, want 0.667 +- 0.003", delta.mean_estimate));
  cr.check(std::abs(delta.mean_se / delta.true_sd - 1.0) <= 0.10,
           fmt("delta avg SE %.5f vs empirical SD %.5f, want within 10%%", delta.mean_se, delta.true_sd));
  cr.check(std::abs(lmm.mean_estimate - 0.547) <= 0.02, fmt("mixed-effect estimate %.5f, want 0.547 +- 0.02", lmm.mean_estimate));
  cr.check(std::abs(weighted.mean_estimate - 0.662) <= 0.01,
           fmt("weighted correction %.5f, want 0.662 +- 0.01", weighted.mean_estimate));
  return cr.finish();
}

bool criterion3() {
  Criterion cr("3 quantile coverage (Table 3)");
  const auto r = sim::run_table(sim::Scenario::defaults(3));
  struct Row {
    const char* cell;
    std::array<double, 3> cov;  // bootstrap, pre, post
  };
  const Row target[] = {
      {"normal Nu=100", {.9039, .9465, .9369}},    {"normal Nu=1000", {.9500, .9549, .9506}},
      {"normal Nu=10000", {.9500, .9500, .9482}},  {"lognormal Nu=100", {.8551, .9198, .9049}},
      {"lognormal Nu=1000", {.9403, .9474, .9421}}, {"lognormal Nu=10000", {.9458, .9482, .9479}},
  };
  const std::array<const char*, 3> methods = {"bootstrap", "outer-pre", "outer-post"};
  for (const auto& row : target) {
    for (std::size_t m = 0; m < methods.size(); ++m) check_coverage(cr, r, row.cell, methods[m], row.cov[m], 0.015);
  }
  for (const char* cell : {"normal Nu=100", "lognormal Nu=100"}) {
    const double b = r.find(cell, "bootstrap").coverage;
    const double pre = r.find(cell, "outer-pre").coverage;
    const double post = r.find(cell, "outer-post").coverage;
    cr.check(b < post && post < pre, fmt("%-22s ordering bootstrap %.4f < post %.4f < pre %.4f", cell, b, post, pre));
  }
  return cr.finish();
}

bool criterion4() {
  Criterion cr("4 cross-over with missing data (Tables 4-5)");
  const double truth = sim::table45_oracle_truth();
  {
    const auto r = sim::run_table(sim::Scenario::defaults(4));
    const std::string cell = "users_per_group=1000";
    const auto& gls = r.find(cell, "delta-gls");
    const auto& lmm = r.find(cell, "mixed-effect");
    cr.check(std::abs(gls.mean_estimate - truth) <= 0.02,
             fmt("delta-gls estimate %.4f vs oracle truth %.4f, want +- 0.02", gls.mean_estimate, truth));
    cr.check(std::abs(gls.mean_se / gls.true_sd - 1.0) <= 0.10,
             fmt("delta-gls avg SE %.4f vs empirical SD %.4f, want within 10%%", gls.mean_se, gls.true_sd));
    cr.check(std::abs(lmm.mean_estimate - 7.13) <= 0.05, fmt("mixed-effect estimate %.4f, want 7.13 +- 0.05", lmm.mean_estimate));
    cr.check(std::abs(lmm.mean_se / lmm.true_sd - 1.0) <= 0.10,
             fmt("mixed-effect avg SE %.4f vs empirical SD %.4f, want within 10%%", lmm.mean_se, lmm.true_sd));
  }
  {
    const auto s = sim::Scenario::defaults(5);
    const auto r = sim::run_table(s);
    const std::string cell = "users_per_group=" + std::to_string(s.crossover_users);
    const struct {
      const char* method;
      double target;
    } rows[] = {{"mixed-effect-complete", 7.3876}, {"linear-incomplete", 5.1174}, {"weighted-average", 7.0766}};
    for (const auto& row : rows) {
      const double est = r.find(cell, row.method).mean_estimate;
      cr.check(std::abs(est - row.target) <= 0.05,
               fmt("%-22s estimate %.4f, target %.4f, want +- 0.05", row.method, est, row.target));
    }
    const double wv = r.find(cell, "weighted-average").mean_variance;
    cr.check(std::abs(wv / 0.00155 - 1.0) <= 0.15, fmt("weighted-average variance %.6f, target 0.00155, want within 15%%", wv));
  }
  return cr.finish();
}

// ---------------------------------------------------------------------------
// Criterion 5: property suites

void prop_moments(Criterion& cr) {
  Gen g(501);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(g.integer(3, 200));
    std::vector<double> x(n), y(n);
    const double loc = g.uniform(-1e4, 1e4);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = loc + g.normal();
      y[i] = x[i] * g.uniform() + g.normal(3.0, 2.0);
    }
    const auto cut = static_cast<std::size_t>(g.integer(0, static_cast<long>(n)));
    dm::PairedMoments a, b;
    for (std::size_t i = 0; i < cut; ++i) a = accumulate(std::move(a), x[i], y[i]);
    for (std::size_t i = cut; i < n; ++i) b = accumulate(std::move(b), x[i], y[i]);
    const auto s = derive_stats(merge(b, a));
    const auto o = testing_support::two_pass(x, y);
    const double sx = std::sqrt(static_cast<double>(o.var_x));
    const double sy = std::sqrt(static_cast<double>(o.var_y));
    const bool ok = close_rel(s.mean_x, static_cast<double>(o.mean_x), 1e-9, sx) &&
                    close_rel(s.var_x, static_cast<double>(o.var_x), 1e-9) &&
                    close_rel(s.var_y, static_cast<double>(o.var_y), 1e-9) &&
                    close_rel(s.cov_xy, static_cast<double>(o.cov), 1e-9, sx * sy);
    bad += ok ? 0 : 1;
  }
  cr.check(bad == 0, fmt("moments shard merge vs two-pass oracle: %d/1000 mismatches", bad));
}

dm::RatioInput paired(const std::vector<double>& x, const std::vector<double>& y) {
  return dm::RatioInput::paired(dm::accumulate_all(dm::PairedMoments{}, x, y));
}

void prop_ratio(Criterion& cr) {
  constexpr std::array methods = {dm::IntervalMethod::kFieller, dm::IntervalMethod::kDelta,
                                  dm::IntervalMethod::kDeltaBiasCorrected, dm::IntervalMethod::kEdgeworth,
                                  dm::IntervalMethod::kEdgeworthBiasCorrected};
  Gen g(502);
  int bad = 0;
  int zero_bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(g.integer(5, 60));
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = g.normal(10.0, 2.0);
      y[i] = 0.5 * x[i] + g.normal(6.0, 1.5);
    }
    const double c = std::exp(g.uniform(-4.0, 4.0));
    auto xs = x, ys = y;
    for (auto& v : xs) v *= c;
    for (auto& v : ys) v *= c;
    for (auto m : methods) {
      const auto a = dm::ratio_ci(paired(x, y), m);
      const auto b = dm::ratio_ci(paired(xs, ys), m);
      const double tol = 1e-9 * std::max(1.0, a.width());
      if (std::abs(a.lower - b.lower) > tol || std::abs(a.upper - b.upper) > tol) ++bad;
      if (m != dm::IntervalMethod::kFieller) {
        const auto z = dm::ratio_ci(paired(x, x), m);
        if (std::abs(z.point) > 1e-15 || z.width() > 1e-12) ++zero_bad;
      }
    }
  }
  cr.check(bad == 0, fmt("ratio CI scale invariance: %d/1000 mismatches", bad));
  cr.check(zero_bad == 0, fmt("ratio CI with Y = X has zero width: %d/800 mismatches", zero_bad));

  dm::PairedMoments m;
  for (std::size_t i = 0; i < 1000000; ++i) {
    const double x = g.normal(1.0, 0.1);
    m = accumulate(std::move(m), x, 0.3 * x + g.normal(0.8, 0.1));
  }
  const auto in = dm::RatioInput::paired(m);
  const auto f = dm::fieller_ci(in);
  const auto d = dm::delta_ci(in, false);
  const double gap = std::max(std::abs(f.lower - d.lower), std::abs(f.upper - d.upper)) / (0.5 * d.width());
  cr.check(gap < 1e-3, fmt("Fieller vs Delta at n = 10^6: bound gap %.2e of half-width, want < 1e-3", gap));

  std::vector<double> sx, sy;
  for (int i = 0; i < 50; ++i) {
    const double a = g.normal();
    const double b = 0.4 * a + g.normal(0.0, 0.5);
    sx.insert(sx.end(), {5.0 + a, 5.0 - a});
    sy.insert(sy.end(), {6.0 + b, 6.0 - b});
  }
  const auto sym = paired(sx, sy);
  const auto e = dm::edgeworth_ci(sym, false);
  const auto dd = dm::delta_ci(sym, false);
  const double diff = std::max(std::abs(e.lower - dd.lower), std::abs(e.upper - dd.upper));
  cr.check(diff < 1e-9, fmt("Edgeworth with zero skewness equals Delta: max diff %.2e", diff));
}

void prop_cluster(Criterion& cr) {
  Gen g(503);
  std::vector<std::pair<int, double>> obs;
  std::vector<double> values;
  for (int i = 0; i < 500; ++i) {
    const double v = g.normal(1.0, 2.0);
    obs.emplace_back(i, v);
    values.push_back(v);
  }
  const double iid = testing_support::variance_of(values) / 500.0;
  const double got = dm::delta_variance(dm::summarize(obs)).variance;
  cr.check(close_rel(got, iid, 1e-9), fmt("cluster Delta variance, singleton clusters: %.10g vs s^2/K %.10g", got, iid));

  obs.clear();
  std::vector<double> mus;
  for (int c = 0; c < 100; ++c) {
    const double mu = g.normal();
    mus.push_back(mu);
    for (int j = 0; j < 5; ++j) obs.emplace_back(c, mu);
  }
  const double eq = testing_support::variance_of(mus) / 100.0;
  const double got2 = dm::delta_variance(dm::summarize(obs)).variance;
  cr.check(close_rel(got2, eq, 1e-9),
           fmt("cluster Delta variance, equal sizes: %.10g vs var(cluster means)/K %.10g", got2, eq));
}

void prop_quantile(Criterion& cr) {
  Gen g(504);
  int sandwich_bad = 0;
  int equi_bad = 0;
  for (int trial = 0; trial < 300; ++trial) {
    dm::ClusteredSample s, t;
    const long k = g.integer(2, 60);
    for (long c = 0; c < k; ++c) {
      std::vector<double> v(static_cast<std::size_t>(g.integer(1, 8)));
      const double shared = g.normal();
      for (auto& x : v) x = shared + g.normal();
      s.add_cluster(v);
      for (auto& x : v) x = std::exp(x);
      t.add_cluster(v);
    }
    const double p = g.uniform(0.05, 0.95);
    for (auto adj : {dm::QuantileAdjust::kPre, dm::QuantileAdjust::kPost}) {
      const auto e = dm::outer_ci(s, {p, 0.05, adj});
      if (!(e.lower_rank <= e.point_rank && e.point_rank <= e.upper_rank && e.lower <= e.value &&
            e.value <= e.upper)) {
        ++sandwich_bad;
      }
    }
    const auto a = dm::outer_ci(s, {p, 0.05, dm::QuantileAdjust::kPre});
    const auto b = dm::outer_ci(t, {p, 0.05, dm::QuantileAdjust::kPre});
    if (b.lower != std::exp(a.lower) || b.upper != std::exp(a.upper) || b.value != std::exp(a.value)) ++equi_bad;
  }
  cr.check(sandwich_bad == 0, fmt("outer CI rank sandwich: %d/600 violations", sandwich_bad));
  cr.check(equi_bad == 0, fmt("outer CI monotone equivariance under exp: %d/300 violations", equi_bad));

  int sel_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(g.integer(1, 300));
    std::vector<double> v(n);
    for (auto& x : v) x = g.bernoulli(0.5) ? static_cast<double>(g.integer(0, 4)) : g.normal();
    std::vector<std::size_t> ranks(static_cast<std::size_t>(g.integer(1, 5)));
    for (auto& r : ranks) r = static_cast<std::size_t>(g.integer(1, static_cast<long>(n)));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const auto got = dm::select_ranks(v, ranks);
    for (auto r : ranks) sel_bad += got.at(r) == sorted[r - 1] ? 0 : 1;
  }
  cr.check(sel_bad == 0, fmt("select_ranks vs full sort: %d mismatches over 1000 cases", sel_bad));
}

void prop_crossover(Criterion& cr) {
  Gen g(505);
  int bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<dm::CrossoverObservation> rows;
    const long users = g.integer(4, 80);
    for (long u = 0; u < users; ++u) {
      for (int t = 1; t <= 2; ++t) {
        dm::CrossoverObservation o{static_cast<std::uint64_t>(u), dm::CrossoverGroup::kI, t, std::nullopt};
        if (!g.bernoulli(0.4)) o.value = g.normal(5.0, 2.0);
        rows.push_back(o);
      }
    }
    const auto panel = dm::augment(rows);
    double sum[2] = {0, 0}, cnt[2] = {0, 0};
    for (const auto& o : rows) {
      if (o.value) {
        sum[o.period - 1] += *o.value;
        cnt[o.period - 1] += 1;
      }
    }
    if (panel.users.size() < 2 || cnt[0] == 0 || cnt[1] == 0) continue;
    const auto m = dm::metric_cov(panel.users);
    if (!close_rel(m.metric[0], sum[0] / cnt[0], 1e-12) || !close_rel(m.metric[1], sum[1] / cnt[1], 1e-12)) ++bad;
  }
  cr.check(bad == 0, fmt("augmentation ratio equals mean over present cells: %d violations", bad));

  int gls_bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    dm::GroupMetricVector a, b;
    a.metric = {g.normal(), g.normal()};
    b.metric = {g.normal(), g.normal()};
    a.metric_cov = b.metric_cov = Eigen::Matrix2d::Identity();
    const auto fit = dm::fit_crossover(a, b);
    const Eigen::Vector4d x(a.metric[0], a.metric[1], b.metric[0], b.metric[1]);
    const auto design = dm::crossover_design();
    const Eigen::Vector3d ols = (design.transpose() * design).ldlt().solve(design.transpose() * x);
    if ((fit.theta - ols).cwiseAbs().maxCoeff() > 1e-12) ++gls_bad;
  }
  cr.check(gls_bad == 0, fmt("GLS equals OLS under identity covariance: %d/100 violations", gls_bad));
}

void prop_reml(Criterion& cr) {
  Gen g(506);
  double worst = 0.0;
  int fits = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = static_cast<int>(g.integer(5, 40));
    const int m = static_cast<int>(g.integer(2, 8));
    dm::LmmData d(1);
    std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
    for (int c = 0; c < k; ++c) {
      const double b = g.normal(0.0, 1.5);
      for (int j = 0; j < m; ++j) {
        const double y = 2.0 + b + g.normal();
        d.add(static_cast<std::uint64_t>(c), {1.0}, y);
        sums[static_cast<std::size_t>(c)] += y;
      }
    }
    double grand = 0.0;
    for (double s : sums) grand += s;
    grand /= k * m;
    double msb = 0.0, msw = 0.0;
    for (double s : sums) msb += m * std::pow(s / m - grand, 2);
    msb /= k - 1;
    for (std::size_t r = 0; r < d.rows(); ++r) msw += std::pow(d.y(r) - sums[d.cluster_of(r)] / m, 2);
    msw /= k * (m - 1);
    if (msb <= msw) continue;
    const auto fit = dm::fit_random_intercept(d);
    const double tau2 = (msb - msw) / m;
    worst = std::max({worst, std::abs(fit.sigma2 / msw - 1.0), std::abs(fit.tau2 / tau2 - 1.0)});
    ++fits;
  }
  cr.check(fits >= 30 && worst <= 1e-6,
           fmt("REML vs balanced ANOVA: max relative error %.2e over %d fits, want <= 1e-6", worst, fits));
}

bool criterion5() {
  Criterion cr("5 property suites");
  prop_moments(cr);
  prop_ratio(cr);
  prop_cluster(cr);
  prop_quantile(cr);
  prop_crossover(cr);
  prop_reml(cr);
  return cr.finish();
}

// ---------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DELTAMETRICS_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool criterion6() {
  Criterion cr("6 simulate determinism");
  const auto dir = std::filesystem::temp_directory_path() / "deltametrics_acceptance";
  std::filesystem::create_directories(dir);
  for (int table = 1; table <= 5; ++table) {
    const auto a = dir / ("a" + std::to_string(table) + ".json");
    const auto b = dir / ("b" + std::to_string(table) + ".json");
    const std::string common = "--seed 424242 simulate --table " + std::to_string(table) + " --sims 100 --out ";
    const int ea = run_cli(common + a.string());
    const int eb = run_cli(common + b.string());
    const std::string ja = slurp(a);
    cr.check(ea == 0 && eb == 0 && !ja.empty() && ja == slurp(b),
             fmt("table %d: exit %d/%d, %zu bytes, identical=%s", table, ea, eb, ja.size(),
                 ja == slurp(b) ? "yes" : "no"));
  }
  std::filesystem::remove_all(dir);
  return cr.finish();
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--verbose") == 0) {
      g_verbose = true;
    } else {
      only.push_back(std::atoi(argv[i]));
    }
  }
  const std::array<std::function<bool()>, 6> criteria = {criterion1, criterion2, criterion3,
                                                          criterion4, criterion5, criterion6};
  int failed = 0;
  for (int c = 1; c <= 6; ++c) {
    if (!only.empty() && std::find(only.begin(), only.end(), c) == only.end()) continue;
    try {
      failed += criteria[static_cast<std::size_t>(c - 1)]() ? 0 : 1;
    } catch (const std::exception& e) {
      std::printf("FAIL criterion %d: %s\n", c, e.what());
      ++failed;
    }
  }
  return failed;
}
