// deltametrics: confidence intervals for ratio, clustered, quantile and
// cross-over metrics from CSV input, plus the coverage simulations.
//
// Exit codes: 0 success, 2 invalid input, 3 insufficient or degenerate data.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deltametrics/commands.hpp"

namespace dm = deltametrics;

namespace {

struct Globals {
  double alpha = 0.05;
  std::uint64_t seed = 20180501;
  unsigned threads = 0;
  std::string format = "json";
};

std::istream& open_input(const std::string& path, std::ifstream& file) {
  if (path == "-") return std::cin;
  file.open(path);
  if (!file) throw dm::InputError("cannot open '" + path + "'");
  return file;
}

void emit(const dm::Report& r, const Globals& g) {
  if (g.format == "table") {
    std::cout << dm::to_table(r);
  } else {
    std::cout << dm::to_json(r).dump(2) << '\n';
  }
}

std::string coverage_table(const dm::sim::CoverageReport& r) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %-22s %10s %10s %12s %12s %12s\n", "cell", "method",
                "coverage", "mc_se", "estimate", "true_sd", "mean_se");
  out += buf;
  for (const auto& m : r.rows) {
    std::snprintf(buf, sizeof buf, "%-24s %-22s %10.6g %10.6g %12.6g %12.6g %12.6g\n",
                  m.cell.c_str(), m.method.c_str(), m.coverage, m.coverage_mc_se, m.mean_estimate,
                  m.true_sd, m.mean_se);
    out += buf;
  }
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delta-method confidence intervals for online metrics"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--alpha", g.alpha, "Two-sided tail probability")->capture_default_str();
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (default: DELTAMETRICS_THREADS or all cores)");
  app.add_option("--format", g.format, "Output format")
      ->check(CLI::IsMember({"json", "table"}))
      ->capture_default_str();

  std::string input = "-";

  auto* ratio = app.add_subcommand("ratio-ci", "Percent change of paired columns x, y");
  std::string ratio_method = "delta-bc";
  ratio->add_option("file", input, "CSV file ('-' for stdin)");
  ratio->add_option("--method", ratio_method, "fieller, delta, delta-bc, edgeworth, edgeworth-bc")
      ->capture_default_str();

  auto* cluster = app.add_subcommand("cluster-ci", "Mean of clustered observations unit_id, value");
  cluster->add_option("file", input, "CSV file ('-' for stdin)");

  auto* quantile = app.add_subcommand("quantile-ci", "Quantile of clustered observations");
  double p = 0.5;
  std::string adjust = "post";
  std::optional<std::size_t> bootstrap;
  quantile->add_option("file", input, "CSV file ('-' for stdin)");
  quantile->add_option("--p", p, "Quantile level in (0, 1)")->capture_default_str();
  quantile->add_option("--adjust", adjust, "pre or post")->capture_default_str();
  quantile->add_option("--bootstrap", bootstrap, "Cluster bootstrap with N replicates instead");

  auto* crossover = app.add_subcommand("crossover", "Cross-over ATE from user_id, group, period, value");
  std::string cross_method = "delta-gls";
  crossover->add_option("file", input, "CSV file ('-' for stdin)");
  crossover->add_option("--method", cross_method, "delta-gls, lmm or decompose")->capture_default_str();

  auto* simulate = app.add_subcommand("simulate", "Coverage simulation for one of tables 1-5");
  int table = 1;
  std::optional<std::size_t> sims;
  std::string out_path;
  simulate->add_option("--table", table, "Table number 1-5")->required();
  simulate->add_option("--sims", sims, "Replicates per cell (default: the table's)");
  simulate->add_option("--out", out_path, "Write report.json or report.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    std::ifstream file;
    if (ratio->parsed()) {
      emit(dm::cmd_ratio_ci(open_input(input, file), g.alpha, dm::parse_interval_method(ratio_method)), g);
    } else if (cluster->parsed()) {
      emit(dm::cmd_cluster_ci(open_input(input, file), g.alpha), g);
    } else if (quantile->parsed()) {
      const dm::QuantileQuery q{p, g.alpha, dm::parse_quantile_adjust(adjust)};
      emit(dm::cmd_quantile_ci(open_input(input, file), q, bootstrap, g.seed), g);
    } else if (crossover->parsed()) {
      emit(dm::cmd_crossover(open_input(input, file), g.alpha, dm::parse_crossover_method(cross_method)), g);
    } else if (simulate->parsed()) {
      const auto scenario = dm::simulation_scenario(table, sims, g.seed, g.alpha);
      const auto report = dm::sim::run_table(scenario, g.threads);
      if (out_path.empty()) {
        if (g.format == "table") {
          std::cout << coverage_table(report);
        } else {
          std::cout << dm::to_json(report).dump(2) << '\n';
        }
      } else {
        std::ofstream out(out_path);
        if (!out) throw dm::InputError("cannot write '" + out_path + "'");
        if (ends_with(out_path, ".csv")) {
          dm::write_csv(out, report);
        } else {
          out << dm::to_json(report).dump(2) << '\n';
        }
      }
    }
  } catch (const dm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
