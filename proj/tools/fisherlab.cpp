#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "fisherlab/cli.hpp"

using namespace fisherlab;

int main(int argc, char** argv) {
  CLI::App app{"fisherlab: stationary SGD covariance experiments"};
  app.set_version_flag("--version", std::string(cli::kVersion));
  app.require_subcommand(1);

  std::string which, scale = "desk", out_dir = "results", config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 7;
  unsigned threads = 0;

  auto* run = app.add_subcommand("run", "run one experiment or all of them");
  run->add_option("experiment", which, "exp1..exp6, expA, expB or all")->required();
  run->add_option("--seed", seed, "master seed")->capture_default_str();
  run->add_option("--scale", scale, "desk or paper")->capture_default_str();
  run->add_option("--out-dir", out_dir, "output root")->capture_default_str();
  run->add_option("--threads", threads, "worker threads (0: all cores)")->capture_default_str();
  run->add_option("--set", sets, "override <id>.<param>=value (repeatable)");
  run->add_option("--config", config_path, "key=value file; --set takes precedence");

  auto* chk = app.add_subcommand("check", "re-validate existing results against fresh analytic columns");
  chk->add_option("experiment", which, "exp1..exp6, expA, expB or all")->required();
  chk->add_option("--out-dir", out_dir, "output root")->capture_default_str();

  app.add_subcommand("list", "list experiments and their parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kPass : cli::kUsageError;
  }

  try {
    if (app.got_subcommand("list")) {
      cli::print_list(std::cout);
      return cli::kPass;
    }
    if (app.got_subcommand("check")) return cli::check(cli::resolve_ids(which), out_dir, std::cout);

    cli::RunConfig cfg;
    cfg.ids = cli::resolve_ids(which);
    cfg.scale = cli::parse_scale(scale);
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.out_dir = out_dir;
    if (!config_path.empty()) cfg.settings = cli::read_config_file(config_path);
    for (const auto& s : sets) {
      const auto [k, v] = cli::parse_assignment(s);
      cfg.settings[k] = v;
    }
    return cli::execute(cfg, std::cout, &std::cerr);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kRuntimeError;
  }
}
