// fedfda: run federated experiments, sweep the estimation-error bound and
// preview Dirichlet partitions.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include "fedfda/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            std::optional<std::string> out_dir) {
  fedfda::ExperimentConfig cfg = fedfda::parse_config(config_path);
  if (seed) cfg.federation.seed = *seed;
  if (out_dir) cfg.output_dir = *out_dir;
  cfg.federation.threads = fedfda::threads_from_env();
  const auto result = fedfda::run_experiment(cfg);
  if (!result.reports.empty()) {
    const auto& last = result.reports.back();
    std::cout << fedfda::to_string(cfg.federation.algorithm) << ": round " << last.round
              << " mean_acc " << fedfda::fixed6(last.mean_acc) << " std_acc "
              << fedfda::fixed6(last.std_acc) << '\n';
  }
  std::cout << "wrote " << (std::filesystem::path(cfg.output_dir) / "rounds.csv").string()
            << " and clients.csv\n";
  return kExitOk;
}

struct TheoryArgs {
  std::string out = "out";
  std::uint64_t seed = 0;
  int trials = 10000;
  int grid = 21;
  int n_target = 10;
  double shift = 1.0;
  double delta = 0.1;
  double c = 0.125;
};

int cmd_theory(const TheoryArgs& a) {
  if (a.trials < 1 || a.grid < 2 || a.n_target < 1) {
    throw fedfda::ConfigError("theory: trials >= 1, grid >= 2 and n-target >= 1 required");
  }
  if (!(a.delta > 0.0 && a.delta < 1.0) || !(a.c > 0.0)) {
    throw fedfda::ConfigError("theory: delta must be in (0,1) and c > 0");
  }
  const auto scenario = fedfda::default_scenario(a.n_target, a.shift, 1.0, a.delta, a.c);
  const auto rows = fedfda::theory_sweep(scenario, 0, a.trials, a.grid, a.seed,
                                         fedfda::threads_from_env());
  std::filesystem::create_directories(a.out);
  const auto path = std::filesystem::path(a.out) / "theory.csv";
  fedfda::write_theory_csv(path, rows);
  std::cout << "wrote " << path.string() << " (" << rows.size() << " rows)\n";
  return kExitOk;
}

struct PartitionArgs {
  std::string out = "out";
  std::optional<std::string> config;
  int num_clients = 20;
  int num_classes = 5;
  int samples_per_class = 800;
  double alpha = 0.5;
  std::uint64_t seed = 0;
};

int cmd_partition(PartitionArgs a) {
  if (a.config) {
    const auto cfg = fedfda::parse_config(*a.config);
    a.num_clients = cfg.dataset.benchmark.num_clients;
    a.num_classes = cfg.dataset.synthetic.num_classes;
    a.samples_per_class = cfg.dataset.synthetic.samples_per_class;
    a.alpha = cfg.dataset.benchmark.alpha;
    a.seed = cfg.dataset.split_seed;
  }
  if (a.num_clients < 1 || a.num_classes < 1 || a.samples_per_class < 1 || !(a.alpha > 0.0)) {
    throw fedfda::ConfigError("partition-preview: sizes must be positive and alpha > 0");
  }
  const auto cells = fedfda::partition_preview(a.num_clients, a.num_classes, a.samples_per_class,
                                               a.alpha, a.seed);
  std::filesystem::create_directories(a.out);
  const auto path = std::filesystem::path(a.out) / "partition.csv";
  fedfda::write_partition_csv(path, cells);
  std::cout << "wrote " << path.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized federated learning simulator with generative classifiers"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  auto* run = app.add_subcommand("run", "run a federated experiment from a JSON config");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--seed", seed, "override the master seed");
  run->add_option("--out", out_dir, "override the output directory");

  TheoryArgs theory_args;
  auto* theory = app.add_subcommand("theory", "Monte Carlo sweep of the estimation-error bound");
  theory->add_option("--out", theory_args.out, "output directory");
  theory->add_option("--seed", theory_args.seed, "random seed");
  theory->add_option("--trials", theory_args.trials, "Monte Carlo trials");
  theory->add_option("--grid", theory_args.grid, "number of beta grid points");
  theory->add_option("--n-target", theory_args.n_target, "samples held by the evaluated client");
  theory->add_option("--shift", theory_args.shift, "distance of the evaluated client's mean");
  theory->add_option("--delta", theory_args.delta, "failure probability of the bound");
  theory->add_option("--c", theory_args.c, "absolute constant of the bound");

  PartitionArgs part_args;
  auto* partition = app.add_subcommand("partition-preview", "tabulate a Dirichlet label partition");
  partition->add_option("--out", part_args.out, "output directory");
  partition->add_option("--config", part_args.config, "take sizes, alpha and seed from a config");
  partition->add_option("--num-clients", part_args.num_clients, "number of clients");
  partition->add_option("--num-classes", part_args.num_classes, "number of classes");
  partition->add_option("--samples-per-class", part_args.samples_per_class, "samples per class");
  partition->add_option("--alpha", part_args.alpha, "Dirichlet concentration");
  partition->add_option("--seed", part_args.seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, seed, out_dir);
    if (*theory) return cmd_theory(theory_args);
    if (*partition) return cmd_partition(part_args);
  } catch (const fedfda::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
