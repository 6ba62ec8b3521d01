#include "fedfda/experiment.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fedfda {
namespace {

namespace fs = std::filesystem;

constexpr const char* kMinimal = R"({"dataset": {}, "federation": {"algorithm": "pfedfda"}})";

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fedfda_config_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::string error_of(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig cfg = parse_config_string(R"({
    "dataset": {"synthetic": {"num_classes": 3, "input_dim": 6, "latent_dim": 3,
                              "samples_per_class": 60},
                "num_clients": 4, "alpha": 1.0, "split_seed": 3},
    "federation": {"algorithm": "pfedfda", "rounds": 2, "local_epochs": 1, "q": 0.5},
    "model": {"hidden_dims": [8], "feature_dim": 4},
    "eval_every": 1})");
  cfg.output_dir = out.string();
  return cfg;
}

TEST(ParseConfig, MinimalConfigFillsDefaults) {
  const ExperimentConfig c = parse_config_string(kMinimal);
  const auto& f = c.federation;
  EXPECT_EQ(f.algorithm, AlgorithmKind::pfedfda);
  EXPECT_EQ(f.rounds, 200);
  EXPECT_EQ(f.hyper.epochs, 5);
  EXPECT_EQ(f.hyper.lr, 0.01);
  EXPECT_EQ(f.hyper.momentum, 0.5);
  EXPECT_EQ(f.hyper.weight_decay, 5e-4);
  EXPECT_EQ(f.hyper.batch_size, 50);
  EXPECT_EQ(f.q, 0.3);
  EXPECT_EQ(f.folds, 2);
  EXPECT_EQ(f.beta_mode, BetaMode::single);
  EXPECT_EQ(f.eval_every, 10);
  EXPECT_EQ(f.cov.epsilon, 1e-4);
  EXPECT_EQ(c.dataset.benchmark.num_clients, 20);
  EXPECT_EQ(c.dataset.benchmark.alpha, 0.5);
  EXPECT_TRUE(c.dataset.benchmark.shift);
  EXPECT_FALSE(c.dataset.csv_path.has_value());
}

TEST(ParseConfig, ErrorMessages) {
  EXPECT_NE(error_of(R"({"dataset": {}, "federation": {"algorithm": "pfedfda", "q": 1.5}})")
                .find("q out of (0,1]"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {}, "federation": {"algorithm": "pfedfda"}, "foo": 1})").find("foo"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {"foo": 1}, "federation": {"algorithm": "pfedfda"}})").find("foo"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {}})").find("federation"), std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {}, "federation": {"algorithm": "sgd"}})").find("sgd"), std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {}, "federation": {"algorithm": "pfedfda", "rounds": "ten"}})")
                .find("rounds"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {}, "federation": {"algorithm": "pfedfda", "grad_clip": -1}})")
                .find("grad_clip"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {}, "federation": {"algorithm": "pfedfda"}, "pfedfda": {"k": 1}})")
                .find("k must be"),
            std::string::npos);
  EXPECT_NE(error_of("{not json").find("invalid JSON"), std::string::npos);
  EXPECT_NE(error_of(R"({"dataset": {"csv": "a.csv", "synthetic": {}}, "federation": {"algorithm": "fedavg"}})")
                .find("mutually exclusive"),
            std::string::npos);
  EXPECT_THROW(parse_config("/nonexistent/fedfda.json"), ConfigError);
}

TEST(ParseConfig, RoundTripIsFixedPoint) {
  const ExperimentConfig a = parse_config_string(R"({
    "dataset": {"synthetic": {"num_classes": 4, "separation": 0.75, "lift": "identity",
                              "input_dim": 20, "latent_dim": 10},
                "alpha": 0.1, "scarcity": 0.25, "shift": {"enabled": false}, "split_seed": 9},
    "federation": {"algorithm": "fedavg_ft", "rounds": 7, "lr": 0.05, "grad_clip": 2.5},
    "model": {"hidden_dims": [16, 8], "feature_dim": 6},
    "pfedfda": {"beta_mode": "multi", "k": 3, "epsilon": 0.001},
    "seed": 12345, "output_dir": "results", "eval_every": 3})");
  EXPECT_EQ(a.federation.hyper.grad_clip, 2.5);
  EXPECT_EQ(a.federation.hidden_dims, (std::vector<int>{16, 8}));
  EXPECT_EQ(a.dataset.synthetic.lift, LiftKind::identity);
  const auto once = config_to_json(a);
  const auto twice = config_to_json(config_from_json(once));
  EXPECT_EQ(once, twice);
  const auto csv = parse_config_string(R"({"dataset": {"csv": "data.csv"}, "federation": {"algorithm": "fedavg"}})");
  EXPECT_EQ(config_to_json(config_from_json(config_to_json(csv))), config_to_json(csv));
}

TEST(ThreadsFromEnv, ParsesAndRejects) {
  ::setenv("FEDFDA_THREADS", "3", 1);
  EXPECT_EQ(threads_from_env(), 3);
  ::setenv("FEDFDA_THREADS", "zero", 1);
  EXPECT_THROW(threads_from_env(), ConfigError);
  ::unsetenv("FEDFDA_THREADS");
  EXPECT_GE(threads_from_env(), 1);
}

TEST(RunExperiment, TinyRunEmitsConsistentCsvs) {
  const fs::path dir = scratch_dir("tiny");
  const ExperimentConfig cfg = tiny_config(dir);
  const FederationResult res = run_experiment(cfg);
  const auto rounds = read_csv(dir / "rounds.csv");
  const auto clients = read_csv(dir / "clients.csv");
  ASSERT_EQ(rounds.size(), 3u);
  EXPECT_EQ(rounds[0], (std::vector<std::string>{"round", "mean_acc", "std_acc", "mean_beta", "active_clients"}));
  EXPECT_EQ(clients[0],
            (std::vector<std::string>{"client_id", "n_train", "corruption_kind", "severity", "beta", "test_acc"}));
  ASSERT_EQ(clients.size(), 5u);
  EXPECT_EQ(rounds.back()[4], "4");

  // two of four clients are shifted
  EXPECT_EQ(clients[1][2], "rotate");
  EXPECT_EQ(clients[3][2], "none");
  EXPECT_EQ(clients[3][3], "0");

  std::vector<double> acc;
  for (std::size_t r = 1; r < clients.size(); ++r) {
    EXPECT_EQ(clients[r][5].size(), clients[r][5].find('.') + 7) << "six decimals";
    acc.push_back(std::stod(clients[r][5]));
  }
  double mean = 0.0;
  for (double a : acc) mean += a;
  mean /= acc.size();
  double ss = 0.0;
  for (double a : acc) ss += (a - mean) * (a - mean);
  EXPECT_NEAR(std::stod(rounds.back()[1]), mean, 1e-6);
  EXPECT_NEAR(std::stod(rounds.back()[2]), std::sqrt(ss / acc.size()), 1e-6);
  EXPECT_EQ(res.clients.size(), 4u);
}

TEST(RunExperiment, RepeatedRunIsByteIdentical) {
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const fs::path a = scratch_dir("rep_a");
  const fs::path b = scratch_dir("rep_b");
  run_experiment(tiny_config(a));
  ExperimentConfig cb = tiny_config(b);
  cb.federation.threads = 4;
  run_experiment(cb);
  EXPECT_EQ(slurp(a / "rounds.csv"), slurp(b / "rounds.csv"));
  EXPECT_EQ(slurp(a / "clients.csv"), slurp(b / "clients.csv"));
}

TEST(TheorySweep, DefaultScenarioRows) {
  const auto rows = theory_sweep(default_scenario(), 0, 500, 21, 1, 1);
  ASSERT_EQ(rows.size(), 21u);
  for (const auto& r : rows) {
    EXPECT_GE(r.coverage, 0.0);
    EXPECT_LE(r.coverage, 1.0);
    EXPECT_GE(r.bound, 0.0);
    TheoremScenario s = default_scenario();
    s.beta = r.beta;
    EXPECT_EQ(r.bound, theorem_bound(s, 0));
    EXPECT_NEAR(r.coverage, coverage_check(s, 0, 500, 1), 1e-12);
  }
  const fs::path dir = scratch_dir("theory");
  write_theory_csv(dir / "theory.csv", rows);
  const auto csv = read_csv(dir / "theory.csv");
  ASSERT_EQ(csv.size(), 22u);
  EXPECT_EQ(csv[0], (std::vector<std::string>{"beta", "mc_mean_error", "bound", "coverage"}));
}

TEST(PartitionPreview, ConservesClassTotalsAndIsReproducible) {
  const auto cells = partition_preview(7, 4, 50, 0.3, 11);
  ASSERT_EQ(cells.size(), 28u);
  std::vector<std::size_t> totals(4, 0);
  for (const auto& c : cells) totals[static_cast<std::size_t>(c.class_id)] += c.count;
  for (auto t : totals) EXPECT_EQ(t, 50u);
  const auto again = partition_preview(7, 4, 50, 0.3, 11);
  for (std::size_t k = 0; k < cells.size(); ++k) EXPECT_EQ(cells[k].count, again[k].count);
  const fs::path dir = scratch_dir("partition");
  write_partition_csv(dir / "partition.csv", cells);
  EXPECT_EQ(read_csv(dir / "partition.csv").size(), 29u);
}

}  // namespace
}  // namespace fedfda
