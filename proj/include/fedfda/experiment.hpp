#pragma once

// Experiment drivers behind the command line: dataset assembly, the federated
// run with its CSV reports, the bound sweep and the partition preview.

#include "fedfda/config.hpp"
#include "fedfda/datagen.hpp"
#include "fedfda/federation.hpp"
#include "fedfda/theory_lab.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

namespace fedfda {

inline std::vector<ClientShard> build_shards(const DatasetConfig& ds) {
  Dataset pool;
  if (ds.csv_path) {
    pool = load_csv_dataset(*ds.csv_path);
  } else {
    Rng rng = make_stream(ds.split_seed, StreamTag::dataset);
    pool = generate_base_dataset(ds.synthetic, rng);
  }
  return build_federated_shards(pool, ds.benchmark, ds.split_seed);
}

/// Worker count from FEDFDA_THREADS, falling back to the hardware count.
inline int threads_from_env() {
  if (const char* env = std::getenv("FEDFDA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 1024) return static_cast<int>(v);
    throw ConfigError("FEDFDA_THREADS must be an integer in [1, 1024]");
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_rounds_csv(const std::filesystem::path& path,
                             const std::vector<RoundReport>& reports) {
  std::ofstream out(path);
  detail::require(out.good(), "cannot write '", path.string(), "'");
  out << "round,mean_acc,std_acc,mean_beta,active_clients\n";
  for (const auto& r : reports) {
    out << r.round << ',' << fixed6(r.mean_acc) << ',' << fixed6(r.std_acc) << ','
        << fixed6(r.mean_beta) << ',' << r.active.size() << '\n';
  }
  detail::require(out.good(), "failed writing '", path.string(), "'");
}

inline void write_clients_csv(const std::filesystem::path& path, const std::vector<ClientRow>& rows) {
  std::ofstream out(path);
  detail::require(out.good(), "cannot write '", path.string(), "'");
  out << "client_id,n_train,corruption_kind,severity,beta,test_acc\n";
  for (const auto& r : rows) {
    out << r.client_id << ',' << r.n_train << ','
        << (r.corruption ? to_string(r.corruption->kind) : std::string("none")) << ','
        << (r.corruption ? r.corruption->severity : 0) << ',' << fixed6(r.beta) << ','
        << (r.test_acc ? fixed6(*r.test_acc) : std::string("nan")) << '\n';
  }
  detail::require(out.good(), "failed writing '", path.string(), "'");
}

/// Builds the shards, runs the federation and writes rounds.csv and
/// clients.csv into the configured output directory.
inline FederationResult run_experiment(const ExperimentConfig& cfg) {
  const auto shards = build_shards(cfg.dataset);
  FederationResult result = run_federation(cfg.federation, shards);
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  write_rounds_csv(dir / "rounds.csv", result.reports);
  write_clients_csv(dir / "clients.csv", result.clients);
  return result;
}

struct TheoryRow {
  double beta = 0.0;
  double mc_mean_error = 0.0;
  double bound = 0.0;
  double coverage = 0.0;
};

/// Sweeps beta over an even grid: Monte Carlo mean error, the closed-form
/// bound and its empirical coverage, all on the same trial draws.
inline std::vector<TheoryRow> theory_sweep(const TheoremScenario& base, int client, int trials,
                                           int grid_points, std::uint64_t seed, int threads) {
  validate(base);
  detail::require(trials >= 1, "trials must be >= 1");
  detail::require(client >= 0 && client < base.num_clients(), "client index out of range");
  const auto grid = uniform_grid(grid_points);
  const Vector theta_i = base.thetas.row(client).transpose();
  std::vector<detail::TrialMeans> draws(static_cast<std::size_t>(trials));
  detail::for_each_trial(base, client, trials, seed, threads,
                         [&](std::size_t t, const detail::TrialMeans& m) { draws[t] = m; });
  std::vector<TheoryRow> rows;
  for (double beta : grid) {
    TheoremScenario s = base;
    s.beta = beta;
    const double bound = theorem_bound(s, client);
    double sum = 0.0;
    std::size_t inside = 0;
    for (const auto& m : draws) {
      const double e = (beta * m.local + (1.0 - beta) * m.global - theta_i).squaredNorm();
      sum += e;
      if (e <= bound) ++inside;
    }
    rows.push_back({beta, sum / trials, bound, static_cast<double>(inside) / trials});
  }
  return rows;
}

inline void write_theory_csv(const std::filesystem::path& path, const std::vector<TheoryRow>& rows) {
  std::ofstream out(path);
  detail::require(out.good(), "cannot write '", path.string(), "'");
  out << "beta,mc_mean_error,bound,coverage\n";
  for (const auto& r : rows) {
    out << fixed6(r.beta) << ',' << fixed6(r.mc_mean_error) << ',' << fixed6(r.bound) << ','
        << fixed6(r.coverage) << '\n';
  }
  detail::require(out.good(), "failed writing '", path.string(), "'");
}

struct PartitionCell {
  int client_id = 0;
  int class_id = 0;
  std::size_t count = 0;
};

/// Dirichlet partition of a class-balanced label vector, tabulated per
/// (client, class), zero cells included.
inline std::vector<PartitionCell> partition_preview(int num_clients, int num_classes,
                                                    int samples_per_class, double alpha,
                                                    std::uint64_t seed) {
  detail::require(num_classes >= 1 && samples_per_class >= 1, "partition sizes must be positive");
  std::vector<int> labels;
  for (int c = 0; c < num_classes; ++c) labels.insert(labels.end(), static_cast<std::size_t>(samples_per_class), c);
  Rng rng = make_stream(seed, StreamTag::partition);
  const Partition parts = dirichlet_partition(labels, num_clients, alpha, rng);
  std::vector<PartitionCell> cells;
  for (std::size_t m = 0; m < parts.size(); ++m) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t j : parts[m]) ++counts[static_cast<std::size_t>(labels[j])];
    for (int c = 0; c < num_classes; ++c) {
      cells.push_back({static_cast<int>(m), c, counts[static_cast<std::size_t>(c)]});
    }
  }
  return cells;
}

inline void write_partition_csv(const std::filesystem::path& path,
                                const std::vector<PartitionCell>& cells) {
  std::ofstream out(path);
  detail::require(out.good(), "cannot write '", path.string(), "'");
  out << "client_id,class_id,count\n";
  for (const auto& c : cells) out << c.client_id << ',' << c.class_id << ',' << c.count << '\n';
  detail::require(out.good(), "failed writing '", path.string(), "'");
}

}  // namespace fedfda
