#pragma once

// Simulated federation: participation sampling, parallel client updates,
// count-weighted aggregation and per-client evaluation for pFedFDA and the
// Local / FedAvg / FedAvg+fine-tuning baselines.

#include "fedfda/adaptation.hpp"
#include "fedfda/common.hpp"
#include "fedfda/datagen.hpp"
#include "fedfda/gauss_stats.hpp"
#include "fedfda/gen_classifier.hpp"
#include "fedfda/mlp.hpp"
#include "fedfda/rng.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace fedfda {

enum class AlgorithmKind { pfedfda, fedavg, fedavg_ft, local_only };

inline std::string to_string(AlgorithmKind a) {
  switch (a) {
    case AlgorithmKind::pfedfda: return "pfedfda";
    case AlgorithmKind::fedavg: return "fedavg";
    case AlgorithmKind::fedavg_ft: return "fedavg_ft";
    case AlgorithmKind::local_only: return "local_only";
  }
  return "?";
}

inline AlgorithmKind parse_algorithm(const std::string& s) {
  if (s == "pfedfda") return AlgorithmKind::pfedfda;
  if (s == "fedavg") return AlgorithmKind::fedavg;
  if (s == "fedavg_ft") return AlgorithmKind::fedavg_ft;
  if (s == "local_only") return AlgorithmKind::local_only;
  detail::fail("unknown algorithm '", s, "' (expected pfedfda|fedavg|fedavg_ft|local_only)");
}

struct FederationConfig {
  AlgorithmKind algorithm = AlgorithmKind::pfedfda;
  std::vector<int> hidden_dims{32};
  int feature_dim = 16;
  int rounds = 200;
  double q = 0.3;
  TrainHyper hyper{.grad_clip = 1.0};
  BetaMode beta_mode = BetaMode::single;
  int folds = 2;
  CovOptions cov{};
  double prior_floor = kDefaultPriorFloor;
  std::uint64_t seed = 0;
  int eval_every = 10;
  int threads = 1;
};

inline void validate(const FederationConfig& c) {
  detail::require(c.rounds >= 0, "rounds must be >= 0");
  detail::require(c.q > 0.0 && c.q <= 1.0, "q out of (0,1]");
  detail::require(c.folds >= 2, "folds must be >= 2");
  detail::require(c.feature_dim >= 1, "feature_dim must be >= 1");
  for (int h : c.hidden_dims) detail::require(h >= 1, "hidden dims must be >= 1");
  detail::require(c.cov.epsilon > 0.0 && c.cov.min_corr_eig > 0.0,
                  "epsilon and min_corr_eig must be > 0");
  detail::require(c.prior_floor > 0.0 && c.prior_floor < 1.0, "prior_floor out of (0,1)");
  detail::require(c.eval_every >= 1, "eval_every must be >= 1");
  detail::require(c.threads >= 1, "threads must be >= 1");
  validate_hyper(c.hyper);
}

struct ClientState {
  MlpParams phi;            // extractor the client last trained (or received)
  ClassGaussian gaussian;   // interpolated local statistics
  BetaResult beta{0.5, 0.5, std::numeric_limits<double>::quiet_NaN()};
  MlpGrads velocity;
  LinearHead head;          // local_only baseline
  LinearHead head_velocity;
};

struct FederationState {
  MlpParams phi_g;
  ClassGaussian gaussian_g;
  LinearHead head_g;  // discriminative baselines
  int round = 0;
  std::vector<ClientState> clients;
};

struct RoundReport {
  int round = 0;
  std::vector<int> active;
  double mean_acc = 0.0;
  double std_acc = 0.0;
  double mean_beta = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<int> layer_dims(const FederationConfig& cfg, int input_dim) {
  std::vector<int> dims{input_dim};
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(cfg.feature_dim);
  return dims;
}

/// Random Gaussian extractor, spherical global Gaussian with means
/// N(0, I/d), identity covariance and uniform priors; every client starts
/// from the global values with beta = 0.5.
inline FederationState init_state(const FederationConfig& cfg, int num_clients, int input_dim,
                                  int num_classes) {
  validate(cfg);
  detail::require(num_clients >= 1 && input_dim >= 1 && num_classes >= 1,
                  "init_state: sizes must be positive");
  FederationState s;
  Rng model_rng = make_stream(cfg.seed, StreamTag::model_init);
  s.phi_g = init_mlp(layer_dims(cfg, input_dim), model_rng);
  s.head_g = init_head(num_classes, cfg.feature_dim, model_rng);

  const int d = cfg.feature_dim;
  Rng gauss_rng = make_stream(cfg.seed, StreamTag::gaussian_init);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  s.gaussian_g.means.resize(num_classes, d);
  for (Index c = 0; c < num_classes; ++c) {
    for (Index k = 0; k < d; ++k) {
      s.gaussian_g.means(c, k) = normal(gauss_rng);
    }
  }
  s.gaussian_g.cov = Matrix::Identity(d, d);
  s.gaussian_g.priors = Vector::Constant(num_classes, 1.0 / num_classes);

  ClientState proto;
  proto.phi = s.phi_g;
  proto.gaussian = s.gaussian_g;
  proto.velocity = zeros_like(s.phi_g);
  proto.head = s.head_g;
  proto.head_velocity = zeros_like(s.head_g);
  s.clients.assign(static_cast<std::size_t>(num_clients), proto);
  return s;
}

/// Independent Bernoulli(q) participation, redrawn while empty. The final
/// round uses every client.
inline std::vector<int> sample_active_clients(int num_clients, double q, Rng& rng, int round,
                                              int total_rounds) {
  detail::require(q > 0.0 && q <= 1.0, "q out of (0,1]");
  detail::require(num_clients >= 1, "num_clients must be >= 1");
  std::vector<int> active;
  if (round == total_rounds - 1 || q == 1.0) {
    for (int i = 0; i < num_clients; ++i) active.push_back(i);
    return active;
  }
  std::bernoulli_distribution coin(q);
  while (active.empty()) {
    for (int i = 0; i < num_clients; ++i) {
      if (coin(rng)) active.push_back(i);
    }
  }
  return active;
}

struct ClientUpdate {
  int client = 0;
  std::size_t n = 0;
  std::vector<std::size_t> class_counts;
  MlpParams phi;
  MlpGrads velocity;
  ClassGaussian gaussian;  // pfedfda only
  BetaResult beta;         // pfedfda only
  LinearHead head;         // discriminative baselines
  LinearHead head_velocity;
};

inline std::vector<std::size_t> class_counts(std::span<const int> labels, int num_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

/// One pFedFDA client step: train the extractor against the broadcast
/// generative classifier (global statistics, local priors), estimate local
/// statistics from the logged features, pick beta by k-fold validation and
/// interpolate.
inline ClientUpdate client_update_pfedfda(const MlpParams& phi_g, const ClassGaussian& gaussian_g,
                                          const Dataset& train, const ClientState& state,
                                          const FederationConfig& cfg, int round, int client) {
  detail::require(!train.empty(), "client ", client, " has an empty training shard");
  const int num_classes = static_cast<int>(gaussian_g.num_classes());
  const Vector priors = estimate_priors(train.labels, num_classes);
  const GenerativeClassifier clf =
      build_classifier(ClassGaussian{gaussian_g.means, gaussian_g.cov, priors}, cfg.prior_floor);

  Rng shuffle_rng = make_stream(cfg.seed, StreamTag::shuffle, static_cast<std::uint64_t>(round),
                                static_cast<std::uint64_t>(client));
  LocalTrainResult trained = train_local(phi_g, clf, train, cfg.hyper, shuffle_rng, &state.velocity);

  std::vector<std::size_t> counts;
  ClassGaussian local = estimate_class_gaussian(trained.feature_log, gaussian_g, cfg.cov, &counts);

  BetaResult beta{1.0, 1.0, std::numeric_limits<double>::quiet_NaN()};
  if (cfg.beta_mode != BetaMode::none) {
    if (trained.feature_log.size() < cfg.folds) {
      beta = BetaResult{0.0, 0.0, std::numeric_limits<double>::quiet_NaN()};
    } else {
      Rng fold_rng = make_stream(cfg.seed, StreamTag::kfold, static_cast<std::uint64_t>(round),
                                 static_cast<std::uint64_t>(client));
      const Folds folds = kfold_split(trained.feature_log.labels, cfg.folds, fold_rng);
      const CvProblem problem =
          prepare_cv(trained.feature_log, folds, gaussian_g, priors, cfg.cov, cfg.prior_floor);
      beta = optimize_beta(problem, cfg.beta_mode);
    }
  }

  ClientUpdate out;
  out.client = client;
  out.n = static_cast<std::size_t>(train.size());
  out.class_counts = std::move(counts);
  out.gaussian = interpolate(local, gaussian_g, beta);
  out.beta = beta;
  out.phi = std::move(trained.params);
  out.velocity = std::move(trained.velocity);
  return out;
}

/// FedAvg client step: extractor and softmax head trained jointly.
inline ClientUpdate client_update_fedavg(const MlpParams& phi, const LinearHead& head,
                                         const Dataset& train, const MlpGrads& velocity,
                                         const LinearHead& head_velocity,
                                         const FederationConfig& cfg, int round, int client) {
  detail::require(!train.empty(), "client ", client, " has an empty training shard");
  Rng shuffle_rng = make_stream(cfg.seed, StreamTag::shuffle, static_cast<std::uint64_t>(round),
                                static_cast<std::uint64_t>(client));
  HeadTrainResult r =
      train_with_head(phi, head, train, cfg.hyper, shuffle_rng, &velocity, &head_velocity);
  ClientUpdate out;
  out.client = client;
  out.n = static_cast<std::size_t>(train.size());
  out.class_counts = class_counts(train.labels, static_cast<int>(head.weights.rows()));
  out.phi = std::move(r.params);
  out.velocity = std::move(r.velocity);
  out.head = std::move(r.head);
  out.head_velocity = std::move(r.head_velocity);
  return out;
}

struct Aggregate {
  MlpParams phi;
  ClassGaussian gaussian;
  LinearHead head;
};

/// Sample-count weighted averaging of client results, consumed in ascending
/// client order. Class means use per-class counts as weights (a class nobody
/// observed keeps its previous global mean); the averaged covariance is
/// re-regularized.
inline Aggregate aggregate(std::span<const ClientUpdate> results, const ClassGaussian& previous,
                           const CovOptions& opts, bool with_gaussian, bool with_head) {
  detail::require(!results.empty(), "aggregate: no client results");
  std::vector<const ClientUpdate*> ordered;
  for (const auto& r : results) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const ClientUpdate* a, const ClientUpdate* b) { return a->client < b->client; });

  double total = 0.0;
  for (const auto* r : ordered) total += static_cast<double>(r->n);
  detail::require(total > 0.0, "aggregate: total sample count is zero");

  Aggregate agg;
  agg.phi = zeros_like(ordered.front()->phi);
  if (with_head) agg.head = zeros_like(ordered.front()->head);
  for (const auto* r : ordered) {
    const double w = static_cast<double>(r->n) / total;
    for (std::size_t l = 0; l < agg.phi.num_layers(); ++l) {
      agg.phi.weights[l] += w * r->phi.weights[l];
      agg.phi.biases[l] += w * r->phi.biases[l];
    }
    if (with_head) {
      agg.head.weights += w * r->head.weights;
      agg.head.biases += w * r->head.biases;
    }
  }

  if (with_gaussian) {
    const Index num_classes = previous.num_classes();
    const Index d = previous.dim();
    ClassGaussian g{Matrix::Zero(num_classes, d), Matrix::Zero(d, d), Vector::Zero(num_classes)};
    for (Index c = 0; c < num_classes; ++c) {
      double class_total = 0.0;
      for (const auto* r : ordered) class_total += static_cast<double>(r->class_counts[static_cast<std::size_t>(c)]);
      if (class_total == 0.0) {
        g.means.row(c) = previous.means.row(c);
        continue;
      }
      for (const auto* r : ordered) {
        const double w = static_cast<double>(r->class_counts[static_cast<std::size_t>(c)]) / class_total;
        if (w > 0.0) g.means.row(c) += w * r->gaussian.means.row(c);
      }
    }
    for (const auto* r : ordered) {
      const double w = static_cast<double>(r->n) / total;
      g.cov += w * r->gaussian.cov;
      g.priors += w * r->gaussian.priors;
    }
    g.cov = regularize_covariance(symmetrized(g.cov), opts);
    agg.gaussian = std::move(g);
  }
  return agg;
}

// Runs fn(0..count-1) on up to `threads` workers; each index is processed
// exactly once and results must be written to per-index slots.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Accuracy of each client on its held-out split; clients with an empty test
/// split are reported as nullopt. FedAvg+FT fine-tunes a private copy of the
/// global model for E epochs before testing.
inline std::vector<std::optional<double>> evaluate_clients(const FederationState& state,
                                                           std::span<const ClientShard> shards,
                                                           const FederationConfig& cfg) {
  detail::require(shards.size() == state.clients.size(), "evaluate_clients: shard count mismatch");
  std::vector<std::optional<double>> acc(shards.size());
  parallel_for(shards.size(), cfg.threads, [&](std::size_t i) {
    const ClientShard& shard = shards[i];
    const ClientState& client = state.clients[i];
    if (shard.test.empty()) return;
    std::vector<int> predicted;
    switch (cfg.algorithm) {
      case AlgorithmKind::pfedfda: {
        const GenerativeClassifier clf = build_classifier(client.gaussian, cfg.prior_floor);
        predicted = predict_rows(clf.weights, clf.biases, extract_features(client.phi, shard.test.inputs));
        break;
      }
      case AlgorithmKind::fedavg:
        predicted = predict_rows(state.head_g.weights, state.head_g.biases,
                                 extract_features(state.phi_g, shard.test.inputs));
        break;
      case AlgorithmKind::fedavg_ft: {
        MlpParams phi = state.phi_g;
        LinearHead head = state.head_g;
        if (!shard.train.empty()) {
          Rng rng = make_stream(cfg.seed, StreamTag::fine_tune, static_cast<std::uint64_t>(state.round),
                                static_cast<std::uint64_t>(i));
          HeadTrainResult tuned = train_with_head(phi, head, shard.train, cfg.hyper, rng);
          phi = std::move(tuned.params);
          head = std::move(tuned.head);
        }
        predicted = predict_rows(head.weights, head.biases, extract_features(phi, shard.test.inputs));
        break;
      }
      case AlgorithmKind::local_only:
        predicted = predict_rows(client.head.weights, client.head.biases,
                                 extract_features(client.phi, shard.test.inputs));
        break;
    }
    std::size_t correct = 0;
    for (std::size_t j = 0; j < predicted.size(); ++j) {
      if (predicted[j] == shard.test.labels[j]) ++correct;
    }
    acc[i] = static_cast<double>(correct) / static_cast<double>(predicted.size());
  });
  return acc;
}

struct AccuracySummary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  std::size_t evaluated = 0;
};

inline AccuracySummary summarize(std::span<const std::optional<double>> acc) {
  AccuracySummary s;
  for (const auto& a : acc) {
    if (a) {
      s.mean += *a;
      ++s.evaluated;
    }
  }
  if (s.evaluated == 0) return s;
  s.mean /= static_cast<double>(s.evaluated);
  double ss = 0.0;
  for (const auto& a : acc) {
    if (a) ss += (*a - s.mean) * (*a - s.mean);
  }
  s.stddev = std::sqrt(ss / static_cast<double>(s.evaluated));
  return s;
}

struct ClientRow {
  int client_id = 0;
  std::size_t n_train = 0;
  std::optional<CorruptionSpec> corruption;
  double beta = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> test_acc;
};

struct FederationResult {
  std::vector<RoundReport> reports;
  std::vector<ClientRow> clients;
  FederationState state;
};

/// Runs one client's update for the configured algorithm and stores it.
inline ClientUpdate run_client(const FederationState& state, const ClientShard& shard,
                               const FederationConfig& cfg, int round, int client) {
  const ClientState& cs = state.clients[static_cast<std::size_t>(client)];
  switch (cfg.algorithm) {
    case AlgorithmKind::pfedfda:
      return client_update_pfedfda(state.phi_g, state.gaussian_g, shard.train, cs, cfg, round, client);
    case AlgorithmKind::fedavg:
    case AlgorithmKind::fedavg_ft:
      return client_update_fedavg(state.phi_g, state.head_g, shard.train, cs.velocity,
                                  cs.head_velocity, cfg, round, client);
    case AlgorithmKind::local_only:
      return client_update_fedavg(cs.phi, cs.head, shard.train, cs.velocity, cs.head_velocity,
                                  cfg, round, client);
  }
  detail::fail("unknown algorithm");
}

inline std::vector<ClientRow> client_table(const FederationState& state,
                                           std::span<const ClientShard> shards,
                                           std::span<const std::optional<double>> acc,
                                           const FederationConfig& cfg) {
  std::vector<ClientRow> rows;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    ClientRow row;
    row.client_id = static_cast<int>(i);
    row.n_train = shards[i].n_train();
    row.corruption = shards[i].corruption;
    if (cfg.algorithm == AlgorithmKind::pfedfda) row.beta = state.clients[i].beta.beta_mu;
    row.test_acc = acc[i];
    rows.push_back(row);
  }
  return rows;
}

/// The full round loop. Deterministic for a given seed regardless of the
/// worker count: every random draw comes from a (seed, purpose, round,
/// client) stream and results are reduced in client order.
inline FederationResult run_federation(const FederationConfig& cfg,
                                       std::span<const ClientShard> shards) {
  validate(cfg);
  detail::require(!shards.empty(), "run_federation: no clients");
  int num_classes = 0;
  for (const auto& s : shards) {
    num_classes = std::max({num_classes, count_classes(s.train.labels), count_classes(s.test.labels)});
    detail::require(!s.train.empty(), "run_federation: client with empty training split");
  }
  const int input_dim = static_cast<int>(shards.front().train.dim());
  const int num_clients = static_cast<int>(shards.size());

  FederationResult result;
  FederationState& state = result.state;
  state = init_state(cfg, num_clients, input_dim, num_classes);

  for (int r = 0; r < cfg.rounds; ++r) {
    state.round = r;
    Rng part_rng = make_stream(cfg.seed, StreamTag::participation, static_cast<std::uint64_t>(r));
    const std::vector<int> active = sample_active_clients(num_clients, cfg.q, part_rng, r, cfg.rounds);

    std::vector<ClientUpdate> updates(active.size());
    parallel_for(active.size(), cfg.threads, [&](std::size_t k) {
      updates[k] = run_client(state, shards[static_cast<std::size_t>(active[k])], cfg, r, active[k]);
    });

    if (cfg.algorithm != AlgorithmKind::local_only) {
      const bool gaussian = cfg.algorithm == AlgorithmKind::pfedfda;
      Aggregate agg = aggregate(updates, state.gaussian_g, cfg.cov, gaussian, !gaussian);
      state.phi_g = std::move(agg.phi);
      if (gaussian) {
        state.gaussian_g = std::move(agg.gaussian);
      } else {
        state.head_g = std::move(agg.head);
      }
    }

    double beta_sum = 0.0;
    for (auto& u : updates) {
      ClientState& cs = state.clients[static_cast<std::size_t>(u.client)];
      cs.phi = std::move(u.phi);
      cs.velocity = std::move(u.velocity);
      if (cfg.algorithm == AlgorithmKind::pfedfda) {
        cs.gaussian = std::move(u.gaussian);
        cs.beta = u.beta;
        beta_sum += u.beta.beta_mu;
      } else {
        cs.head = std::move(u.head);
        cs.head_velocity = std::move(u.head_velocity);
      }
    }

    const bool last = r + 1 == cfg.rounds;
    if ((r + 1) % cfg.eval_every == 0 || last) {
      const auto acc = evaluate_clients(state, shards, cfg);
      const AccuracySummary summary = summarize(acc);
      RoundReport report;
      report.round = r;
      report.active = active;
      report.mean_acc = summary.mean;
      report.std_acc = summary.stddev;
      if (cfg.algorithm == AlgorithmKind::pfedfda) {
        report.mean_beta = beta_sum / static_cast<double>(updates.size());
      }
      result.reports.push_back(std::move(report));
      if (last) {
        result.clients = client_table(state, shards, acc, cfg);
      }
    }
  }
  if (cfg.rounds == 0) {
    const auto acc = evaluate_clients(state, shards, cfg);
    result.clients = client_table(state, shards, acc, cfg);
  }
  return result;
}

struct CommOverhead {
  long long linear_params = 0;
  long long gaussian_params = 0;
  double overhead_fraction = 0.0;
};

/// Parameters of a linear head versus the Gaussian statistics (means plus the
/// upper triangle of the covariance), relative to backbone plus linear head.
inline CommOverhead compute_comm_overhead(long long num_classes, long long dim,
                                          long long backbone_params) {
  detail::require(num_classes >= 1 && dim >= 1 && backbone_params >= 0,
                  "compute_comm_overhead: sizes must be positive");
  CommOverhead o;
  o.linear_params = num_classes * (dim + 1);
  o.gaussian_params = num_classes * dim + (dim * dim + dim) / 2;
  o.overhead_fraction = static_cast<double>(o.gaussian_params - o.linear_params) /
                        static_cast<double>(backbone_params + o.linear_params);
  return o;
}

}  // namespace fedfda
