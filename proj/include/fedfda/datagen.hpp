#pragma once

// Synthetic heterogeneous federated datasets: Gaussian blobs lifted through a
// random nonlinear map, Dirichlet label skew, per-client covariate shift,
// 80/20 splitting and training-set subsampling. Also CSV ingestion.

#include "fedfda/common.hpp"
#include "fedfda/dataset.hpp"
#include "fedfda/rng.hpp"

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace fedfda {

enum class LiftKind { tanh_affine, identity };

struct SyntheticTaskSpec {
  int num_classes = 5;
  int input_dim = 32;
  int latent_dim = 16;
  int samples_per_class = 800;
  double separation = 0.5;  // class centers ~ N(0, separation^2 I) in latent space
  std::uint64_t lift_seed = 7;
  LiftKind lift = LiftKind::tanh_affine;
};

inline void validate(const SyntheticTaskSpec& s) {
  detail::require(s.num_classes >= 1 && s.input_dim >= 1 && s.latent_dim >= 1 &&
                      s.samples_per_class >= 1,
                  "synthetic task sizes must be positive");
  detail::require(s.separation >= 0.0 && std::isfinite(s.separation),
                  "separation must be finite and >= 0");
  if (s.lift == LiftKind::identity) {
    detail::require(s.input_dim >= s.latent_dim, "identity lift needs input_dim >= latent_dim");
  }
}

// The fixed parts of a task: class centers and the lifting map.
struct SyntheticTask {
  Matrix centers;      // C x latent
  Matrix lift_matrix;  // input x latent
  Vector lift_bias;    // input
  LiftKind lift = LiftKind::tanh_affine;
};

inline SyntheticTask make_task(const SyntheticTaskSpec& spec) {
  validate(spec);
  Rng rng = make_stream(spec.lift_seed, StreamTag::lift);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticTask task;
  task.lift = spec.lift;
  task.centers.resize(spec.num_classes, spec.latent_dim);
  for (Index c = 0; c < task.centers.rows(); ++c) {
    for (Index k = 0; k < task.centers.cols(); ++k) {
      task.centers(c, k) = spec.separation * normal(rng);
    }
  }
  task.lift_matrix = Matrix::Zero(spec.input_dim, spec.latent_dim);
  task.lift_bias = Vector::Zero(spec.input_dim);
  if (spec.lift == LiftKind::identity) {
    task.lift_matrix.topRows(spec.latent_dim).setIdentity();
  } else {
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (Index r = 0; r < task.lift_matrix.rows(); ++r) {
      for (Index k = 0; k < task.lift_matrix.cols(); ++k) {
        task.lift_matrix(r, k) = scale * normal(rng);
      }
      task.lift_bias(r) = 0.5 * normal(rng);
    }
  }
  return task;
}

inline Matrix lift_points(const SyntheticTask& task, const Matrix& latent) {
  Matrix x = latent * task.lift_matrix.transpose();
  x.rowwise() += task.lift_bias.transpose();
  if (task.lift == LiftKind::tanh_affine) {
    x = x.array().tanh();
  }
  return x;
}

/// Class-balanced draw: `samples_per_class` unit-variance latent points around
/// each center, lifted to the input space. Rows are grouped by class.
inline Dataset generate_base_dataset(const SyntheticTaskSpec& spec, Rng& rng) {
  const SyntheticTask task = make_task(spec);
  const Index n = static_cast<Index>(spec.num_classes) * spec.samples_per_class;
  Matrix latent(n, spec.latent_dim);
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, 1.0);
  Index row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
      for (Index k = 0; k < latent.cols(); ++k) {
        latent(row, k) = task.centers(c, k) + normal(rng);
      }
      labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return Dataset{lift_points(task, latent), std::move(labels)};
}

/// Integer allocation of `total` items proportional to `weights` with the
/// largest-remainder rule; remainder ties go to the lower index.
inline std::vector<std::size_t> largest_remainder(std::span<const double> weights,
                                                  std::size_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  detail::require(!weights.empty() && sum > 0.0, "largest_remainder: weights must sum > 0");
  std::vector<std::size_t> counts(weights.size());
  std::vector<double> frac(weights.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = static_cast<double>(total) * weights[k] / sum;
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    frac[k] = exact - std::floor(exact);
    assigned += counts[k];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&frac](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t r = 0; assigned < total; r = (r + 1) % order.size()) {
    ++counts[order[r]];
    ++assigned;
  }
  return counts;
}

using Partition = std::vector<std::vector<std::size_t>>;

/// Label-skewed partition: for every class, client proportions are drawn from
/// Dir(alpha * 1_M) and that class's (shuffled) indices are dealt out in
/// contiguous blocks sized by largest-remainder rounding.
inline Partition dirichlet_partition(std::span<const int> labels, int num_clients,
                                     double alpha, Rng& rng) {
  detail::require(alpha > 0.0 && std::isfinite(alpha), "alpha must be > 0");
  detail::require(num_clients >= 1, "num_clients must be >= 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    by_class[labels[j]].push_back(j);
  }
  Partition parts(static_cast<std::size_t>(num_clients));
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::uniform_int_distribution<int> pick(0, num_clients - 1);
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> share(static_cast<std::size_t>(num_clients));
    double total = 0.0;
    for (double& s : share) {
      s = gamma(rng);
      total += s;
    }
    if (!(total > 0.0)) {
      // Every gamma draw underflowed (tiny alpha): the whole class goes to one client.
      std::fill(share.begin(), share.end(), 0.0);
      share[static_cast<std::size_t>(pick(rng))] = 1.0;
    }
    const auto counts = largest_remainder(share, idx.size());
    std::size_t pos = 0;
    for (std::size_t m = 0; m < counts.size(); ++m) {
      for (std::size_t k = 0; k < counts[m]; ++k) {
        parts[m].push_back(idx[pos++]);
      }
    }
  }
  for (auto& p : parts) {
    std::sort(p.begin(), p.end());
  }
  return parts;
}

enum class CorruptionKind { rotate, scale, additive_noise, feature_dropout, translate };

inline constexpr std::array<CorruptionKind, 5> kAllCorruptions{
    CorruptionKind::rotate, CorruptionKind::scale, CorruptionKind::additive_noise,
    CorruptionKind::feature_dropout, CorruptionKind::translate};

inline std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::rotate: return "rotate";
    case CorruptionKind::scale: return "scale";
    case CorruptionKind::additive_noise: return "additive_noise";
    case CorruptionKind::feature_dropout: return "feature_dropout";
    case CorruptionKind::translate: return "translate";
  }
  return "?";
}

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::rotate;
  int severity = 1;  // 1..5
};

// Distortion magnitudes at severity 5; lower severities scale linearly.
inline constexpr double kMaxRotation = std::numbers::pi / 4.0;
inline constexpr double kMaxScaleGain = 1.0;  // factor 1 + gain
inline constexpr double kMaxNoiseStd = 1.0;
inline constexpr double kMaxDropout = 0.5;
inline constexpr double kMaxTranslation = 1.0;

/// Rotates every consecutive coordinate pair (0,1), (2,3), ... by `angle`.
/// An odd trailing coordinate is left alone.
inline Matrix rotate_pairs(const Matrix& x, double angle) {
  Matrix out = x;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (Index k = 0; k + 1 < x.cols(); k += 2) {
    out.col(k) = c * x.col(k) - s * x.col(k + 1);
    out.col(k + 1) = s * x.col(k) + c * x.col(k + 1);
  }
  return out;
}

inline Matrix apply_covariate_shift(const Matrix& x, const CorruptionSpec& spec, Rng& rng) {
  detail::require(spec.severity >= 1 && spec.severity <= 5, "corruption severity ",
                  spec.severity, " out of [1,5]");
  const double level = spec.severity / 5.0;
  switch (spec.kind) {
    case CorruptionKind::rotate:
      return rotate_pairs(x, level * kMaxRotation);
    case CorruptionKind::scale:
      return x * (1.0 + level * kMaxScaleGain);
    case CorruptionKind::additive_noise: {
      std::normal_distribution<double> noise(0.0, level * kMaxNoiseStd);
      Matrix out = x;
      for (Index r = 0; r < out.rows(); ++r) {
        for (Index c = 0; c < out.cols(); ++c) {
          out(r, c) += noise(rng);
        }
      }
      return out;
    }
    case CorruptionKind::feature_dropout: {
      std::bernoulli_distribution drop(level * kMaxDropout);
      Matrix out = x;
      for (Index r = 0; r < out.rows(); ++r) {
        for (Index c = 0; c < out.cols(); ++c) {
          if (drop(rng)) out(r, c) = 0.0;
        }
      }
      return out;
    }
    case CorruptionKind::translate: {
      std::bernoulli_distribution coin(0.5);
      Vector offset(x.cols());
      for (Index c = 0; c < offset.size(); ++c) {
        offset(c) = (coin(rng) ? 1.0 : -1.0) * level * kMaxTranslation;
      }
      Matrix out = x;
      out.rowwise() += offset.transpose();
      return out;
    }
  }
  detail::fail("unknown corruption kind");
}

struct ClientShard {
  Dataset train;
  Dataset test;
  std::optional<CorruptionSpec> corruption;

  std::size_t n_train() const { return static_cast<std::size_t>(train.size()); }
};

/// Keeps ceil(fraction * n) training samples (at least one), chosen uniformly
/// without replacement; retained rows keep their original order.
inline ClientShard subsample(const ClientShard& shard, double fraction, Rng& rng) {
  detail::require(fraction > 0.0 && fraction <= 1.0, "subsample fraction out of (0,1]");
  const auto n = static_cast<std::size_t>(shard.train.size());
  if (fraction == 1.0 || n == 0) {
    return shard;
  }
  const auto keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)), 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  ClientShard out = shard;
  out.train = subset(shard.train, idx);
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified 80/20 split of local positions 0..n-1. The training side gets
/// ceil(0.8 n) samples, capped at n - 1 so the test side is never empty;
/// per-class quotas follow largest-remainder rounding.
inline SplitIndices train_test_split(std::span<const int> labels, Rng& rng) {
  const std::size_t n = labels.size();
  detail::require(n >= 2, "train_test_split: need at least 2 samples, got ", n);
  const auto n_train = std::min(
      n - 1, static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(n) - 1e-9)));

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t j = 0; j < n; ++j) {
    by_class[labels[j]].push_back(j);
  }
  std::vector<double> sizes;
  for (const auto& [label, idx] : by_class) {
    sizes.push_back(static_cast<double>(idx.size()));
  }
  const auto quotas = largest_remainder(sizes, n_train);

  SplitIndices out;
  std::size_t k = 0;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      (j < quotas[k] ? out.train : out.test).push_back(idx[j]);
    }
    ++k;
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// CSV datasets: header `f0,...,f{m-1},label`, one sample per line.

inline Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  detail::require(in.good(), "cannot open dataset file '", path, "'");

  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };

  std::string line;
  detail::require(static_cast<bool>(std::getline(in, line)), path, ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  detail::require(header.size() >= 2 && header.back() == "label",
                  path, ":1: header must be f0,...,f{m-1},label");
  const std::size_t m = header.size() - 1;
  for (std::size_t k = 0; k < m; ++k) {
    detail::require(header[k] == "f" + std::to_string(k), path, ":1: expected column 'f", k,
                    "', found '", header[k], "'");
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    detail::require(cells.size() == m + 1, path, ":", line_no, ": expected ", m + 1,
                    " fields, found ", cells.size());
    for (std::size_t k = 0; k < m; ++k) {
      const char* begin = cells[k].c_str();
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(begin, &end);
      detail::require(end != begin && *end == '\0' && errno != ERANGE, path, ":", line_no,
                      ": malformed number '", cells[k], "'");
      detail::require(std::isfinite(v), path, ":", line_no, ": non-finite value '", cells[k],
                      "'");
      values.push_back(v);
    }
    const char* begin = cells[m].c_str();
    char* end = nullptr;
    errno = 0;
    const long y = std::strtol(begin, &end, 10);
    detail::require(end != begin && *end == '\0' && errno == 0 && y >= 0 && y <= 1'000'000,
                    path, ":", line_no, ": malformed label '", cells[m], "'");
    labels.push_back(static_cast<int>(y));
  }
  detail::require(!labels.empty(), path, ": no data rows");
  Dataset data{Matrix(static_cast<Index>(labels.size()), static_cast<Index>(m)),
               std::move(labels)};
  for (Index r = 0; r < data.inputs.rows(); ++r) {
    for (Index c = 0; c < data.inputs.cols(); ++c) {
      data.inputs(r, c) = values[static_cast<std::size_t>(r) * m + static_cast<std::size_t>(c)];
    }
  }
  return data;
}

// Writes with 17 significant digits so that reading back is exact.
inline void write_csv_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  detail::require(out.good(), "cannot write dataset file '", path, "'");
  for (Index k = 0; k < data.dim(); ++k) {
    out << 'f' << k << ',';
  }
  out << "label\n";
  char buf[64];
  for (Index r = 0; r < data.size(); ++r) {
    for (Index c = 0; c < data.dim(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", data.inputs(r, c));
      out << buf << ',';
    }
    out << data.labels[static_cast<std::size_t>(r)] << '\n';
  }
  detail::require(out.good(), "failed writing '", path, "'");
}

inline int count_classes(std::span<const int> labels) {
  int top = -1;
  for (int y : labels) top = std::max(top, y);
  return top + 1;
}

// ---------------------------------------------------------------------------
// Federated benchmark assembly.

struct BenchmarkSpec {
  int num_clients = 20;
  double alpha = 0.5;
  bool shift = true;            // first floor(M/2) clients get a covariate shift
  double scarcity = 1.0;        // training fraction kept per client
  int min_client_samples = 10;  // partitions are redrawn until every client has this many
};

/// Corruption assigned to client `i` when shifted: kinds cycle fastest and
/// severities follow a Latin-square pattern, so the first 25 shifted clients
/// get distinct (kind, severity) pairs.
inline CorruptionSpec corruption_for_client(int i) {
  const int kind = i % 5;
  const int severity = ((i % 5) + (i / 5)) % 5 + 1;
  return CorruptionSpec{kAllCorruptions[static_cast<std::size_t>(kind)], severity};
}

inline Partition draw_partition(std::span<const int> labels, const BenchmarkSpec& spec,
                                std::uint64_t seed) {
  detail::require(static_cast<std::size_t>(spec.num_clients) * 2 <= labels.size(),
                  "dataset too small for ", spec.num_clients, " clients");
  const int min_samples = std::max(2, spec.min_client_samples);
  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Rng rng = make_stream(seed, StreamTag::partition, attempt);
    Partition p = dirichlet_partition(labels, spec.num_clients, spec.alpha, rng);
    const bool ok = std::all_of(p.begin(), p.end(), [min_samples](const auto& idx) {
      return idx.size() >= static_cast<std::size_t>(min_samples);
    });
    if (ok) return p;
  }
  detail::fail("could not draw a partition giving every client >= ", min_samples,
               " samples; lower min_client_samples or raise alpha");
}

/// Partition, shift, split and subsample a pooled dataset into client shards.
inline std::vector<ClientShard> build_federated_shards(const Dataset& pool,
                                                       const BenchmarkSpec& spec,
                                                       std::uint64_t seed) {
  detail::require(spec.scarcity > 0.0 && spec.scarcity <= 1.0, "scarcity out of (0,1]");
  const Partition parts = draw_partition(pool.labels, spec, seed);
  const int shifted = spec.shift ? spec.num_clients / 2 : 0;
  std::vector<ClientShard> shards;
  shards.reserve(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Dataset local = subset(pool, parts[i]);
    ClientShard shard;
    if (static_cast<int>(i) < shifted) {
      shard.corruption = corruption_for_client(static_cast<int>(i));
      Rng rng = make_stream(seed, StreamTag::corruption, 0, i);
      local.inputs = apply_covariate_shift(local.inputs, *shard.corruption, rng);
    }
    Rng split_rng = make_stream(seed, StreamTag::split, 0, i);
    const SplitIndices split = train_test_split(local.labels, split_rng);
    shard.train = subset(local, split.train);
    shard.test = subset(local, split.test);
    Rng sub_rng = make_stream(seed, StreamTag::subsample, 0, i);
    shards.push_back(subsample(shard, spec.scarcity, sub_rng));
  }
  return shards;
}

}  // namespace fedfda
