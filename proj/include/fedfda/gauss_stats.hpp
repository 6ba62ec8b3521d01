#pragma once

// Estimation and repair of class-conditional Gaussian statistics with a tied
// covariance, computed from labeled feature batches.

#include "fedfda/common.hpp"
#include "fedfda/linalg.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace fedfda {

struct LabeledFeatures {
  Matrix features;          // n x d, one sample per row
  std::vector<int> labels;  // length n, class ids in [0, C)

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
};

struct ClassGaussian {
  Matrix means;   // C x d
  Matrix cov;     // d x d, shared by every class
  Vector priors;  // length C simplex

  Index num_classes() const { return means.rows(); }
  Index dim() const { return means.cols(); }
};

struct CovOptions {
  double epsilon = 1e-4;       // diagonal loading
  double min_corr_eig = 1e-6;  // eigenvalue floor in correlation space
};

struct ClassMeans {
  Matrix means;                      // C x d; rows of empty classes are zero
  std::vector<std::size_t> counts;   // per-class sample counts
};

namespace detail {

inline void check_labels(std::span<const int> labels, int num_classes) {
  require(num_classes >= 1, "num_classes must be >= 1");
  for (std::size_t j = 0; j < labels.size(); ++j) {
    require(labels[j] >= 0 && labels[j] < num_classes, "label ", labels[j],
            " at row ", j, " out of range [0, ", num_classes, ")");
  }
}

inline void check_batch(const LabeledFeatures& batch) {
  require(static_cast<std::size_t>(batch.features.rows()) == batch.labels.size(),
          "feature rows (", batch.features.rows(), ") != label count (",
          batch.labels.size(), ")");
}

}  // namespace detail

/// Per-class maximum likelihood means. Classes without samples get a zero row
/// and count 0.
inline ClassMeans estimate_class_means(const LabeledFeatures& batch, int num_classes) {
  detail::check_batch(batch);
  detail::require(batch.size() >= 1, "no samples");
  detail::check_labels(batch.labels, num_classes);

  const Index d = batch.dim();
  ClassMeans out{Matrix::Zero(num_classes, d),
                 std::vector<std::size_t>(static_cast<std::size_t>(num_classes), 0)};
  for (Index j = 0; j < batch.size(); ++j) {
    const int c = batch.labels[static_cast<std::size_t>(j)];
    out.means.row(c) += batch.features.row(j);
    ++out.counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < num_classes; ++c) {
    const auto n_c = out.counts[static_cast<std::size_t>(c)];
    if (n_c > 0) {
      out.means.row(c) /= static_cast<double>(n_c);
    }
  }
  return out;
}

/// Subtracts from every row the mean of its class.
inline Matrix center_features(const LabeledFeatures& batch, const Matrix& means) {
  detail::check_batch(batch);
  detail::require(means.cols() == batch.dim(), "center_features: means have ",
                  means.cols(), " columns, features have ", batch.dim());
  detail::check_labels(batch.labels, static_cast<int>(means.rows()));
  Matrix centered = batch.features;
  for (Index j = 0; j < centered.rows(); ++j) {
    centered.row(j) -= means.row(batch.labels[static_cast<std::size_t>(j)]);
  }
  return centered;
}

/// Unbiased tied covariance Z^T Z / (n - 1) of class-centered features.
/// Accumulates in ascending sample order so results are reproducible.
inline Matrix estimate_shared_covariance(const Matrix& centered) {
  const Index n = centered.rows();
  const Index d = centered.cols();
  detail::require(n >= 2, "insufficient samples: covariance needs n >= 2, got ", n);
  Matrix cov = Matrix::Zero(d, d);
  for (Index j = 0; j < n; ++j) {
    for (Index a = 0; a < d; ++a) {
      const double za = centered(j, a);
      for (Index b = a; b < d; ++b) {
        cov(a, b) += za * centered(j, b);
      }
    }
  }
  cov /= static_cast<double>(n - 1);
  for (Index a = 0; a < d; ++a) {
    for (Index b = 0; b < a; ++b) {
      cov(a, b) = cov(b, a);
    }
  }
  return cov;
}

/// Diagonal loading followed, when needed, by the nearest positive definite
/// matrix with the same variances: eigenvalues of the correlation matrix are
/// clipped at `min_corr_eig`, the correlation diagonal is renormalized to one
/// and the original standard deviations are restored.
inline Matrix regularize_covariance(const Matrix& cov, const CovOptions& opts = {}) {
  detail::require(cov.rows() == cov.cols(), "covariance must be square");
  detail::require(opts.epsilon > 0.0 && opts.min_corr_eig > 0.0,
                  "covariance options must be strictly positive");
  detail::require(cov.allFinite(), "covariance has non-finite entries");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  detail::require(asymmetry(cov) <= 1e-8 * scale, "covariance is not symmetric");

  const Index d = cov.rows();
  Matrix loaded = symmetrized(cov);
  loaded.diagonal().array() += opts.epsilon;

  Vector stddev(d);
  for (Index a = 0; a < d; ++a) {
    const double var = loaded(a, a);
    stddev(a) = var > 0.0 ? std::sqrt(var) : std::sqrt(opts.epsilon);
  }
  const Vector inv_std = stddev.cwiseInverse();
  const Matrix corr = inv_std.asDiagonal() * loaded * inv_std.asDiagonal();

  SymmetricEigen eig = jacobi_eigen(corr);
  if (eig.values(0) >= opts.min_corr_eig) {
    return loaded;
  }

  const Vector clipped = eig.values.cwiseMax(opts.min_corr_eig);
  Matrix repaired = eig.vectors * clipped.asDiagonal() * eig.vectors.transpose();
  const Vector renorm = repaired.diagonal().cwiseSqrt().cwiseInverse();
  repaired = renorm.asDiagonal() * repaired * renorm.asDiagonal();
  Matrix out = stddev.asDiagonal() * repaired * stddev.asDiagonal();
  return symmetrized(out);
}

/// Class priors from label counts.
inline Vector estimate_priors(std::span<const int> labels, int num_classes) {
  detail::require(!labels.empty(), "no samples");
  detail::check_labels(labels, num_classes);
  Vector counts = Vector::Zero(num_classes);
  for (int y : labels) {
    counts(y) += 1.0;
  }
  return counts / static_cast<double>(labels.size());
}

/// Full local estimate: means, regularized tied covariance and priors.
///
/// Classes absent from the batch take the corresponding row of
/// `fallback.means`; fewer than two samples fall back to `fallback.cov`.
inline ClassGaussian estimate_class_gaussian(const LabeledFeatures& batch,
                                             const ClassGaussian& fallback,
                                             const CovOptions& opts,
                                             std::vector<std::size_t>* counts_out = nullptr) {
  const int num_classes = static_cast<int>(fallback.num_classes());
  ClassMeans m = estimate_class_means(batch, num_classes);
  ClassGaussian g;
  g.cov = batch.size() >= 2
              ? regularize_covariance(estimate_shared_covariance(center_features(batch, m.means)), opts)
              : fallback.cov;
  g.means = std::move(m.means);
  for (int c = 0; c < num_classes; ++c) {
    if (m.counts[static_cast<std::size_t>(c)] == 0) {
      g.means.row(c) = fallback.means.row(c);
    }
  }
  g.priors = estimate_priors(batch.labels, num_classes);
  if (counts_out != nullptr) {
    *counts_out = std::move(m.counts);
  }
  return g;
}

}  // namespace fedfda
