#pragma once

// Bayes classifier of a class-conditional Gaussian with tied covariance.
// Scores are linear in the feature vector:
//   s_c(z) = z . w_c + b_c,  w_c = Sigma^{-1} mu_c,
//   b_c = -1/2 mu_c . w_c + log(pi_c)

#include "fedfda/common.hpp"
#include "fedfda/gauss_stats.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace fedfda {

struct GenerativeClassifier {
  Matrix weights;  // C x d
  Vector biases;   // C

  Index num_classes() const { return weights.rows(); }
  Index dim() const { return weights.cols(); }
};

inline constexpr double kDefaultPriorFloor = 1e-8;

namespace detail {

inline Eigen::LLT<Matrix> factor_pd(const Matrix& cov) {
  require(cov.rows() == cov.cols(), "covariance must be square");
  Eigen::LLT<Matrix> llt(cov);
  require(llt.info() == Eigen::Success && cov.allFinite(),
          "covariance is not positive definite: call regularize_covariance first");
  return llt;
}

// Cholesky solve plus one step of iterative refinement.
inline Vector refined_solve(const Eigen::LLT<Matrix>& llt, const Matrix& cov,
                            const Vector& rhs) {
  Vector w = llt.solve(rhs);
  const Vector residual = rhs - cov * w;
  w += llt.solve(residual);
  return w;
}

}  // namespace detail

/// Solves Sigma w = mu for positive definite Sigma.
inline Vector solve_sigma_inv_mu(const Matrix& cov, const Vector& mu) {
  detail::require(mu.size() == cov.rows(), "solve_sigma_inv_mu: dimension mismatch");
  const auto llt = detail::factor_pd(cov);
  return detail::refined_solve(llt, cov, mu);
}

inline GenerativeClassifier build_classifier(const ClassGaussian& g,
                                             double prior_floor = kDefaultPriorFloor) {
  detail::require(g.cov.rows() == g.dim() && g.cov.cols() == g.dim(),
                  "build_classifier: covariance shape does not match means");
  detail::require(g.priors.size() == g.num_classes(),
                  "build_classifier: priors length does not match class count");
  const auto llt = detail::factor_pd(g.cov);
  GenerativeClassifier clf{Matrix(g.num_classes(), g.dim()), Vector(g.num_classes())};
  for (Index c = 0; c < g.num_classes(); ++c) {
    const Vector mu = g.means.row(c).transpose();
    const Vector w = detail::refined_solve(llt, g.cov, mu);
    clf.weights.row(c) = w.transpose();
    clf.biases(c) = -0.5 * mu.dot(w) + std::log(std::max(g.priors(c), prior_floor));
  }
  return clf;
}

// Raw scores W z + b for every row of a batch (n x C).
inline Matrix scores(const Matrix& weights, const Vector& biases, const Matrix& z) {
  detail::require(z.cols() == weights.cols(), "scores: feature dimension mismatch");
  Matrix s = z * weights.transpose();
  s.rowwise() += biases.transpose();
  return s;
}

inline Vector log_softmax(const Vector& s) {
  const double peak = s.maxCoeff();
  const double lse = peak + std::log((s.array() - peak).exp().sum());
  return s.array() - lse;
}

// Row-wise log-softmax.
inline Matrix log_softmax_rows(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Index j = 0; j < s.rows(); ++j) {
    out.row(j) = log_softmax(s.row(j).transpose()).transpose();
  }
  return out;
}

inline Vector log_posterior(const GenerativeClassifier& clf, const Vector& z) {
  detail::require(z.size() == clf.dim(), "log_posterior: feature dimension mismatch");
  return log_softmax(clf.weights * z + clf.biases);
}

inline double nll_loss(const GenerativeClassifier& clf, const Vector& z, int y) {
  detail::require(y >= 0 && y < clf.num_classes(), "nll_loss: label out of range");
  return std::max(0.0, -log_posterior(clf, z)(y));
}

// Mean negative log-likelihood over a batch.
inline double mean_nll(const Matrix& weights, const Vector& biases, const Matrix& z,
                       std::span<const int> labels) {
  detail::require(static_cast<std::size_t>(z.rows()) == labels.size(),
                  "mean_nll: row/label mismatch");
  if (labels.empty()) {
    return 0.0;
  }
  const Matrix logp = log_softmax_rows(scores(weights, biases, z));
  double total = 0.0;
  for (Index j = 0; j < z.rows(); ++j) {
    total -= logp(j, labels[static_cast<std::size_t>(j)]);
  }
  return total / static_cast<double>(z.rows());
}

// First index of the maximum; ties go to the lowest class id.
inline int argmax_lowest(const Eigen::Ref<const Vector>& s) {
  Index best = 0;
  for (Index c = 1; c < s.size(); ++c) {
    if (s(c) > s(best)) {
      best = c;
    }
  }
  return static_cast<int>(best);
}

inline int predict(const GenerativeClassifier& clf, const Vector& z) {
  detail::require(z.size() == clf.dim(), "predict: feature dimension mismatch");
  return argmax_lowest(clf.weights * z + clf.biases);
}

inline std::vector<int> predict_rows(const Matrix& weights, const Vector& biases,
                                     const Matrix& z) {
  const Matrix s = scores(weights, biases, z);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Index j = 0; j < z.rows(); ++j) {
    out[static_cast<std::size_t>(j)] = argmax_lowest(s.row(j).transpose());
  }
  return out;
}

}  // namespace fedfda
