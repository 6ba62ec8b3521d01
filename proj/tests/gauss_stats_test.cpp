#include "fedfda/gauss_stats.hpp"
#include "fedfda/linalg.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace fedfda {
namespace {

using testing::oracle_min_eig;
using testing::random_matrix;
using testing::random_psd_rank;
using testing::random_spd;

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Index>(values.size()), static_cast<Index>(values.begin()->size()));
  Index r = 0;
  for (const auto& row : values) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

TEST(JacobiEigen, MatchesSelfAdjointSolver) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = 1 + trial % 12;
    const Matrix a = random_psd_rank(rng, d, d) - Matrix::Identity(d, d);
    const SymmetricEigen eig = jacobi_eigen(a);
    Eigen::SelfAdjointEigenSolver<Matrix> oracle(a);
    for (Index k = 0; k < d; ++k) {
      EXPECT_NEAR(eig.values(k), oracle.eigenvalues()(k), 1e-10 * std::max(1.0, a.norm()));
    }
    const Matrix rebuilt = eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
    EXPECT_LT((rebuilt - a).norm(), 1e-10 * std::max(1.0, a.norm()));
    EXPECT_LT((eig.vectors.transpose() * eig.vectors - Matrix::Identity(d, d)).norm(), 1e-10);
  }
}

TEST(JacobiEigen, RejectsNonSquare) {
  EXPECT_THROW(jacobi_eigen(Matrix::Zero(2, 3)), Error);
}

TEST(ClassMeans, AveragesTwoPoints) {
  const LabeledFeatures batch{rows({{1, 3}, {3, 5}}), {0, 0}};
  const ClassMeans m = estimate_class_means(batch, 1);
  EXPECT_EQ(m.means, rows({{2, 4}}));
  EXPECT_EQ(m.counts, (std::vector<std::size_t>{2}));
}

TEST(ClassMeans, AbsentClassIsZero) {
  const LabeledFeatures batch{rows({{5, 5}}), {1}};
  const ClassMeans m = estimate_class_means(batch, 2);
  EXPECT_EQ(m.means, rows({{0, 0}, {5, 5}}));
  EXPECT_EQ(m.counts, (std::vector<std::size_t>{0, 1}));
}

TEST(ClassMeans, MatchesDirectSummation) {
  Rng rng(3);
  const LabeledFeatures batch{random_matrix(rng, 50, 4), testing::random_labels(rng, 50, 3)};
  const ClassMeans m = estimate_class_means(batch, 3);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> sum(4, 0.0);
    std::size_t count = 0;
    for (std::size_t j = 0; j < batch.labels.size(); ++j) {
      if (batch.labels[j] != c) continue;
      ++count;
      for (int a = 0; a < 4; ++a) sum[static_cast<std::size_t>(a)] += batch.features(static_cast<Index>(j), a);
    }
    EXPECT_EQ(m.counts[static_cast<std::size_t>(c)], count);
    for (int a = 0; a < 4; ++a) {
      const double expected = count ? sum[static_cast<std::size_t>(a)] / static_cast<double>(count) : 0.0;
      EXPECT_NEAR(m.means(c, a), expected, 1e-12);
    }
  }
}

TEST(ClassMeans, Errors) {
  EXPECT_THROW(
      {
        try {
          estimate_class_means(LabeledFeatures{Matrix(0, 2), {}}, 2);
        } catch (const Error& e) {
          EXPECT_NE(std::string(e.what()).find("no samples"), std::string::npos);
          throw;
        }
      },
      Error);
  EXPECT_THROW(estimate_class_means(LabeledFeatures{rows({{1, 2}}), {2}}, 2), Error);
  EXPECT_THROW(estimate_class_means(LabeledFeatures{rows({{1, 2}}), {0, 1}}, 2), Error);
}

TEST(CenterFeatures, Examples) {
  EXPECT_EQ(center_features(LabeledFeatures{rows({{2, 4}}), {0}}, rows({{2, 4}})), rows({{0, 0}}));
  EXPECT_EQ(center_features(LabeledFeatures{rows({{0, 0}, {2, 0}}), {0, 0}}, rows({{1, 0}})),
            rows({{-1, 0}, {1, 0}}));
  EXPECT_THROW(center_features(LabeledFeatures{rows({{0, 0}}), {0}}, rows({{1, 0, 0}})), Error);
}

TEST(CenterFeatures, PerClassColumnSumsVanish) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const LabeledFeatures batch{random_matrix(rng, 60, 5, 3.0), testing::random_labels(rng, 60, 4)};
    const Matrix centered = center_features(batch, estimate_class_means(batch, 4).means);
    for (int c = 0; c < 4; ++c) {
      Vector sum = Vector::Zero(5);
      for (std::size_t j = 0; j < batch.labels.size(); ++j) {
        if (batch.labels[j] == c) sum += centered.row(static_cast<Index>(j)).transpose();
      }
      EXPECT_LT(sum.cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(SharedCovariance, HandComputed) {
  EXPECT_EQ(estimate_shared_covariance(rows({{-1, 0}, {1, 0}})), rows({{2, 0}, {0, 0}}));
  EXPECT_EQ(estimate_shared_covariance(Matrix::Zero(4, 3)), Matrix::Zero(3, 3));
}

TEST(SharedCovariance, MatchesDoubleLoop) {
  Rng rng(7);
  const Matrix z = random_matrix(rng, 100, 3, 2.0);
  const Matrix cov = estimate_shared_covariance(z);
  for (Index a = 0; a < 3; ++a) {
    for (Index b = 0; b < 3; ++b) {
      double s = 0.0;
      for (Index j = 0; j < 100; ++j) s += z(j, a) * z(j, b);
      EXPECT_NEAR(cov(a, b), s / 99.0, 1e-10);
    }
  }
  EXPECT_EQ(cov, cov.transpose());
  EXPECT_GE(oracle_min_eig(cov), -1e-12);
}

TEST(SharedCovariance, InsufficientSamples) {
  try {
    estimate_shared_covariance(Matrix::Zero(1, 2));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("insufficient samples"), std::string::npos);
  }
}

TEST(SharedCovariance, PermutationInvariant) {
  Rng rng(9);
  const LabeledFeatures batch{random_matrix(rng, 40, 4), testing::random_labels(rng, 40, 3)};
  std::vector<std::size_t> order(40);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  LabeledFeatures shuffled{Matrix(40, 4), {}};
  for (std::size_t j = 0; j < 40; ++j) {
    shuffled.features.row(static_cast<Index>(j)) = batch.features.row(static_cast<Index>(order[j]));
    shuffled.labels.push_back(batch.labels[order[j]]);
  }
  auto cov_of = [](const LabeledFeatures& b) {
    return estimate_shared_covariance(center_features(b, estimate_class_means(b, 3).means));
  };
  EXPECT_LT((cov_of(batch) - cov_of(shuffled)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SharedCovariance, UnbiasedOverResamples) {
  Rng rng(13);
  const Matrix truth = (Matrix(2, 2) << 2.0, 0.6, 0.6, 1.0).finished();
  const Matrix root = truth.llt().matrixL();
  const int trials = 10000;
  Matrix sum = Matrix::Zero(2, 2);
  Matrix sum_sq = Matrix::Zero(2, 2);
  for (int t = 0; t < trials; ++t) {
    const Matrix draws = (root * random_matrix(rng, 2, 5)).transpose();
    const LabeledFeatures batch{draws, std::vector<int>(5, 0)};
    const Matrix est = estimate_shared_covariance(center_features(batch, estimate_class_means(batch, 1).means));
    sum += est;
    sum_sq += est.cwiseProduct(est);
  }
  const Matrix mean = sum / trials;
  const Matrix var = sum_sq / trials - mean.cwiseProduct(mean);
  for (Index a = 0; a < 2; ++a) {
    for (Index b = 0; b < 2; ++b) {
      const double se = std::sqrt(var(a, b) / trials);
      EXPECT_LT(std::abs(mean(a, b) - truth(a, b)), 3.0 * se) << a << "," << b;
    }
  }
}

TEST(RegularizeCovariance, IdentityOnlyLoaded) {
  const Matrix out = regularize_covariance(Matrix::Identity(3, 3), CovOptions{1e-3, 1e-6});
  EXPECT_LT((out - 1.001 * Matrix::Identity(3, 3)).norm(), 1e-15);
}

TEST(RegularizeCovariance, DiagonalLoadingSuffices) {
  const Matrix out = regularize_covariance(rows({{2, 0}, {0, 0}}), CovOptions{1e-3, 1e-6});
  EXPECT_LT((out - rows({{2.001, 0}, {0, 0.001}})).norm(), 1e-15);
  EXPECT_GT(oracle_min_eig(out), 0.0);
}

TEST(RegularizeCovariance, RankOneRepaired) {
  const CovOptions opts{1e-4, 1e-6};
  const Matrix out = regularize_covariance(rows({{1, 1}, {1, 1}}), opts);
  EXPECT_NEAR(out(0, 0), 1.0 + opts.epsilon, 1e-8);
  EXPECT_NEAR(out(1, 1), 1.0 + opts.epsilon, 1e-8);
  const Vector sd = out.diagonal().cwiseSqrt();
  const Matrix corr = sd.cwiseInverse().asDiagonal() * out * sd.cwiseInverse().asDiagonal();
  EXPECT_GE(oracle_min_eig(corr), opts.min_corr_eig * (1.0 - 1e-6));
  EXPECT_GT(oracle_min_eig(out), 0.0);
}

TEST(RegularizeCovariance, RepairsWhenLoadingIsNotEnough) {
  // Correlation 1 - 1e-9 survives the loading with a correlation eigenvalue
  // far below the floor, so the clipping path must run.
  const CovOptions opts{1e-12, 1e-3};
  const Matrix out = regularize_covariance(rows({{1, 1}, {1, 1}}), opts);
  const Vector sd = out.diagonal().cwiseSqrt();
  const Matrix corr = sd.cwiseInverse().asDiagonal() * out * sd.cwiseInverse().asDiagonal();
  EXPECT_NEAR(out(0, 0), 1.0 + 1e-12, 1e-8);
  EXPECT_GE(oracle_min_eig(corr), 1e-3 * (1.0 - 1e-6) / (1.0 + 1e-3));
  EXPECT_LT(corr(0, 1), 1.0 - 5e-4);
}

TEST(RegularizeCovariance, ZeroMatrixUsesLoading) {
  const Matrix out = regularize_covariance(Matrix::Zero(4, 4), CovOptions{1e-4, 1e-6});
  EXPECT_LT((out - 1e-4 * Matrix::Identity(4, 4)).norm(), 1e-18);
}

TEST(RegularizeCovariance, RejectsAsymmetric) {
  EXPECT_THROW(regularize_covariance(rows({{1, 0.5}, {0, 1}})), Error);
  EXPECT_THROW(regularize_covariance(Matrix::Zero(2, 3)), Error);
  EXPECT_THROW(regularize_covariance(Matrix::Identity(2, 2), CovOptions{0.0, 1e-6}), Error);
}

TEST(RegularizeCovariance, PdAndDiagonalPreservingOnRandomInputs) {
  Rng rng(17);
  const CovOptions opts;
  for (int trial = 0; trial < 300; ++trial) {
    const Index d = 1 + trial % 16;
    Matrix cov;
    switch (trial % 3) {
      case 0: cov = random_spd(rng, d); break;
      case 1: cov = random_psd_rank(rng, d, trial % static_cast<int>(d)); break;
      default: {
        // few samples in many dimensions
        const Matrix z = random_matrix(rng, 3, 16);
        LabeledFeatures b{z, {0, 0, 0}};
        cov = estimate_shared_covariance(center_features(b, estimate_class_means(b, 1).means));
      }
    }
    const Matrix out = regularize_covariance(cov, opts);
    EXPECT_GT(oracle_min_eig(out), 0.0);
    EXPECT_LE(asymmetry(out), 1e-12 * std::max(1.0, out.norm()));
    for (Index a = 0; a < out.rows(); ++a) EXPECT_NEAR(out(a, a), cov(a, a) + opts.epsilon, 1e-8);
  }
}

TEST(Priors, Counting) {
  const std::vector<int> a{0, 0, 1, 1};
  EXPECT_EQ(estimate_priors(a, 3), (Vector(3) << 0.5, 0.5, 0.0).finished());
  const std::vector<int> b{2};
  EXPECT_EQ(estimate_priors(b, 3), (Vector(3) << 0.0, 0.0, 1.0).finished());
  Rng rng(19);
  const auto y = testing::random_labels(rng, 333, 7);
  const Vector p = estimate_priors(y, 7);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  for (int c = 0; c < 7; ++c) {
    EXPECT_DOUBLE_EQ(p(c), static_cast<double>(std::count(y.begin(), y.end(), c)) / 333.0);
  }
  EXPECT_THROW(estimate_priors(std::vector<int>{}, 2), Error);
}

TEST(ClassGaussianEstimate, FallsBackForAbsentClassesAndTinyBatches) {
  ClassGaussian fallback{rows({{9, 9}, {7, 7}, {5, 5}}), 3.0 * Matrix::Identity(2, 2),
                         Vector::Constant(3, 1.0 / 3)};
  const LabeledFeatures one{rows({{1, 2}}), {1}};
  std::vector<std::size_t> counts;
  const ClassGaussian g = estimate_class_gaussian(one, fallback, CovOptions{}, &counts);
  EXPECT_EQ(g.cov, fallback.cov);
  EXPECT_EQ(g.means, rows({{9, 9}, {1, 2}, {5, 5}}));
  EXPECT_EQ(counts, (std::vector<std::size_t>{0, 1, 0}));
  EXPECT_EQ(g.priors, (Vector(3) << 0, 1, 0).finished());

  const LabeledFeatures two{rows({{0, 0}, {2, 0}}), {0, 0}};
  const ClassGaussian h = estimate_class_gaussian(two, fallback, CovOptions{1e-3, 1e-6});
  EXPECT_LT((h.cov - rows({{2.001, 0}, {0, 0.001}})).norm(), 1e-15);
}

}  // namespace
}  // namespace fedfda
