#include "fedfda/gauss_stats.hpp"
#include "fedfda/gen_classifier.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace fedfda {
namespace {

using testing::log_gaussian_density;
using testing::random_matrix;
using testing::random_simplex;
using testing::random_spd;
using testing::random_vector;

GenerativeClassifier two_class_mirror() {
  const Matrix means = (Matrix(2, 2) << 1, 0, -1, 0).finished();
  return build_classifier(ClassGaussian{means, Matrix::Identity(2, 2), Vector::Constant(2, 0.5)});
}

TEST(SolveSigmaInvMu, Examples) {
  const Vector w = solve_sigma_inv_mu(Matrix::Identity(2, 2), Vector{{3.0, -2.0}});
  EXPECT_EQ(w, (Vector{{3.0, -2.0}}));
  const Vector v = solve_sigma_inv_mu(Vector{{2.0, 1.0}}.asDiagonal(), Vector{{2.0, 1.0}});
  EXPECT_NEAR(v(0), 1.0, 1e-15);
  EXPECT_NEAR(v(1), 1.0, 1e-15);
}

TEST(SolveSigmaInvMu, ResidualAndInverseOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix cov = random_spd(rng, 8, 0.05);
    const Vector mu = random_vector(rng, 8, 3.0);
    const Vector w = solve_sigma_inv_mu(cov, mu);
    EXPECT_LE((cov * w - mu).norm(), 1e-8 * mu.norm());
    const Vector oracle = cov.inverse() * mu;
    EXPECT_LE((w - oracle).norm(), 1e-8 * std::max(1.0, oracle.norm()));
  }
}

TEST(SolveSigmaInvMu, RejectsNonPd) {
  try {
    solve_sigma_inv_mu((Matrix(2, 2) << 1, 2, 2, 1).finished(), Vector::Ones(2));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("call regularize_covariance first"), std::string::npos);
  }
  EXPECT_THROW(solve_sigma_inv_mu(Matrix::Identity(2, 2), Vector::Ones(3)), Error);
}

TEST(BuildClassifier, HandComputed) {
  const GenerativeClassifier clf = two_class_mirror();
  EXPECT_EQ(clf.weights, (Matrix(2, 2) << 1, 0, -1, 0).finished());
  EXPECT_NEAR(clf.biases(0), -0.5 + std::log(0.5), 1e-15);
  EXPECT_NEAR(clf.biases(1), -0.5 + std::log(0.5), 1e-15);
}

TEST(BuildClassifier, ZeroPriorUsesFloor) {
  const ClassGaussian g{Matrix::Zero(2, 3), Matrix::Identity(3, 3), Vector{{1.0, 0.0}}};
  const GenerativeClassifier clf = build_classifier(g, 1e-8);
  EXPECT_TRUE(std::isfinite(clf.biases(1)));
  EXPECT_NEAR(clf.biases(1), std::log(1e-8), 1e-12);
}

TEST(BuildClassifier, NearestMeanUnderSphericalCovariance) {
  Rng rng(23);
  const Matrix means = random_matrix(rng, 4, 3, 2.0);
  const GenerativeClassifier clf =
      build_classifier(ClassGaussian{means, Matrix::Identity(3, 3), Vector::Constant(4, 0.25)});
  for (int k = 0; k < 100; ++k) {
    const Vector z = random_vector(rng, 3, 3.0);
    Index nearest = 0;
    (means.rowwise() - z.transpose()).rowwise().squaredNorm().minCoeff(&nearest);
    EXPECT_EQ(predict(clf, z), static_cast<int>(nearest));
  }
}

TEST(LogPosterior, SymmetryAndSigmoid) {
  const GenerativeClassifier clf = two_class_mirror();
  const Vector at_origin = log_posterior(clf, Vector::Zero(2));
  EXPECT_NEAR(at_origin(0), std::log(0.5), 1e-15);
  EXPECT_NEAR(at_origin(1), std::log(0.5), 1e-15);
  // density ratio N(z|mu0)/N(z|mu1) at z=(1,0) is exp(2)
  const double p0 = std::exp(log_posterior(clf, Vector{{1.0, 0.0}})(0));
  EXPECT_NEAR(p0, 1.0 / (1.0 + std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(p0, 0.88080, 1e-5);
}

TEST(LogPosterior, MatchesExplicitBayesRule) {
  Rng rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    const ClassGaussian g{random_matrix(rng, 3, 4), random_spd(rng, 4), random_simplex(rng, 3)};
    const GenerativeClassifier clf = build_classifier(g);
    const Vector z = random_vector(rng, 4, 2.0);
    Vector joint(3);
    for (int c = 0; c < 3; ++c) {
      joint(c) = log_gaussian_density(z, g.means.row(c).transpose(), g.cov) + std::log(g.priors(c));
    }
    const double norm = std::log(joint.array().exp().sum());
    const Vector lp = log_posterior(clf, z);
    EXPECT_NEAR(lp.array().exp().sum(), 1.0, 1e-12);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(lp(c), joint(c) - norm, 1e-8);
  }
}

TEST(LogPosterior, NormalizedForExtremeScores) {
  GenerativeClassifier clf{Matrix::Zero(3, 1), Vector{{1e4, -1e4, 0.0}}};
  const Vector lp = log_posterior(clf, Vector::Zero(1));
  EXPECT_TRUE(lp.allFinite());
  EXPECT_NEAR(lp.array().exp().sum(), 1.0, 1e-12);
}

TEST(NllLoss, Examples) {
  const GenerativeClassifier clf = two_class_mirror();
  EXPECT_NEAR(nll_loss(clf, Vector::Zero(2), 0), std::log(2.0), 1e-15);
  EXPECT_LT(nll_loss(clf, Vector{{50.0, 0.0}}, 0), 1e-40);
  EXPECT_GE(nll_loss(clf, Vector{{50.0, 0.0}}, 0), 0.0);
  EXPECT_THROW(nll_loss(clf, Vector::Zero(2), 2), Error);
}

TEST(NllLoss, BatchMeanMatchesPerSample) {
  Rng rng(31);
  const ClassGaussian g{random_matrix(rng, 4, 5), random_spd(rng, 5), random_simplex(rng, 4)};
  const GenerativeClassifier clf = build_classifier(g);
  const Matrix z = random_matrix(rng, 37, 5);
  const auto y = testing::random_labels(rng, 37, 4);
  double sum = 0.0;
  for (Index j = 0; j < 37; ++j) sum += nll_loss(clf, z.row(j).transpose(), y[static_cast<std::size_t>(j)]);
  EXPECT_NEAR(mean_nll(clf.weights, clf.biases, z, y), sum / 37.0, 1e-12);
}

TEST(Predict, TieBreakAndArgmax) {
  GenerativeClassifier clf{Matrix::Zero(2, 1), Vector{{2.0, 1.0}}};
  EXPECT_EQ(predict(clf, Vector::Zero(1)), 0);
  clf.biases = Vector{{1.0, 1.0}};
  EXPECT_EQ(predict(clf, Vector::Zero(1)), 0);
  clf.biases = Vector{{0.0, 1.0, 1.0}};
  clf.weights = Matrix::Zero(3, 1);
  EXPECT_EQ(predict(clf, Vector::Zero(1)), 1);
}

TEST(Predict, AgreesWithPosteriorAndIsShiftInvariant) {
  Rng rng(37);
  const ClassGaussian g{random_matrix(rng, 5, 3), random_spd(rng, 3), random_simplex(rng, 5)};
  GenerativeClassifier clf = build_classifier(g);
  GenerativeClassifier shifted = clf;
  shifted.biases.array() += 123.25;
  const Matrix z = random_matrix(rng, 1000, 3, 2.0);
  const auto rowwise = predict_rows(clf.weights, clf.biases, z);
  for (Index j = 0; j < z.rows(); ++j) {
    const Vector zj = z.row(j).transpose();
    Index best = 0;
    log_posterior(clf, zj).maxCoeff(&best);
    EXPECT_EQ(predict(clf, zj), static_cast<int>(best));
    EXPECT_EQ(predict(shifted, zj), predict(clf, zj));
    EXPECT_EQ(rowwise[static_cast<std::size_t>(j)], predict(clf, zj));
  }
}

}  // namespace
}  // namespace fedfda
