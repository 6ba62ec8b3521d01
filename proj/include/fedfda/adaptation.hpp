#pragma once

// Local/global interpolation of Gaussian feature statistics. The mixing
// coefficient is chosen by minimizing the k-fold held-out NLL of the
// interpolated generative classifier.

#include "fedfda/common.hpp"
#include "fedfda/dataset.hpp"
#include "fedfda/gauss_stats.hpp"
#include "fedfda/gen_classifier.hpp"
#include "fedfda/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace fedfda {

enum class BetaMode { none, single, multi };

inline std::string to_string(BetaMode m) {
  switch (m) {
    case BetaMode::none: return "none";
    case BetaMode::single: return "single";
    case BetaMode::multi: return "multi";
  }
  return "?";
}

inline BetaMode parse_beta_mode(const std::string& s) {
  if (s == "none") return BetaMode::none;
  if (s == "single") return BetaMode::single;
  if (s == "multi") return BetaMode::multi;
  detail::fail("unknown beta_mode '", s, "' (expected none|single|multi)");
}

struct BetaResult {
  double beta_mu = 1.0;
  double beta_sigma = 1.0;
  double objective = 0.0;
};

using Folds = std::vector<std::vector<std::size_t>>;

/// Stratified k-fold split. Indices of each class are shuffled and dealt
/// round-robin; the dealing position carries over between classes so the
/// total fold sizes stay balanced as well.
inline Folds kfold_split(std::span<const int> labels, int k, Rng& rng) {
  detail::require(k >= 2, "kfold_split: k must be >= 2");
  detail::require(labels.size() >= static_cast<std::size_t>(k),
                  "kfold_split: ", labels.size(), " samples cannot fill ", k, " folds");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t j = 0; j < labels.size(); ++j) {
    by_class[labels[j]].push_back(j);
  }
  Folds folds(static_cast<std::size_t>(k));
  std::size_t next = 0;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j : idx) {
      folds[next].push_back(j);
      next = (next + 1) % folds.size();
    }
  }
  for (auto& f : folds) {
    std::sort(f.begin(), f.end());
  }
  return folds;
}

// Per-fold statistics needed to evaluate the objective for any beta.
struct CvFold {
  Matrix local_means;            // C x d, absent classes hold the global mean
  Matrix local_cov;              // regularized, or the global cov when n < 2
  Matrix heldout_features;
  std::vector<int> heldout_labels;
};

struct CvProblem {
  std::vector<CvFold> folds;
  ClassGaussian global;
  Vector priors;  // local priors of the client
  double prior_floor = kDefaultPriorFloor;
};

inline CvProblem prepare_cv(const LabeledFeatures& log, const Folds& folds,
                            const ClassGaussian& global, const Vector& priors_local,
                            const CovOptions& opts = {},
                            double prior_floor = kDefaultPriorFloor) {
  detail::require(priors_local.size() == global.num_classes(),
                  "prepare_cv: priors length does not match class count");
  CvProblem problem{{}, global, priors_local, prior_floor};
  const std::size_t n = static_cast<std::size_t>(log.size());
  for (std::size_t t = 0; t < folds.size(); ++t) {
    std::vector<char> held(n, 0);
    for (std::size_t j : folds[t]) {
      detail::require(j < n, "prepare_cv: fold index out of range");
      held[j] = 1;
    }
    std::vector<std::size_t> train;
    for (std::size_t j = 0; j < n; ++j) {
      if (!held[j]) train.push_back(j);
    }
    CvFold fold;
    fold.heldout_features = select_rows(log.features, folds[t]);
    fold.heldout_labels = select(log.labels, folds[t]);
    if (train.empty()) {
      fold.local_means = global.means;
      fold.local_cov = global.cov;
    } else {
      const LabeledFeatures train_batch{select_rows(log.features, train),
                                        select(log.labels, train)};
      ClassGaussian est = estimate_class_gaussian(train_batch, global, opts);
      fold.local_means = std::move(est.means);
      fold.local_cov = std::move(est.cov);
    }
    problem.folds.push_back(std::move(fold));
  }
  return problem;
}

/// Mean over folds of the held-out NLL of the interpolated classifier.
inline double cv_objective(const CvProblem& problem, double beta_mu, double beta_sigma) {
  detail::require(!problem.folds.empty(), "cv_objective: no folds");
  double total = 0.0;
  for (const CvFold& fold : problem.folds) {
    ClassGaussian mixed{beta_mu * fold.local_means + (1.0 - beta_mu) * problem.global.means,
                        beta_sigma * fold.local_cov + (1.0 - beta_sigma) * problem.global.cov,
                        problem.priors};
    const GenerativeClassifier clf = build_classifier(mixed, problem.prior_floor);
    total += mean_nll(clf.weights, clf.biases, fold.heldout_features, fold.heldout_labels);
  }
  return total / static_cast<double>(problem.folds.size());
}

inline double cv_objective(double beta_mu, double beta_sigma, const LabeledFeatures& log,
                           const Folds& folds, const ClassGaussian& global,
                           const Vector& priors_local, const CovOptions& opts = {},
                           double prior_floor = kDefaultPriorFloor) {
  return cv_objective(prepare_cv(log, folds, global, priors_local, opts, prior_floor),
                      beta_mu, beta_sigma);
}

namespace detail {

inline constexpr int kCoarseGrid = 21;
inline constexpr double kRefineWidth = 1e-4;
inline constexpr double kTieTolerance = 1e-9;

struct ScalarMin {
  double x;
  double fx;
};

// Golden-section search on [lo, hi]; returns the best point it evaluated.
inline ScalarMin golden_section(const std::function<double(double)>& f, double lo, double hi,
                                double width) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo;
  double b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  while (b - a > width) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? ScalarMin{c, fc} : ScalarMin{d, fd};
}

// Coarse grid on [0,1] refined by golden section around the best grid point.
// Among candidates within kTieTolerance of the minimum the smallest wins.
inline ScalarMin minimize_unit_interval(const std::function<double(double)>& f) {
  std::vector<ScalarMin> seen;
  seen.reserve(kCoarseGrid + 1);
  const double step = 1.0 / (kCoarseGrid - 1);
  std::size_t best = 0;
  for (int i = 0; i < kCoarseGrid; ++i) {
    const double x = i * step;
    seen.push_back({x, f(x)});
    if (seen.back().fx < seen[best].fx) best = seen.size() - 1;
  }
  const double lo = std::max(0.0, seen[best].x - step);
  const double hi = std::min(1.0, seen[best].x + step);
  seen.push_back(golden_section(f, lo, hi, kRefineWidth));

  double fmin = seen.front().fx;
  for (const auto& s : seen) fmin = std::min(fmin, s.fx);
  ScalarMin pick{2.0, 0.0};
  for (const auto& s : seen) {
    if (s.fx <= fmin + kTieTolerance && s.x < pick.x) pick = s;
  }
  return pick;
}

}  // namespace detail

/// Derivative-free bounded search for the interpolation coefficient(s).
/// `multi` starts from the single-beta optimum and runs two rounds of
/// coordinate descent over (beta_mu, beta_sigma).
inline BetaResult optimize_beta(const CvProblem& problem, BetaMode mode) {
  detail::require(mode != BetaMode::none, "optimize_beta: mode none has nothing to optimize");
  const auto single = detail::minimize_unit_interval(
      [&](double b) { return cv_objective(problem, b, b); });
  BetaResult r{single.x, single.x, single.fx};
  if (mode == BetaMode::single) {
    return r;
  }
  for (int round = 0; round < 2; ++round) {
    const auto mu = detail::minimize_unit_interval(
        [&](double b) { return cv_objective(problem, b, r.beta_sigma); });
    if (mu.fx < r.objective) {
      r.beta_mu = mu.x;
      r.objective = mu.fx;
    }
    const auto sigma = detail::minimize_unit_interval(
        [&](double b) { return cv_objective(problem, r.beta_mu, b); });
    if (sigma.fx < r.objective) {
      r.beta_sigma = sigma.x;
      r.objective = sigma.fx;
    }
  }
  return r;
}

/// Convex combination of local and global statistics; priors stay local.
inline ClassGaussian interpolate(const ClassGaussian& local, const ClassGaussian& global,
                                 const BetaResult& r) {
  detail::require(local.means.rows() == global.means.rows() &&
                      local.means.cols() == global.means.cols() &&
                      local.cov.rows() == global.cov.rows() &&
                      local.cov.cols() == global.cov.cols(),
                  "interpolate: shape mismatch");
  detail::require(r.beta_mu >= 0.0 && r.beta_mu <= 1.0 && r.beta_sigma >= 0.0 &&
                      r.beta_sigma <= 1.0,
                  "interpolate: beta out of [0,1]");
  return ClassGaussian{r.beta_mu * local.means + (1.0 - r.beta_mu) * global.means,
                       r.beta_sigma * local.cov + (1.0 - r.beta_sigma) * global.cov,
                       local.priors};
}

}  // namespace fedfda
