#pragma once

// Monte Carlo check of the high-probability error bound for the interpolated
// mean estimate  mu_hat_i = beta * mu_i + (1 - beta) * mu_g  (single class).

#include "fedfda/common.hpp"
#include "fedfda/federation.hpp"
#include "fedfda/linalg.hpp"
#include "fedfda/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace fedfda {

struct TheoremScenario {
  std::vector<int> n;           // samples per client
  Matrix thetas;                // M x d true client means
  std::vector<Matrix> sigmas;   // M client covariances (PSD)
  double beta = 1.0;
  double delta = 0.1;
  double c = 0.125;

  int num_clients() const { return static_cast<int>(n.size()); }
  Index dim() const { return thetas.cols(); }
  long long total() const {
    long long t = 0;
    for (int v : n) t += v;
    return t;
  }
  // theta_g = sum n_i theta_i / N
  Vector theta_g() const {
    Vector g = Vector::Zero(dim());
    for (int i = 0; i < num_clients(); ++i) g += n[static_cast<std::size_t>(i)] * thetas.row(i).transpose();
    return g / static_cast<double>(total());
  }
  // Sigma_g = sum n_i^2 Sigma_i / N^2
  Matrix sigma_g() const {
    Matrix g = Matrix::Zero(dim(), dim());
    for (int i = 0; i < num_clients(); ++i) {
      const double ni = n[static_cast<std::size_t>(i)];
      g += ni * ni * sigmas[static_cast<std::size_t>(i)];
    }
    const double total_n = static_cast<double>(total());
    return g / (total_n * total_n);
  }
};

inline void validate(const TheoremScenario& s) {
  detail::require(s.num_clients() >= 1, "scenario needs at least one client");
  detail::require(s.thetas.rows() == s.num_clients() &&
                      s.sigmas.size() == static_cast<std::size_t>(s.num_clients()),
                  "scenario: per-client arrays disagree in length");
  for (int v : s.n) detail::require(v >= 1, "scenario: n_i must be >= 1");
  for (const auto& sig : s.sigmas) {
    detail::require(sig.rows() == s.dim() && sig.cols() == s.dim(), "scenario: covariance shape");
    detail::require(min_eigenvalue(sig) >= -1e-12, "scenario: covariance must be PSD");
  }
  detail::require(s.beta >= 0.0 && s.beta <= 1.0, "scenario: beta out of [0,1]");
  detail::require(s.delta > 0.0 && s.delta < 1.0, "scenario: delta out of (0,1)");
  detail::require(s.c > 0.0, "scenario: c must be > 0");
}

/// (1-b)^2 |theta_g - theta_i|^2
///   + [1 + 4(sqrt(L) + L)] (2b/n_i Tr(Sigma_i) + (1-b)^2/N Tr(Sigma_g)),
/// with L = log(1/delta) / c.
inline double theorem_bound(const TheoremScenario& s, int i) {
  validate(s);
  detail::require(i >= 0 && i < s.num_clients(), "theorem_bound: client index out of range");
  const double b = s.beta;
  const double L = std::log(1.0 / s.delta) / s.c;
  const double inflation = 1.0 + 4.0 * (std::sqrt(L) + L);
  const double bias = (1.0 - b) * (1.0 - b) * (s.theta_g() - s.thetas.row(i).transpose()).squaredNorm();
  const double ni = s.n[static_cast<std::size_t>(i)];
  const double variance = 2.0 * b / ni * s.sigmas[static_cast<std::size_t>(i)].trace() +
                          (1.0 - b) * (1.0 - b) / static_cast<double>(s.total()) * s.sigma_g().trace();
  return bias + inflation * variance;
}

namespace detail {

// One Monte Carlo trial: the local sample mean of client i and the pooled
// mean over all N samples, drawn sample by sample.
struct TrialMeans {
  Vector local;
  Vector global;
};

inline TrialMeans draw_trial(const TheoremScenario& s, int i, const std::vector<Matrix>& roots,
                             Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index d = s.dim();
  Vector g(d);
  TrialMeans out{Vector::Zero(d), Vector::Zero(d)};
  for (int j = 0; j < s.num_clients(); ++j) {
    Vector sum = Vector::Zero(d);
    const int nj = s.n[static_cast<std::size_t>(j)];
    for (int k = 0; k < nj; ++k) {
      for (Index a = 0; a < d; ++a) g(a) = normal(rng);
      sum += roots[static_cast<std::size_t>(j)] * g;
    }
    sum += nj * s.thetas.row(j).transpose();
    out.global += sum;
    if (j == i) out.local = sum / static_cast<double>(nj);
  }
  out.global /= static_cast<double>(s.total());
  return out;
}

inline std::vector<Matrix> covariance_roots(const TheoremScenario& s) {
  std::vector<Matrix> roots;
  for (const auto& sig : s.sigmas) roots.push_back(psd_sqrt(sig));
  return roots;
}

// Trials run in parallel on per-trial streams; results land in trial order.
template <typename PerTrial>
void for_each_trial(const TheoremScenario& s, int i, int trials, std::uint64_t seed, int threads,
                    PerTrial&& per_trial) {
  const auto roots = covariance_roots(s);
  parallel_for(static_cast<std::size_t>(trials), threads, [&](std::size_t t) {
    Rng rng = make_stream(seed, StreamTag::theory, t);
    per_trial(t, draw_trial(s, i, roots, rng));
  });
}

}  // namespace detail

/// Squared error |mu_hat_i - theta_i|^2 for each trial at the scenario's beta.
inline std::vector<double> simulate_estimation_error(const TheoremScenario& s, int i, int trials,
                                                     std::uint64_t seed, int threads = 1) {
  validate(s);
  detail::require(trials >= 1, "trials must be >= 1");
  detail::require(i >= 0 && i < s.num_clients(), "client index out of range");
  const Vector theta_i = s.thetas.row(i).transpose();
  std::vector<double> errors(static_cast<std::size_t>(trials));
  detail::for_each_trial(s, i, trials, seed, threads, [&](std::size_t t, const detail::TrialMeans& m) {
    errors[t] = (s.beta * m.local + (1.0 - s.beta) * m.global - theta_i).squaredNorm();
  });
  return errors;
}

/// Fraction of trials whose error is within the bound.
inline double coverage_check(const TheoremScenario& s, int i, int trials, std::uint64_t seed,
                             int threads = 1) {
  const double bound = theorem_bound(s, i);
  const auto errors = simulate_estimation_error(s, i, trials, seed, threads);
  const auto inside = std::count_if(errors.begin(), errors.end(), [bound](double e) { return e <= bound; });
  return static_cast<double>(inside) / static_cast<double>(errors.size());
}

/// Mean Monte Carlo error at each beta of the grid, with common random
/// numbers across the grid.
inline std::vector<double> mean_error_curve(const TheoremScenario& s, int i, int trials,
                                            std::span<const double> beta_grid, std::uint64_t seed,
                                            int threads = 1) {
  validate(s);
  detail::require(trials >= 1 && !beta_grid.empty(), "mean_error_curve: empty grid or trials");
  const Vector theta_i = s.thetas.row(i).transpose();
  std::vector<std::vector<double>> per_trial(static_cast<std::size_t>(trials),
                                             std::vector<double>(beta_grid.size()));
  detail::for_each_trial(s, i, trials, seed, threads, [&](std::size_t t, const detail::TrialMeans& m) {
    for (std::size_t b = 0; b < beta_grid.size(); ++b) {
      const double beta = beta_grid[b];
      per_trial[t][b] = (beta * m.local + (1.0 - beta) * m.global - theta_i).squaredNorm();
    }
  });
  std::vector<double> mean(beta_grid.size(), 0.0);
  for (const auto& row : per_trial) {
    for (std::size_t b = 0; b < row.size(); ++b) mean[b] += row[b];
  }
  for (double& v : mean) v /= static_cast<double>(trials);
  return mean;
}

/// Grid argmin of the Monte Carlo mean error (lowest beta on ties).
inline double empirical_optimal_beta(const TheoremScenario& s, int i, int trials,
                                     std::span<const double> beta_grid, std::uint64_t seed,
                                     int threads = 1) {
  for (double b : beta_grid) detail::require(b >= 0.0 && b <= 1.0, "beta grid must lie in [0,1]");
  const auto curve = mean_error_curve(s, i, trials, beta_grid, seed, threads);
  std::size_t best = 0;
  for (std::size_t b = 1; b < curve.size(); ++b) {
    if (curve[b] < curve[best]) best = b;
  }
  return beta_grid[best];
}

inline std::vector<double> uniform_grid(int points) {
  detail::require(points >= 2, "grid needs at least 2 points");
  std::vector<double> g;
  for (int k = 0; k < points; ++k) g.push_back(static_cast<double>(k) / (points - 1));
  return g;
}

/// Default single-class scenario: d = 4, client 0 holds `n_target` samples
/// and sits at distance `shift` from four identity-covariance peers that each
/// hold 100 samples at the origin.
inline TheoremScenario default_scenario(int n_target = 10, double shift = 1.0, double beta = 1.0,
                                        double delta = 0.1, double c = 0.125) {
  TheoremScenario s;
  const int d = 4;
  s.n = {n_target, 100, 100, 100, 100};
  s.thetas = Matrix::Zero(5, d);
  s.thetas(0, 0) = shift;
  s.sigmas.assign(5, Matrix::Identity(d, d));
  s.beta = beta;
  s.delta = delta;
  s.c = c;
  return s;
}

}  // namespace fedfda
