#pragma once

#include "fedfda/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace fedfda {

struct SymmetricEigen {
  Vector values;   // ascending
  Matrix vectors;  // column j pairs with values(j)
};

// Largest absolute asymmetry |a_ij - a_ji|.
inline double asymmetry(const Matrix& a) {
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = i + 1; j < a.cols(); ++j) {
      worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
    }
  }
  return worst;
}

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps over every off-diagonal pair in row order until the off-diagonal
/// Frobenius norm drops below `rel_tol * ||A||_F` or `max_sweeps` is reached.
/// Eigenvalues are returned in ascending order.
inline SymmetricEigen jacobi_eigen(const Matrix& input, double rel_tol = 1e-12,
                                   int max_sweeps = 100) {
  detail::require(input.rows() == input.cols(), "jacobi_eigen: matrix is not square");
  const Index n = input.rows();
  Matrix a = symmetrized(input);
  Matrix v = Matrix::Identity(n, n);

  const double frob = a.norm();
  const double target = rel_tol * frob;

  auto off_norm = [&a, n]() {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        s += 2.0 * a(i, j) * a(i, j);
      }
    }
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < max_sweeps && frob > 0.0; ++sweep) {
    if (off_norm() <= target) {
      break;
    }
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) {
          continue;
        }
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&a](Index x, Index y) { return a(x, x) < a(y, y); });

  SymmetricEigen out{Vector(n), Matrix(n, n)};
  for (Index j = 0; j < n; ++j) {
    out.values(j) = a(order[static_cast<std::size_t>(j)], order[static_cast<std::size_t>(j)]);
    out.vectors.col(j) = v.col(order[static_cast<std::size_t>(j)]);
  }
  return out;
}

inline double min_eigenvalue(const Matrix& sym) {
  if (sym.rows() == 0) {
    return 0.0;
  }
  return jacobi_eigen(sym).values(0);
}

// Symmetric square root of a PSD matrix; negative eigenvalues are clamped to 0.
inline Matrix psd_sqrt(const Matrix& sym) {
  const SymmetricEigen eig = jacobi_eigen(sym);
  const Vector roots = eig.values.cwiseMax(0.0).cwiseSqrt();
  return eig.vectors * roots.asDiagonal() * eig.vectors.transpose();
}

}  // namespace fedfda
