#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>

#include "snj/rng.hpp"

namespace snj::detail {

struct TopEigenvalues {
  double first = 0.0;
  double second = 0.0;
  int iterations = 0;
};

// Two largest eigenvalues of a symmetric positive semi-definite operator of
// dimension n, given apply(x, y) computing y = A x. Lanczos with full
// reorthogonalisation; a breakdown restarts from a fresh vector orthogonal
// to the basis, so running to n steps is exact up to rounding. Stops early
// once both Ritz residuals fall below rel_tol * theta_1.
template <class Apply>
TopEigenvalues lanczos_top2(int n, Apply&& apply, double rel_tol = 1e-14,
                            std::uint64_t seed = 0x5eed) {
  TopEigenvalues out;
  if (n <= 0) return out;
  SplitMix64 rng(seed);
  Eigen::MatrixXd basis(n, std::min(n, 16));
  auto random_unit = [&](int k) {
    Eigen::VectorXd v(n);
    for (int attempt = 0; attempt < 8; ++attempt) {
      for (int i = 0; i < n; ++i) v(i) = uniform01(rng) - 0.5;
      for (int pass = 0; pass < 2; ++pass)
        v -= basis.leftCols(k) * (basis.leftCols(k).transpose() * v);
      const double norm = v.norm();
      if (norm > 1e-8) return Eigen::VectorXd(v / norm);
    }
    return Eigen::VectorXd(Eigen::VectorXd::Zero(n));
  };

  Eigen::VectorXd alpha(n), beta(n), w(n), coeff(n);
  basis.col(0) = random_unit(0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
  double prev_first = 0.0, prev_second = 0.0;
  for (int k = 0; k < n; ++k) {
    apply(basis.col(k), w);
    alpha(k) = basis.col(k).dot(w);
    for (int pass = 0; pass < 2; ++pass) {
      coeff.head(k + 1).noalias() = basis.leftCols(k + 1).transpose() * w;
      w.noalias() -= basis.leftCols(k + 1) * coeff.head(k + 1);
    }
    const double b = w.norm();
    beta(k) = b;

    const int dim = k + 1;
    out.iterations = dim;
    if (dim == 1) {
      out.first = std::max(alpha(0), 0.0);
    } else {
      tri.computeFromTridiagonal(alpha.head(dim), beta.head(dim - 1), Eigen::EigenvaluesOnly);
      const auto& theta = tri.eigenvalues();  // ascending
      out.first = std::max(theta(dim - 1), 0.0);
      out.second = std::max(theta(dim - 2), 0.0);
    }
    if (dim == n) break;

    const double scale = std::max(out.first, 1e-300);
    const bool breakdown = b <= 1e-12 * scale;
    // Ritz values move by roughly the squared residual, so the residuals
    // are only worth computing once both have nearly settled.
    const bool settled = dim >= 3 && std::abs(out.first - prev_first) <= 1e-6 * scale &&
                         std::abs(out.second - prev_second) <= 1e-6 * scale;
    prev_first = out.first;
    prev_second = out.second;
    if (settled && !breakdown) {
      tri.computeFromTridiagonal(alpha.head(dim), beta.head(dim - 1), Eigen::ComputeEigenvectors);
      const double r1 = std::abs(b * tri.eigenvectors()(dim - 1, dim - 1));
      const double r2 = std::abs(b * tri.eigenvectors()(dim - 1, dim - 2));
      if (r1 <= rel_tol * scale && r2 <= rel_tol * scale) break;
    }
    if (basis.cols() <= dim) basis.conservativeResize(n, std::min<Eigen::Index>(n, 2 * dim));
    if (breakdown) {
      beta(k) = 0.0;
      basis.col(dim) = random_unit(dim);
      if (basis.col(dim).squaredNorm() == 0.0) break;
    } else {
      basis.col(dim) = w / b;
    }
  }
  return out;
}

}  // namespace snj::detail
