#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "snj/error.hpp"
#include "snj/markov.hpp"
#include "snj/parallel.hpp"
#include "snj/similarity_types.hpp"
#include "snj/tree.hpp"

namespace snj {

struct EstimatorDiagnostics {
  // Smallest per-leaf state frequency over all leaves and states.
  double gamma = 0.0;
  // Pairs whose estimate hit a clamp boundary.
  int clamp_count = 0;
};

struct SimilarityEstimate {
  SimilarityMatrix similarity;
  EstimatorDiagnostics diagnostics;
};

namespace detail {

inline double min_state_frequency(const CharacterMatrix& X, int* starving_leaf = nullptr,
                                  int* starving_state = nullptr) {
  const int d = X.states();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < X.rows(); ++i) {
    std::vector<int> counts(d, 0);
    for (auto s : X.row(i)) ++counts[s - 1];
    for (int k = 0; k < d; ++k) {
      const double f = static_cast<double>(counts[k]) / X.sites();
      if (f < best) {
        best = f;
        if (starving_leaf) *starving_leaf = i;
        if (starving_state) *starving_state = k + 1;
      }
    }
  }
  return best;
}

inline int mismatches(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  int count = 0;
  for (std::size_t s = 0; s < a.size(); ++s) count += a[s] != b[s];
  return count;
}

// Fills the upper triangle by calling entry(i, j) for every pair, then
// mirrors it.
template <class Entry>
Eigen::MatrixXd pairwise(int m, int threads, Entry&& entry) {
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(m, m);
  parallel_for(m, threads, [&](int i) {
    for (int j = i + 1; j < m; ++j) R(i, j) = entry(i, j);
  });
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) R(j, i) = R(i, j);
  return R;
}

}  // namespace detail

// Jukes-Cantor corrected similarity:
//   theta(i,j) = min(mismatch fraction, (d-1)/d)
//   R(i,j)     = (1 - d/(d-1) theta)^(d-1)
inline SimilarityEstimate estimate_jc_similarity(const CharacterMatrix& X, int threads = 1) {
  const int m = X.rows(), n = X.sites(), d = X.states();
  const double limit = jc_theta_limit(d);
  std::vector<char> clamped(static_cast<std::size_t>(m) * m, 0);
  Eigen::MatrixXd R = detail::pairwise(m, threads, [&](int i, int j) {
    double theta = static_cast<double>(detail::mismatches(X.row(i), X.row(j))) / n;
    if (theta > limit) {
      theta = limit;
      clamped[static_cast<std::size_t>(i) * m + j] = 1;
    }
    return std::max(0.0, std::pow(1.0 - d * theta / (d - 1), d - 1));
  });
  EstimatorDiagnostics diag;
  diag.gamma = detail::min_state_frequency(X);
  diag.clamp_count = static_cast<int>(std::count(clamped.begin(), clamped.end(), 1));
  return {SimilarityMatrix(X.labels(), std::move(R)), diag};
}

// Similarity under Jukes-Cantor with Gamma(shape, 1/shape) site rates. The
// mismatch fraction p maps to the rate-averaged paralinear distance
//   D = shape (d-1) [ (1 - d p/(d-1))^(-1/shape) - 1 ],  R = exp(-D).
inline SimilarityEstimate estimate_gamma_jc_similarity(const CharacterMatrix& X, double shape,
                                                       int threads = 1) {
  detail::require(shape > 0.0, "gamma shape must be positive");
  const int m = X.rows(), n = X.sites(), d = X.states();
  const double limit = jc_theta_limit(d);
  std::vector<char> clamped(static_cast<std::size_t>(m) * m, 0);
  Eigen::MatrixXd R = detail::pairwise(m, threads, [&](int i, int j) {
    const double p = static_cast<double>(detail::mismatches(X.row(i), X.row(j))) / n;
    if (p >= limit) {
      clamped[static_cast<std::size_t>(i) * m + j] = 1;
      return 0.0;
    }
    const double D = shape * (d - 1) * (std::pow(1.0 - d * p / (d - 1), -1.0 / shape) - 1.0);
    return std::exp(-D);
  });
  EstimatorDiagnostics diag;
  diag.gamma = detail::min_state_frequency(X);
  diag.clamp_count = static_cast<int>(std::count(clamped.begin(), clamped.end(), 1));
  return {SimilarityMatrix(X.labels(), std::move(R)), diag};
}

// General estimator: R(i,j) = sqrt(|det P(x_i|x_j)| |det P(x_j|x_i)|) from
// empirical conditionals, clamped to [0,1]. `smoothing` is added to every
// joint count.
inline SimilarityEstimate estimate_logdet_similarity(const CharacterMatrix& X,
                                                     double smoothing = 0.0, int threads = 1) {
  detail::require(smoothing >= 0.0, "smoothing must be non-negative");
  const int m = X.rows(), d = X.states();
  int leaf = -1, state = -1;
  const double gamma = detail::min_state_frequency(X, &leaf, &state);
  if (gamma == 0.0 && smoothing == 0.0) {
    throw Error("logdet estimator: state " + std::to_string(state) + " never occurs at leaf '" +
                X.labels()[leaf] + "'; conditional matrices would be singular");
  }
  std::vector<char> clamped(static_cast<std::size_t>(m) * m, 0);
  Eigen::MatrixXd R = detail::pairwise(m, threads, [&](int i, int j) {
    Eigen::MatrixXd joint = Eigen::MatrixXd::Constant(d, d, smoothing);
    auto ri = X.row(i), rj = X.row(j);
    for (std::size_t s = 0; s < ri.size(); ++s) joint(ri[s] - 1, rj[s] - 1) += 1.0;
    // P(x_i = a | x_j = b): columns of joint normalised.
    Eigen::MatrixXd p_i_given_j = joint;
    for (int b = 0; b < d; ++b) p_i_given_j.col(b) /= joint.col(b).sum();
    // P(x_j = b | x_i = a): columns of joint^T normalised.
    Eigen::MatrixXd p_j_given_i = joint.transpose();
    for (int a = 0; a < d; ++a) p_j_given_i.col(a) /= joint.row(a).sum();
    double r = std::sqrt(std::abs(p_i_given_j.determinant()) *
                         std::abs(p_j_given_i.determinant()));
    if (!(r <= 1.0)) {
      clamped[static_cast<std::size_t>(i) * m + j] = 1;
      r = 1.0;
    }
    return r;
  });
  EstimatorDiagnostics diag;
  diag.gamma = gamma;
  diag.clamp_count = static_cast<int>(std::count(clamped.begin(), clamped.end(), 1));
  return {SimilarityMatrix(X.labels(), std::move(R)), diag};
}

// D = -log R off the diagonal.
inline DistanceMatrix affinity_to_distance(const SimilarityMatrix& R) {
  const int m = R.size();
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const double r = R(i, j);
      if (!(r > 0.0 && r <= 1.0)) {
        throw InvalidArgument("affinity " + std::to_string(r) + " between '" + R.labels()[i] +
                              "' and '" + R.labels()[j] +
                              "' has no finite paralinear distance");
      }
      D(i, j) = -std::log(r);
    }
  }
  return DistanceMatrix(R.labels(), std::move(D));
}

// Replaces zero off-diagonal affinities (saturated estimates) by the smallest
// positive one, so that every distance is finite and saturated pairs sit at
// the largest observed distance. Returns the number of entries replaced.
inline int floor_zero_affinities(SimilarityMatrix& R) {
  const int m = R.size();
  double floor = 1.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j && R(i, j) > 0.0) floor = std::min(floor, R(i, j));
  Eigen::MatrixXd values = R.values();
  int replaced = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j && values(i, j) <= 0.0) {
        values(i, j) = floor;
        ++replaced;
      }
  if (replaced) R = SimilarityMatrix(R.labels(), std::move(values));
  return replaced / 2;
}

// R = exp(-D) off the diagonal; diagonal 1.
inline SimilarityMatrix distance_to_affinity(const DistanceMatrix& D) {
  const int m = D.size();
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const double v = D(i, j);
      detail::require(std::isfinite(v) && v >= 0.0,
                      "distance between '" + D.labels()[i] + "' and '" + D.labels()[j] +
                          "' must be finite and non-negative");
      R(i, j) = std::exp(-v);
    }
  }
  return SimilarityMatrix(D.labels(), std::move(R));
}

// ---------------------------------------------------------------------------
// Threshold and sample-size calculators. Diagnostic only.

namespace detail {

inline void require_bounds(int m, double delta, double xi) {
  require(m >= 4, "m must be at least 4");
  require(delta > 0.0 && delta <= xi && xi < 1.0, "need 0 < delta <= xi < 1");
}

}  // namespace detail

// f(m, delta, xi) = 1/2 (2 delta^2)^(log2(m/2)) delta (1 - xi^2)
inline double spectral_gap_f(int m, double delta, double xi) {
  detail::require_bounds(m, delta, xi);
  return 0.5 * std::pow(2.0 * delta * delta, std::log2(m / 2.0)) * delta * (1.0 - xi * xi);
}

// Lower bound on sigma_2 for the union of two non-adjacent clans.
inline double population_sigma2_lower_bound(int m, double delta, double xi) {
  detail::require_bounds(m, delta, xi);
  if (delta * delta <= 0.5) return spectral_gap_f(m, delta, xi);
  return std::pow(delta, 3) * (1.0 - xi * xi);
}

// Spectral-norm error on R below which SNJ recovers the tree.
inline double snj_error_threshold(int m, double delta, double xi) {
  return 0.5 * population_sigma2_lower_bound(m, delta, xi);
}

namespace detail {
inline void require_epsilon(double epsilon) {
  require(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0,1)");
}
}  // namespace detail

// Sites sufficient for SNJ under Jukes-Cantor with probability 1 - epsilon.
inline double jc_sample_bound(int m, int d, double delta, double xi, double epsilon) {
  detail::require_bounds(m, delta, xi);
  detail::require(d >= 2, "d must be at least 2");
  detail::require_epsilon(epsilon);
  const double gap = population_sigma2_lower_bound(m, delta, xi);
  const double mm = static_cast<double>(m) * m;
  return std::ceil(2.0 * d * d * mm / (gap * gap) * std::log(2.0 * mm / epsilon));
}

// Sites sufficient for max-quartet NJ under Jukes-Cantor.
inline double maxq_sample_bound(int m, int d, double delta, int depth, double epsilon) {
  detail::require(m >= 4, "m must be at least 4");
  detail::require(d >= 2, "d must be at least 2");
  detail::require(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
  detail::require(depth >= 1, "depth must be at least 1");
  detail::require_epsilon(epsilon);
  const double mm = static_cast<double>(m) * m;
  return std::ceil(100.0 * d * d * std::log(2.0 * mm / epsilon) *
                   std::pow(delta, -4.0 * (depth + 1)));
}

// Lower bound on Pr(||R_hat - R|| <= t) for the Jukes-Cantor estimator.
inline double jc_tail_probability(int m, int d, int n, double t) {
  const double mm = static_cast<double>(m) * m;
  return 1.0 - 2.0 * mm * std::exp(-2.0 * n * t * t / (static_cast<double>(d) * d * mm));
}

// Same for unstructured transition matrices; gamma is the smallest per-leaf
// state frequency.
inline double general_tail_probability(int m, int d, int n, double t, double gamma) {
  const double mm = static_cast<double>(m) * m;
  const double dd = static_cast<double>(d) * d;
  return 1.0 - 2.0 * dd * mm * std::exp(-2.0 * gamma * n * t * t / (dd * dd * mm));
}

// Half the shortest edge distance -log r(e): the entrywise error radius under
// which neighbor joining is guaranteed to recover the tree.
inline double atteson_radius(const EdgeAffinities& aff) { return -std::log(aff.xi()) / 2.0; }

// ---------------------------------------------------------------------------
// CSV: header row of labels, then m rows of m values at 17 significant digits.

template <class Tag>
void write_matrix_csv(std::ostream& os, const detail::LabelledMatrix<Tag>& M) {
  for (int i = 0; i < M.size(); ++i) os << (i ? "," : "") << M.labels()[i];
  os << '\n';
  std::ostringstream ss;
  ss << std::setprecision(17);
  for (int i = 0; i < M.size(); ++i) {
    ss.str("");
    for (int j = 0; j < M.size(); ++j) ss << (j ? "," : "") << M(i, j);
    os << ss.str() << '\n';
  }
}

template <class Matrix>
Matrix read_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty matrix file", 1);
  std::vector<std::string> labels;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) labels.push_back(cell);
  }
  const int m = static_cast<int>(labels.size());
  Eigen::MatrixXd values(m, m);
  for (int i = 0; i < m; ++i) {
    if (!std::getline(is, line)) throw ParseError("expected " + std::to_string(m) + " rows", i + 2);
    std::stringstream ss(line);
    int j = 0;
    for (std::string cell; std::getline(ss, cell, ','); ++j) {
      if (j >= m) throw ParseError("too many columns", i + 2);
      try {
        values(i, j) = std::stod(cell);
      } catch (const std::exception&) {
        throw ParseError("non-numeric entry '" + cell + "'", i + 2);
      }
    }
    if (j != m) throw ParseError("expected " + std::to_string(m) + " columns", i + 2);
  }
  return Matrix(std::move(labels), std::move(values));
}

}  // namespace snj
