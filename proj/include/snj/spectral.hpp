#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "snj/error.hpp"
#include "snj/lanczos.hpp"
#include "snj/similarity_types.hpp"
#include "snj/tree.hpp"

namespace snj {

// Above this dimension the matrix is first reduced to a small triangular
// factor by column-pivoted QR and only that factor is decomposed.
inline constexpr int kDirectSvdLimit = 64;

namespace detail {

inline Eigen::VectorXd jacobi_singular_values(const Eigen::MatrixXd& M) {
  return Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues();
}

// Singular values of the triangular factor of a rank-revealing QR. `tall`
// must have at least as many rows as columns.
inline Eigen::VectorXd qr_singular_values(const Eigen::MatrixXd& tall) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(tall);
  const Eigen::Index k = tall.cols();
  Eigen::MatrixXd r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  if (k <= kDirectSvdLimit) return jacobi_singular_values(r);
  return Eigen::BDCSVD<Eigen::MatrixXd>(r).singularValues();
}

// Two columns u, v: sigma1 * sigma2 = |u| |v - proj_u v|, and
// sigma1^2 + sigma2^2 = |u|^2 + |v|^2. The residual is formed explicitly so
// that small sigma2 keeps full absolute accuracy.
inline Eigen::VectorXd two_column_singular_values(const Eigen::Ref<const Eigen::VectorXd>& u,
                                                  const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double uu = u.squaredNorm(), vv = v.squaredNorm();
  Eigen::VectorXd s(2);
  if (uu == 0.0 || vv == 0.0) {
    s << std::sqrt(uu + vv), 0.0;
    return s;
  }
  // Project the shorter column out of the longer one.
  const bool u_long = uu >= vv;
  const auto& a = u_long ? u : v;
  const auto& b = u_long ? v : u;
  const double aa = u_long ? uu : vv;
  const double product = std::sqrt(aa) * (b - (a.dot(b) / aa) * a).norm();
  const double sum = uu + vv;
  const double disc = std::sqrt(std::max(0.0, sum * sum - 4.0 * product * product));
  const double s1 = std::sqrt(0.5 * (sum + disc));
  s << s1, (s1 > 0.0 ? product / s1 : 0.0);
  return s;
}

}  // namespace detail

// All singular values of M in descending order.
inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return {};
  const bool wide = M.cols() > M.rows();
  if (std::min(M.rows(), M.cols()) == 2) {
    if (wide) return detail::two_column_singular_values(M.row(0).transpose(), M.row(1).transpose());
    return detail::two_column_singular_values(M.col(0), M.col(1));
  }
  if (std::max(M.rows(), M.cols()) <= kDirectSvdLimit) return detail::jacobi_singular_values(M);
  if (wide) return detail::qr_singular_values(M.transpose());
  return detail::qr_singular_values(M);
}

inline double second_singular_value(const Eigen::MatrixXd& M) {
  detail::require(M.rows() >= 2 && M.cols() >= 2,
                  "second singular value needs at least a 2x2 matrix, got " +
                      std::to_string(M.rows()) + "x" + std::to_string(M.cols()));
  return singular_values(M)(1);
}

// Rows `subset` (ascending), columns the complement (ascending).
inline Eigen::MatrixXd cross_similarity(const Eigen::MatrixXd& R, std::span<const int> subset) {
  const int m = static_cast<int>(R.rows());
  const int k = static_cast<int>(subset.size());
  detail::require(k >= 1 && k <= m - 1, "subset must be non-empty and proper");
  std::vector<char> in(m, 0);
  for (int i : subset) {
    detail::require(i >= 0 && i < m, "leaf index " + std::to_string(i) + " out of range");
    detail::require(!in[i], "duplicate leaf index " + std::to_string(i));
    in[i] = 1;
  }
  std::vector<int> rows(subset.begin(), subset.end());
  std::sort(rows.begin(), rows.end());
  std::vector<int> cols;
  cols.reserve(m - k);
  for (int j = 0; j < m; ++j)
    if (!in[j]) cols.push_back(j);
  Eigen::MatrixXd out(k, m - k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < m - k; ++b) out(a, b) = R(rows[a], cols[b]);
  return out;
}

inline Eigen::MatrixXd cross_similarity(const SimilarityMatrix& R, std::span<const int> subset) {
  return cross_similarity(R.values(), subset);
}

namespace detail {

inline std::vector<int> complement_of_sorted(int m, std::span<const int> sorted) {
  std::vector<int> out;
  out.reserve(m - sorted.size());
  std::size_t p = 0;
  for (int j = 0; j < m; ++j) {
    if (p < sorted.size() && sorted[p] == j) {
      ++p;
      continue;
    }
    out.push_back(j);
  }
  return out;
}

inline std::vector<int> merged_sorted(std::span<const int> a, std::span<const int> b) {
  std::vector<int> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  std::sort(out.begin(), out.end());
  require(std::adjacent_find(out.begin(), out.end()) == out.end(), "subsets must be disjoint");
  return out;
}

}  // namespace detail

namespace detail {

// Largest side of a block that is handled through its explicit Gram matrix.
inline constexpr int kDenseSide = 8;

// Below this sigma_2^2 / sigma_1^2 a Gram-based value is not trusted and
// the block is decomposed directly.
inline constexpr double kGramFallbackRatio = 1e-6;

// Top two singular values of R[small, big] when |small| <= kDenseSide,
// without materialising the block. R must be symmetric; it is read as
// R(big, small) so that the inner loops run down columns. Returns false when the caller should
// fall back to a full decomposition.
inline bool small_side_top2(const Eigen::MatrixXd& R, std::span<const int> small,
                            std::span<const int> big, double& s1, double& s2) {
  const int k = static_cast<int>(small.size());
  if (k == 1) {
    double sum = 0.0;
    for (int t : big) sum += R(t, small[0]) * R(t, small[0]);
    s1 = std::sqrt(sum);
    s2 = 0.0;
    return true;
  }
  if (k == 2) {
    // s1 s2 = |u| |v - proj_u v| with the shorter row projected out.
    const int p = small[0], q = small[1];
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (int t : big) {
      const double rp = R(t, p), rq = R(t, q);
      uu += rp * rp;
      vv += rq * rq;
      uv += rp * rq;
    }
    if (uu == 0.0 || vv == 0.0) {
      s1 = std::sqrt(uu + vv);
      s2 = 0.0;
      return true;
    }
    const int a = uu >= vv ? p : q, c = uu >= vv ? q : p;
    const double aa = std::max(uu, vv), coef = uv / aa;
    double rr = 0.0;
    for (int t : big) {
      const double r = R(t, c) - coef * R(t, a);
      rr += r * r;
    }
    const double product = std::sqrt(aa * rr), sum = uu + vv;
    const double disc = std::sqrt(std::max(0.0, sum * sum - 4.0 * product * product));
    s1 = std::sqrt(0.5 * (sum + disc));
    s2 = s1 > 0.0 ? product / s1 : 0.0;
    return true;
  }
  using Small = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kDenseSide, kDenseSide>;
  Small G = Small::Zero(k, k);
  for (int t : big)
    for (int a = 0; a < k; ++a) {
      const double ra = R(t, small[a]);
      for (int c = a; c < k; ++c) G(c, a) += ra * R(t, small[c]);
    }
  Eigen::SelfAdjointEigenSolver<Small> es;
  es.compute(G, Eigen::EigenvaluesOnly);  // reads the lower triangle only
  const double l1 = std::max(es.eigenvalues()(k - 1), 0.0);
  const double l2 = std::max(es.eigenvalues()(k - 2), 0.0);
  if (!(l2 > kGramFallbackRatio * l1)) return false;
  s1 = std::sqrt(l1);
  s2 = std::sqrt(l2);
  return true;
}

// Top two singular values of R[C, C^c] for sorted C.
inline std::pair<double, double> block_top2(const Eigen::MatrixXd& R, std::span<const int> C) {
  const int m = static_cast<int>(R.rows());
  const auto X = complement_of_sorted(m, C);
  double s1 = 0.0, s2 = 0.0;
  const bool rows_small = C.size() <= X.size();
  if (std::min(C.size(), X.size()) <= static_cast<std::size_t>(kDenseSide)) {
    const bool ok = rows_small ? small_side_top2(R, C, X, s1, s2)
                               : small_side_top2(R, X, C, s1, s2);
    if (ok) return {s1, s2};
  }
  const Eigen::VectorXd s = singular_values(cross_similarity(R, C));
  return {s(0), s.size() > 1 ? s(1) : 0.0};
}

}  // namespace detail

// Top two singular values of R^{N u A} for a fixed subset N and many
// subsets A outside it, as needed when a freshly merged subset is scored
// against every other active subset.
//
// Let W = R[N, N^c]. Once per N the smaller Gram matrix of W is
// diagonalised. For a given A the Gram matrix of R^{N u A} differs from it
// by a term of width |A|, so in that eigenbasis each operator product costs
// O(K |A|), K = min(|N|, |N^c|), and Lanczos extracts the top two
// eigenvalues. Small blocks go through their explicit Gram matrix, and
// nearly rank-one blocks, where squaring loses the small singular value,
// are decomposed directly.
class UnionSpectrum {
 public:
  UnionSpectrum(const Eigen::MatrixXd& R, std::span<const int> subset)
      : R_(&R), inside_(subset.begin(), subset.end()) {
    const int m = static_cast<int>(R.rows());
    std::sort(inside_.begin(), inside_.end());
    outside_ = detail::complement_of_sorted(m, inside_);
    position_.assign(m, -1);
    for (std::size_t p = 0; p < outside_.size(); ++p) position_[outside_[p]] = static_cast<int>(p);
    row_side_ = inside_.size() <= outside_.size();
    // Every union then has a small column side and no basis is needed.
    needs_basis_ = outside_.size() > static_cast<std::size_t>(detail::kDenseSide);
  }

  // First two singular values of R[N u A, (N u A)^c].
  std::pair<double, double> top2(std::span<const int> other) const {
    const int m = static_cast<int>(R_->rows());
    const int w = static_cast<int>(other.size());
    const int rows = static_cast<int>(inside_.size()) + w;
    detail::require(w >= 1 && rows < m, "union must be a non-empty proper subset");
    if (std::min(rows, m - rows) <= detail::kDenseSide || !needs_basis_)
      return detail::block_top2(*R_, detail::merged_sorted(inside_, other));
    if (basis_.size() == 0) {
      if (++direct_uses_ <= kDirectUses) return direct_top2(detail::merged_sorted(inside_, other));
      build_basis();
    }

    std::vector<int> pos(w);
    for (int a = 0; a < w; ++a) {
      pos[a] = position_[other[a]];
      detail::require(pos[a] >= 0, "subsets must be disjoint");
    }
    const int K = static_cast<int>(eigenvalues_.size());
    const int n_out = static_cast<int>(outside_.size());
    // Y = R[A, N^c] with the columns of A itself zeroed.
    Eigen::MatrixXd Y(w, n_out);
    for (int a = 0; a < w; ++a)
      for (int b = 0; b < n_out; ++b) Y(a, b) = (*R_)(other[a], outside_[b]);
    for (int a = 0; a < w; ++a) Y.col(pos[a]).setZero();

    detail::TopEigenvalues ev;
    if (row_side_) {
      // Gram over rows N u A in the eigenbasis U of F = W W^T:
      //   [[diag(f) - V V^T, g], [g^T, c]]
      // with V = U^T W[:, A], g = U^T W[:, X] Y^T, c = Y Y^T, X = N^c \ A.
      Eigen::MatrixXd V(K, w);
      for (int a = 0; a < w; ++a) V.col(a) = projected_.col(pos[a]);
      const Eigen::MatrixXd g = projected_ * Y.transpose();
      const Eigen::MatrixXd c = Y * Y.transpose();
      Eigen::VectorXd tmp(w);
      ev = detail::lanczos_top2(K + w, [&](const auto& x, Eigen::VectorXd& y) {
        const auto xn = x.head(K);
        const auto xa = x.tail(w);
        tmp.noalias() = V.transpose() * xn;
        y.head(K) = eigenvalues_.cwiseProduct(xn);
        y.head(K).noalias() -= V * tmp;
        y.head(K).noalias() += g * xa;
        y.tail(w).noalias() = g.transpose() * xn;
        y.tail(w).noalias() += c * xa;
      });
    } else {
      // Gram over columns, embedded in N^c and written in the eigenbasis U
      // of H = W^T W:  P (diag(h) + Z^T Z) P, Z = Y U, P = I - Q^T Q,
      // Q = rows of U belonging to A.
      const Eigen::MatrixXd Z = Y * basis_;
      Eigen::MatrixXd Q(w, K);
      for (int a = 0; a < w; ++a) Q.row(a) = basis_.row(pos[a]);
      Eigen::VectorXd p(K), tmp(w);
      ev = detail::lanczos_top2(K, [&](const auto& x, Eigen::VectorXd& y) {
        tmp.noalias() = Q * x;
        p = x;
        p.noalias() -= Q.transpose() * tmp;
        tmp.noalias() = Z * p;
        y = eigenvalues_.cwiseProduct(p);
        y.noalias() += Z.transpose() * tmp;
        tmp.noalias() = Q * y;
        y.noalias() -= Q.transpose() * tmp;
      });
    }
    if (!(ev.second > detail::kGramFallbackRatio * ev.first)) {
      const Eigen::VectorXd s =
          singular_values(cross_similarity(*R_, detail::merged_sorted(inside_, other)));
      return {s(0), s(1)};
    }
    return {std::sqrt(ev.first), std::sqrt(ev.second)};
  }

  // Builds the eigenbasis up front. Without it, top2() decides on its own
  // when the basis pays off and must not be called concurrently.
  void prepare() {
    if (needs_basis_ && basis_.size() == 0) build_basis();
  }

  double sigma2(std::span<const int> other) const { return top2(other).second; }
  double value(std::span<const int> other) const { return sigma2(other); }

  // Lower bound on sigma2(other): by interlacing, the second singular value
  // of the two rows R[{p, q}, (N u A)^c] for any p in N, q in A.
  double bound(std::span<const int> other) const {
    // Columns of (N u A)^c are those of N^c minus the positions of A.
    std::vector<int> gone;
    gone.reserve(other.size());
    for (int a : other) gone.push_back(position_[a]);
    std::sort(gone.begin(), gone.end());
    if (outside_.size() < gone.size() + 2) return 0.0;

    // Any two rows of the union give a lower bound; try a few spread-out
    // rows of N against one row of A and keep the best.
    const std::size_t n = inside_.size();
    std::array<int, 3> picks = {inside_[0], inside_[n / 2], inside_[n - 1]};
    const int k = n >= 3 ? 3 : static_cast<int>(n);
    if (n == 2) picks[1] = inside_[1];
    const int q = other.front();
    const Eigen::MatrixXd& R = *R_;
    auto for_columns = [&](auto&& body) {
      std::size_t g = 0;
      for (std::size_t b = 0; b < outside_.size(); ++b) {
        if (g < gone.size() && gone[g] == static_cast<int>(b)) {
          ++g;
          continue;
        }
        body(outside_[b]);
      }
    };
    double qq = 0.0;
    std::array<double, 3> pp{}, pq{};
    int count = 0;
    for_columns([&](int t) {
      const double rq = R(t, q);
      qq += rq * rq;
      for (int c = 0; c < k; ++c) {
        const double rp = R(t, picks[c]);
        pp[c] += rp * rp;
        pq[c] += rp * rq;
      }
      ++count;
    });
    // s1^2 s2^2 = pp qq - pq^2 and s1^2 <= pp + qq. The determinant is
    // formed from rounded sums, so subtract a bound on its rounding error;
    // pairs whose rows are nearly parallel then get bound 0 and are scored.
    const double eps = std::numeric_limits<double>::epsilon();
    const double slack = (4.0 * count + 16.0) * eps;
    double best = 0.0;
    for (int c = 0; c < k; ++c) {
      const double trace = (pp[c] + qq) * (1.0 + slack);
      const double det = pp[c] * qq - pq[c] * pq[c] - slack * pp[c] * qq;
      if (trace > 0.0 && det > 0.0) best = std::max(best, std::sqrt(det / trace));
    }
    return best;
  }

 private:
  // Unions scored before the basis is worth building go through Lanczos on
  // the explicit block.
  static constexpr int kDirectUses = 4;
  static constexpr int kDirectGram = 32;

  std::pair<double, double> direct_top2(const std::vector<int>& rows) const {
    const Eigen::MatrixXd M = cross_similarity(*R_, rows);
    const bool tall = M.rows() > M.cols();
    const int k = static_cast<int>(tall ? M.cols() : M.rows());
    detail::TopEigenvalues ev;
    if (k <= kDirectGram) {
      Eigen::MatrixXd G(k, k);
      if (tall)
        G.noalias() = M.transpose() * M;
      else
        G.noalias() = M * M.transpose();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
      ev.first = std::max(es.eigenvalues()(k - 1), 0.0);
      ev.second = std::max(es.eigenvalues()(k - 2), 0.0);
    } else {
      Eigen::VectorXd tmp(tall ? M.rows() : M.cols());
      ev = detail::lanczos_top2(k, [&](const auto& x, Eigen::VectorXd& y) {
      if (tall) {
        tmp.noalias() = M * x;
        y.noalias() = M.transpose() * tmp;
      } else {
        tmp.noalias() = M.transpose() * x;
        y.noalias() = M * tmp;
      }
      });
    }
    if (!(ev.second > detail::kGramFallbackRatio * ev.first)) {
      const Eigen::VectorXd s = singular_values(M);
      return {s(0), s(1)};
    }
    return {std::sqrt(ev.first), std::sqrt(ev.second)};
  }

  void build_basis() const {
    const Eigen::MatrixXd& R = *R_;
    Eigen::MatrixXd W(inside_.size(), outside_.size());
    for (std::size_t b = 0; b < outside_.size(); ++b)
      for (std::size_t a = 0; a < inside_.size(); ++a) W(a, b) = R(outside_[b], inside_[a]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        row_side_ ? Eigen::MatrixXd(W * W.transpose()) : Eigen::MatrixXd(W.transpose() * W));
    eigenvalues_ = es.eigenvalues().cwiseMax(0.0);
    basis_ = es.eigenvectors();
    if (row_side_) projected_ = basis_.transpose() * W;
  }

  const Eigen::MatrixXd* R_;
  std::vector<int> inside_, outside_, position_;
  bool row_side_ = true;
  bool needs_basis_ = false;
  mutable int direct_uses_ = 0;
  mutable Eigen::VectorXd eigenvalues_;
  mutable Eigen::MatrixXd basis_;
  mutable Eigen::MatrixXd projected_;  // U^T W, row side only
};

// ---------------------------------------------------------------------------
// Quartets

struct QuartetScore {
  int i, k, j, l;
  double value;
};

namespace detail {
inline void require_distinct(int i, int k, int j, int l, int m) {
  for (int v : {i, k, j, l}) require(v >= 0 && v < m, "quartet index out of range");
  require(i != k && i != j && i != l && k != j && k != l && j != l,
          "quartet indices must be distinct");
}
}  // namespace detail

// w(ik;jl) = R(i,j) R(k,l) - R(i,l) R(k,j)
inline QuartetScore quartet_determinant(const Eigen::MatrixXd& R, int i, int k, int j, int l) {
  detail::require_distinct(i, k, j, l, static_cast<int>(R.rows()));
  return {i, k, j, l, R(i, j) * R(k, l) - R(i, l) * R(k, j)};
}

inline QuartetScore quartet_determinant(const SimilarityMatrix& R, int i, int k, int j, int l) {
  return quartet_determinant(R.values(), i, k, j, l);
}

enum class QuartetPairing { ik_jl, ij_kl, il_kj };

struct FourPointVerdict {
  QuartetPairing pairing;
  double sum_ik_jl, sum_ij_kl, sum_il_kj;
};

// The pairing with the smallest pair-sum; the first listed wins ties.
inline FourPointVerdict four_point_check(const DistanceMatrix& D, int i, int k, int j, int l) {
  detail::require_distinct(i, k, j, l, D.size());
  FourPointVerdict v{QuartetPairing::ik_jl, D(i, k) + D(j, l), D(i, j) + D(k, l),
                     D(i, l) + D(k, j)};
  double best = v.sum_ik_jl;
  if (v.sum_ij_kl < best) {
    best = v.sum_ij_kl;
    v.pairing = QuartetPairing::ij_kl;
  }
  if (v.sum_il_kj < best) v.pairing = QuartetPairing::il_kj;
  return v;
}

namespace detail {

// max over i<k in C, j<l outside C of |w(ik;jl)|. Swapping i,k or j,l only
// flips the sign, so unordered pairs cover every quartet.
inline double max_quartet(const Eigen::MatrixXd& R, std::span<const int> inside,
                          std::span<const int> outside) {
  double best = 0.0;
  const std::size_t ni = inside.size(), no = outside.size();
  for (std::size_t a = 0; a < ni; ++a) {
    for (std::size_t b = a + 1; b < ni; ++b) {
      const int i = inside[a], k = inside[b];
      for (std::size_t c = 0; c < no; ++c) {
        const double rij = R(i, outside[c]), rkj = R(k, outside[c]);
        for (std::size_t e = c + 1; e < no; ++e) {
          const int l = outside[e];
          best = std::max(best, std::abs(rij * R(k, l) - R(i, l) * rkj));
        }
      }
    }
  }
  return best;
}

}  // namespace detail

// M(A,B): largest |w(ik;jl)| with i,k in A u B and j,l outside it.
inline double max_quartet_criterion(const Eigen::MatrixXd& R, std::span<const int> A,
                                    std::span<const int> B) {
  const int m = static_cast<int>(R.rows());
  detail::require(!A.empty() && !B.empty(), "subsets must be non-empty");
  auto C = detail::merged_sorted(A, B);
  detail::require(static_cast<int>(C.size()) <= m - 2, "|A u B| must be at most m-2");
  for (int i : C) detail::require(i >= 0 && i < m, "leaf index out of range");
  return detail::max_quartet(R, C, detail::complement_of_sorted(m, C));
}

inline double max_quartet_criterion(const SimilarityMatrix& R, std::span<const int> A,
                                    std::span<const int> B) {
  return max_quartet_criterion(R.values(), A, B);
}

// |4 s1^2 s2^2 - sum of w(ik;jl)^2| over ordered i != k in A u B and ordered
// j != l outside it. Zero for any matrix of rank at most two.
struct QuartetIdentity {
  double spectral;      // 4 s1^2 s2^2
  double quartet_sum;   // sum of w^2
  double residual() const { return std::abs(spectral - quartet_sum); }
};

inline QuartetIdentity quartet_identity(const Eigen::MatrixXd& R, std::span<const int> A,
                                        std::span<const int> B) {
  const int m = static_cast<int>(R.rows());
  detail::require(!A.empty() && !B.empty(), "subsets must be non-empty");
  auto C = detail::merged_sorted(A, B);
  detail::require(static_cast<int>(C.size()) <= m - 2, "|A u B| must be at most m-2");
  auto out = detail::complement_of_sorted(m, C);
  const Eigen::MatrixXd M = cross_similarity(R, C);
  const Eigen::VectorXd s = singular_values(M);
  QuartetIdentity q{};
  q.spectral = 4.0 * s(0) * s(0) * s(1) * s(1);
  for (std::size_t a = 0; a < C.size(); ++a)
    for (std::size_t b = a + 1; b < C.size(); ++b)
      for (std::size_t c = 0; c < out.size(); ++c)
        for (std::size_t e = c + 1; e < out.size(); ++e) {
          const double w = R(C[a], out[c]) * R(C[b], out[e]) - R(C[a], out[e]) * R(C[b], out[c]);
          q.quartet_sum += 4.0 * w * w;
        }
  return q;
}

inline double quartet_identity_residual(const SimilarityMatrix& R, std::span<const int> A,
                                        std::span<const int> B) {
  return quartet_identity(R.values(), A, B).residual();
}

// Same, but first checks that A and B are clans of `t`.
inline double quartet_identity_residual(const SimilarityMatrix& R, const Topology& t,
                                        std::span<const int> A, std::span<const int> B) {
  detail::require(is_clan(t, A), "A is not a clan of the tree");
  detail::require(is_clan(t, B), "B is not a clan of the tree");
  return quartet_identity_residual(R, A, B);
}

// ---------------------------------------------------------------------------
// Block structure of R^{A u B} for two clans A, B.

// Both sides of ||R^C||^4 - ||(R^C)^T R^C||^2
//   = sum_j sum_k (|R_j^A| |R_k^B| - |R_j^B| |R_k^A|)^2
// where the columns are grouped by the node of the path between the clans'
// attachment points that each outside leaf hangs from.
struct FrobeniusBlockIdentity {
  double lhs;
  double rhs;
  int blocks;
};

inline FrobeniusBlockIdentity frobenius_block_identity(const Topology& t, const Eigen::MatrixXd& R,
                                                       std::span<const int> A,
                                                       std::span<const int> B) {
  const int m = t.leaf_count();
  auto ca = find_clan_edge(t, LeafMask::of(m, A));
  auto cb = find_clan_edge(t, LeafMask::of(m, B));
  detail::require(ca.has_value() && cb.has_value(), "A and B must be clans");
  auto C = detail::merged_sorted(A, B);
  detail::require(static_cast<int>(C.size()) <= m - 1, "A u B must leave a leaf outside");
  auto outside = detail::complement_of_sorted(m, C);

  const auto path = t.path(ca->outside, cb->outside);

  // Walk from each outside leaf until the path is hit.
  std::vector<int> block_of_leaf(m, -1);
  for (int j : outside) {
    const auto hops = t.hops_from(j);
    int best = -1;
    for (std::size_t p = 0; p < path.size(); ++p)
      if (best < 0 || hops[path[p]] < hops[path[best]]) best = static_cast<int>(p);
    block_of_leaf[j] = best;
  }
  // Both sides are small differences of O(1) terms when sigma_2 is small,
  // so they are accumulated in long double.
  using Wide = long double;
  const int l = static_cast<int>(path.size());
  std::vector<Wide> norm_a(l, 0.0L), norm_b(l, 0.0L);
  for (int j : outside) {
    for (int i : A) norm_a[block_of_leaf[j]] += Wide(R(i, j)) * R(i, j);
    for (int i : B) norm_b[block_of_leaf[j]] += Wide(R(i, j)) * R(i, j);
  }
  int used = 0;
  for (int p = 0; p < l; ++p) {
    norm_a[p] = std::sqrt(norm_a[p]);
    norm_b[p] = std::sqrt(norm_b[p]);
    used += norm_a[p] > 0.0L || norm_b[p] > 0.0L;
  }
  // ||M||^4 - ||M^T M||^2 = 2 * sum of squared 2x2 minors (Lagrange).
  const Eigen::MatrixXd M = cross_similarity(R, C);
  Wide lhs = 0.0L, rhs = 0.0L;
  for (Eigen::Index p = 0; p < M.rows(); ++p)
    for (Eigen::Index q = p + 1; q < M.rows(); ++q)
      for (Eigen::Index j = 0; j < M.cols(); ++j)
        for (Eigen::Index k = j + 1; k < M.cols(); ++k) {
          const Wide minor = Wide(M(p, j)) * M(q, k) - Wide(M(p, k)) * M(q, j);
          lhs += 2.0L * minor * minor;
        }
  for (int j = 0; j < l; ++j)
    for (int k = 0; k < l; ++k) {
      const Wide v = norm_a[j] * norm_b[k] - norm_b[j] * norm_a[k];
      rhs += v * v;
    }
  FrobeniusBlockIdentity out{static_cast<double>(lhs), static_cast<double>(rhs), used};
  return out;
}

// Lower bound on sigma_2^2 for a matrix of rank at most two:
//   (||M||^4 - ||M^T M||^2) / (2 ||M||^2)
inline double rank2_sigma2_squared_bound(const Eigen::MatrixXd& M) {
  const double f2 = M.squaredNorm();
  if (f2 == 0.0) return 0.0;
  return 0.5 * (f2 * f2 - (M.transpose() * M).squaredNorm()) / f2;
}

}  // namespace snj
