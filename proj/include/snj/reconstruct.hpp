#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <optional>
#include <tuple>
#include <type_traits>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "snj/error.hpp"
#include "snj/parallel.hpp"
#include "snj/similarity_types.hpp"
#include "snj/spectral.hpp"
#include "snj/tree.hpp"

namespace snj {

// Subset identifiers: leaves are 0..m-1; the subset formed at merge step s
// is m+s, which is also the id of its internal node in the output topology.
struct MergeCandidate {
  int a, b;
  double value;
};

struct MergeEvent {
  int step = 0;
  int subset_a = 0;
  int subset_b = 0;
  int merged = 0;
  LeafSet leaves;
  double value = 0.0;
  // Gap to the runner-up below kNearTieGap.
  bool near_tie = false;
  // Every active pair's criterion value; filled only on request.
  std::vector<MergeCandidate> candidates;
};

struct MergeTrace {
  std::vector<MergeEvent> events;
  std::array<int, 3> final_subsets{};
  std::vector<std::string> warnings;
};

struct Reconstruction {
  Topology topology;
  MergeTrace trace;
};

struct ReconstructOptions {
  bool record_candidates = false;
  int threads = 1;
};

inline constexpr double kNearTieGap = 1e-12;

// One JSON object per merge event.
inline void write_trace_jsonl(std::ostream& os, const MergeTrace& trace) {
  for (const auto& e : trace.events) {
    os << "{\"step\":" << e.step << ",\"subsets\":[" << e.subset_a << ',' << e.subset_b
       << "],\"merged\":" << e.merged << ",\"leaves\":[";
    for (std::size_t i = 0; i < e.leaves.size(); ++i) os << (i ? "," : "") << e.leaves[i];
    os << "],\"value\":" << detail::format_shortest(e.value);
    if (e.near_tie) os << ",\"near_tie\":true";
    if (!e.candidates.empty()) {
      os << ",\"candidates\":[";
      for (std::size_t i = 0; i < e.candidates.size(); ++i) {
        const auto& c = e.candidates[i];
        os << (i ? "," : "") << '[' << c.a << ',' << c.b << ','
           << detail::format_shortest(c.value) << ']';
      }
      os << ']';
    }
    os << "}\n";
  }
}

namespace detail {

template <class Scorer>
concept HasLowerBound = requires(const Scorer& s, const LeafSet& a) {
  { s.bound(a) } -> std::convertible_to<double>;
};

template <class Scorer>
concept HasPrepare = requires(Scorer& s) { s.prepare(); };

// Greedy agglomeration shared by SNJ and max-quartet NJ. The criterion
// scores the union of two active leaf subsets and the smallest score merges,
// ties going to the lexicographically smallest pair of subset ids.
//
// `criterion.pair(A, B)` scores the initial singletons. `criterion.against(N)`
// returns a scorer for the pairs (A, N) created when N is formed: `value(A)`
// is the score, and an optional `bound(A)` a cheap lower bound on it. With
// bounds, a pair is scored exactly only once its bound reaches the current
// minimum, which selects the same pair as scoring everything. Scores of
// untouched pairs are kept across steps.
template <class Criterion>
Reconstruction agglomerate(const std::vector<std::string>& labels, Criterion&& criterion,
                           const ReconstructOptions& options) {
  const int m = static_cast<int>(labels.size());
  require(m >= 4, "reconstruction needs at least 4 leaves");
  const int n_nodes = 2 * m - 2;
  std::vector<LeafSet> leaves(n_nodes);
  for (int i = 0; i < m; ++i) leaves[i] = {i};
  std::vector<int> active(m);
  for (int i = 0; i < m; ++i) active[i] = i;
  // score(a, b) for a < b; exact(a, b) == 0 marks a lower bound.
  Eigen::MatrixXd score = Eigen::MatrixXd::Zero(n_nodes, n_nodes);
  Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> exact =
      Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic>::Ones(n_nodes, n_nodes);

  using Scorer = std::decay_t<decltype(criterion.against(leaves[0]))>;
  constexpr bool kBounded = HasLowerBound<Scorer>;
  const bool lazy = kBounded && !options.record_candidates;
  std::vector<std::optional<Scorer>> scorers(n_nodes);

  {
    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < m; ++a)
      for (int b = a + 1; b < m; ++b) pairs.emplace_back(a, b);
    std::vector<double> values(pairs.size());
    parallel_for(static_cast<int>(pairs.size()), options.threads, [&](int p) {
      values[p] = criterion.pair(leaves[pairs[p].first], leaves[pairs[p].second]);
    });
    for (std::size_t p = 0; p < pairs.size(); ++p)
      score(pairs[p].first, pairs[p].second) = values[p];
  }
  // Pairs (a, b) with a < b that still hold a bound are scored by b's scorer.
  auto resolve = [&](int a, int b) {
    score(a, b) = scorers[b]->value(leaves[a]);
    exact(a, b) = 1;
  };

  Reconstruction out;
  std::vector<Edge> edges;
  edges.reserve(2 * m - 3);
  for (int step = 0; static_cast<int>(active.size()) > 3; ++step) {
    // Exact minimum: a bound that undercuts every score is resolved first.
    // `active` stays sorted, so scans visit pairs in lexicographic order.
    int best_a = -1, best_b = -1;
    double best = std::numeric_limits<double>::infinity();
    for (;;) {
      best = std::numeric_limits<double>::infinity();
      for (std::size_t x = 0; x < active.size(); ++x)
        for (std::size_t y = x + 1; y < active.size(); ++y) {
          const double v = score(active[x], active[y]);
          if (v < best) {
            best = v;
            best_a = active[x];
            best_b = active[y];
          }
        }
      if (exact(best_a, best_b)) break;
      resolve(best_a, best_b);
    }
    require(std::isfinite(best), "merge criterion is not finite");

    // Values within kNearTieGap of the minimum are ties, so that rounding
    // never decides between mathematically equal criteria (complementary
    // unions at the last step, for one). The first tied pair in scan order
    // has the smallest ids.
    MergeEvent event;
    int tied = 0;
    for (std::size_t x = 0; x < active.size(); ++x)
      for (std::size_t y = x + 1; y < active.size(); ++y) {
        const int a = active[x], b = active[y];
        if (!exact(a, b) && score(a, b) - best < kNearTieGap) resolve(a, b);
        if (score(a, b) - best < kNearTieGap && tied++ == 0) {
          best_a = a;
          best_b = b;
        }
        if (options.record_candidates) event.candidates.push_back({a, b, score(a, b)});
      }
    best = score(best_a, best_b);

    const int merged = m + step;
    leaves[merged] = merged_sorted(leaves[best_a], leaves[best_b]);
    edges.push_back({merged, best_a});
    edges.push_back({merged, best_b});
    std::erase(active, best_a);
    std::erase(active, best_b);
    scorers[best_a].reset();
    scorers[best_b].reset();

    event.step = step;
    event.subset_a = best_a;
    event.subset_b = best_b;
    event.merged = merged;
    event.leaves = leaves[merged];
    event.value = best;
    event.near_tie = tied > 1;
    if (event.near_tie) {
      out.trace.warnings.push_back("step " + std::to_string(step) +
                                   ": criterion gap to runner-up below 1e-12");
    }
    out.trace.events.push_back(std::move(event));

    if (active.size() >= 3) {  // another merge follows
      scorers[merged].emplace(criterion.against(leaves[merged]));
      if constexpr (HasPrepare<Scorer>) {
        if (!lazy) scorers[merged]->prepare();
      }
      const Scorer& scorer = *scorers[merged];
      std::vector<double> values(active.size());
      parallel_for(static_cast<int>(active.size()), options.threads, [&](int p) {
        if constexpr (kBounded) {
          if (lazy) {
            values[p] = scorer.bound(leaves[active[p]]);
            return;
          }
        }
        values[p] = scorer.value(leaves[active[p]]);
      });
      for (std::size_t p = 0; p < active.size(); ++p) {
        score(active[p], merged) = values[p];
        exact(active[p], merged) = !lazy;
      }
    }
    active.push_back(merged);
  }
  const int hub = n_nodes - 1;
  for (int i = 0; i < 3; ++i) {
    out.trace.final_subsets[i] = active[i];
    edges.push_back({hub, active[i]});
  }
  out.topology = Topology::from_edges(labels, edges);
  return out;
}

inline void require_similarity(const SimilarityMatrix& R) {
  const int m = R.size();
  require(m >= 4, "reconstruction needs at least 4 leaves");
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) {
      const double v = R(i, j);
      require(v >= 0.0 && v <= 1.0, "similarity between '" + R.labels()[i] + "' and '" +
                                        R.labels()[j] + "' is outside [0,1]");
      require(v == R(j, i), "similarity matrix is not symmetric at ('" + R.labels()[i] +
                                "', '" + R.labels()[j] + "')");
    }
}

}  // namespace detail

// Spectral neighbor joining: merge the pair of subsets whose union has the
// smallest second singular value sigma_2(R^{A u B}).
inline Reconstruction snj(const SimilarityMatrix& R, const ReconstructOptions& options = {}) {
  detail::require_similarity(R);
  struct Criterion {
    const Eigen::MatrixXd& R;
    double pair(const LeafSet& a, const LeafSet& b) const {
      return detail::block_top2(R, detail::merged_sorted(a, b)).second;
    }
    UnionSpectrum against(const LeafSet& merged) const { return UnionSpectrum(R, merged); }
  };
  return detail::agglomerate(R.labels(), Criterion{R.values()}, options);
}

// Agglomeration driven by the largest quartet determinant across the split.
inline Reconstruction max_quartet_nj(const SimilarityMatrix& R,
                                     const ReconstructOptions& options = {}) {
  detail::require_similarity(R);
  struct Criterion {
    const Eigen::MatrixXd& R;
    double pair(const LeafSet& a, const LeafSet& b) const {
      auto inside = detail::merged_sorted(a, b);
      return detail::max_quartet(R, inside,
                                 detail::complement_of_sorted(static_cast<int>(R.rows()), inside));
    }
    struct Scorer {
      const Criterion* criterion;
      LeafSet merged;
      double value(const LeafSet& other) const { return criterion->pair(other, merged); }
    };
    Scorer against(const LeafSet& merged) const { return {this, merged}; }
  };
  return detail::agglomerate(R.labels(), Criterion{R.values()}, options);
}

// Classic neighbor joining. With r active nodes,
//   Q(i,j) = (r-2) D(i,j) - S_i - S_j,  S_i = sum_k D(i,k)
// and the merged node u gets D(k,u) = (D(k,i) + D(k,j) - D(i,j)) / 2.
inline Reconstruction nj(const DistanceMatrix& D, const ReconstructOptions& options = {}) {
  const int m = D.size();
  detail::require(m >= 4, "reconstruction needs at least 4 leaves");
  for (int i = 0; i < m; ++i) {
    detail::require(D(i, i) == 0.0, "distance matrix diagonal must be zero");
    for (int j = i + 1; j < m; ++j) {
      detail::require(std::isfinite(D(i, j)), "distance between '" + D.labels()[i] + "' and '" +
                                                  D.labels()[j] + "' is not finite");
      detail::require(D(i, j) == D(j, i), "distance matrix is not symmetric");
    }
  }
  const int n_nodes = 2 * m - 2;
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(n_nodes, n_nodes);
  dist.topLeftCorner(m, m) = D.values();
  std::vector<LeafSet> leaves(n_nodes);
  for (int i = 0; i < m; ++i) leaves[i] = {i};
  std::vector<int> active(m);
  for (int i = 0; i < m; ++i) active[i] = i;

  Reconstruction out;
  std::vector<Edge> edges;
  std::vector<double> sums(n_nodes, 0.0);
  for (int step = 0; static_cast<int>(active.size()) > 3; ++step) {
    const int r = static_cast<int>(active.size());
    for (int a : active) {
      double s = 0.0;
      for (int b : active) s += dist(a, b);
      sums[a] = s;
    }
    auto q = [&](int a, int b) { return (r - 2) * dist(a, b) - sums[a] - sums[b]; };
    double best = std::numeric_limits<double>::infinity();
    for (int x = 0; x < r; ++x)
      for (int y = x + 1; y < r; ++y) best = std::min(best, q(active[x], active[y]));
    // Ties within kNearTieGap go to the smallest ids, as in agglomerate().
    int best_a = -1, best_b = -1, tied = 0;
    MergeEvent event;
    for (int x = 0; x < r; ++x) {
      for (int y = x + 1; y < r; ++y) {
        const int a = active[x], b = active[y];
        const double v = q(a, b);
        if (options.record_candidates) event.candidates.push_back({a, b, v});
        if (v - best < kNearTieGap && tied++ == 0) {
          best_a = a;
          best_b = b;
        }
      }
    }
    best = q(best_a, best_b);
    const int merged = m + step;
    std::erase(active, best_a);
    std::erase(active, best_b);
    for (int k : active) {
      const double v = 0.5 * (dist(k, best_a) + dist(k, best_b) - dist(best_a, best_b));
      dist(k, merged) = v;
      dist(merged, k) = v;
    }
    active.push_back(merged);
    leaves[merged] = detail::merged_sorted(leaves[best_a], leaves[best_b]);
    edges.push_back({merged, best_a});
    edges.push_back({merged, best_b});

    event.step = step;
    event.subset_a = best_a;
    event.subset_b = best_b;
    event.merged = merged;
    event.leaves = leaves[merged];
    event.value = best;
    event.near_tie = tied > 1;
    if (event.near_tie) {
      out.trace.warnings.push_back("step " + std::to_string(step) +
                                   ": criterion gap to runner-up below 1e-12");
    }
    out.trace.events.push_back(std::move(event));
  }
  const int hub = n_nodes - 1;
  for (int i = 0; i < 3; ++i) {
    out.trace.final_subsets[i] = active[i];
    edges.push_back({hub, active[i]});
  }
  out.topology = Topology::from_edges(D.labels(), edges);
  return out;
}

}  // namespace snj
