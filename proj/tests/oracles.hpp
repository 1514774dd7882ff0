#pragma once

// Brute-force reference computations shared by the tests. They work from
// the raw edge list only and avoid the library's own traversal helpers.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "snj/tree.hpp"

namespace oracle {

using Adjacency = std::vector<std::vector<std::pair<int, int>>>;  // (node, edge)

inline Adjacency adjacency(const snj::Topology& t) {
  Adjacency adj(t.node_count());
  for (int e = 0; e < t.edge_count(); ++e) {
    adj[t.edge(e).u].push_back({t.edge(e).v, e});
    adj[t.edge(e).v].push_back({t.edge(e).u, e});
  }
  return adj;
}

// Leaves reachable from `start` without crossing `cut`.
inline std::set<int> side(const snj::Topology& t, const Adjacency& adj, int start, int cut) {
  std::set<int> leaves;
  std::vector<char> seen(t.node_count(), 0);
  std::vector<int> stack{start};
  seen[start] = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    if (v < t.leaf_count()) leaves.insert(v);
    for (auto [w, e] : adj[v]) {
      if (e == cut || seen[w]) continue;
      seen[w] = 1;
      stack.push_back(w);
    }
  }
  return leaves;
}

// Nontrivial splits as sets of labels on the side not holding `anchor`.
inline std::set<std::set<std::string>> label_splits(const snj::Topology& t,
                                                    const std::string& anchor) {
  auto adj = adjacency(t);
  std::set<std::set<std::string>> out;
  const int m = t.leaf_count();
  for (int e = 0; e < t.edge_count(); ++e) {
    auto s = side(t, adj, t.edge(e).u, e);
    std::set<std::string> names;
    for (int leaf : s) names.insert(t.label(leaf));
    if (names.count(anchor)) {
      std::set<std::string> other;
      for (int i = 0; i < m; ++i)
        if (!names.count(t.label(i))) other.insert(t.label(i));
      names = other;
    }
    const int k = static_cast<int>(names.size());
    if (k >= 2 && m - k >= 2) out.insert(names);
  }
  return out;
}

inline int rf(const snj::Topology& a, const snj::Topology& b) {
  const std::string anchor = *std::min_element(a.labels().begin(), a.labels().end());
  auto sa = label_splits(a, anchor), sb = label_splits(b, anchor);
  int diff = 0;
  for (const auto& s : sa) diff += sb.count(s) ? 0 : 1;
  for (const auto& s : sb) diff += sa.count(s) ? 0 : 1;
  return diff;
}

// True iff removing a single edge separates exactly `subset`.
inline bool clan(const snj::Topology& t, const std::set<int>& subset) {
  auto adj = adjacency(t);
  for (int e = 0; e < t.edge_count(); ++e) {
    if (side(t, adj, t.edge(e).u, e) == subset) return true;
    if (side(t, adj, t.edge(e).v, e) == subset) return true;
  }
  return false;
}

inline std::vector<int> bfs_hops(const snj::Topology& t, int source) {
  auto adj = adjacency(t);
  std::vector<int> dist(t.node_count(), -1);
  std::queue<int> q;
  q.push(source);
  dist[source] = 0;
  while (!q.empty()) {
    int v = q.front();
    q.pop();
    for (auto [w, e] : adj[v])
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        q.push(w);
      }
  }
  return dist;
}

inline int diameter(const snj::Topology& t) {
  int best = 0;
  for (int i = 0; i < t.leaf_count(); ++i) {
    auto d = bfs_hops(t, i);
    for (int j = 0; j < t.leaf_count(); ++j) best = std::max(best, d[j]);
  }
  return best;
}

// Product of edge values along the path between two nodes, by DFS.
inline double path_product(const snj::Topology& t, const std::vector<double>& edge_value, int from,
                           int to) {
  auto adj = adjacency(t);
  std::vector<double> prod(t.node_count(), -1.0);
  std::vector<int> stack{from};
  prod[from] = 1.0;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (auto [w, e] : adj[v])
      if (prod[w] < 0.0) {
        prod[w] = prod[v] * edge_value[e];
        stack.push_back(w);
      }
  }
  return prod[to];
}

inline Eigen::MatrixXd path_products(const snj::Topology& t, const std::vector<double>& edge_value) {
  const int m = t.leaf_count();
  Eigen::MatrixXd R = Eigen::MatrixXd::Ones(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) R(i, j) = path_product(t, edge_value, i, j);
  return R;
}

// Singular values of a small dense matrix via the eigenvalues of its Gram
// matrix in long double Jacobi sweeps; independent of Eigen's SVD.
inline std::vector<long double> singular_values(const Eigen::MatrixXd& M) {
  const bool rows = M.rows() <= M.cols();
  const int k = static_cast<int>(rows ? M.rows() : M.cols());
  std::vector<std::vector<long double>> G(k, std::vector<long double>(k, 0.0L));
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      long double s = 0.0L;
      const int n = static_cast<int>(rows ? M.cols() : M.rows());
      for (int t = 0; t < n; ++t) {
        long double x = rows ? M(a, t) : M(t, a);
        long double y = rows ? M(b, t) : M(t, b);
        s += x * y;
      }
      G[a][b] = s;
    }
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0.0L;
    for (int p = 0; p < k; ++p)
      for (int q = p + 1; q < k; ++q) off += G[p][q] * G[p][q];
    if (off < 1e-60L) break;
    for (int p = 0; p < k; ++p)
      for (int q = p + 1; q < k; ++q) {
        if (G[p][q] == 0.0L) continue;
        long double theta = (G[q][q] - G[p][p]) / (2.0L * G[p][q]);
        long double tt = (theta >= 0 ? 1.0L : -1.0L) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0L));
        long double c = 1.0L / std::sqrt(tt * tt + 1.0L), s = tt * c;
        for (int r = 0; r < k; ++r) {
          long double gp = G[r][p], gq = G[r][q];
          G[r][p] = c * gp - s * gq;
          G[r][q] = s * gp + c * gq;
        }
        for (int r = 0; r < k; ++r) {
          long double gp = G[p][r], gq = G[q][r];
          G[p][r] = c * gp - s * gq;
          G[q][r] = s * gp + c * gq;
        }
      }
  }
  std::vector<long double> out(k);
  for (int a = 0; a < k; ++a) out[a] = std::sqrt(std::max(0.0L, G[a][a]));
  std::sort(out.rbegin(), out.rend());
  return out;
}

// Rows `subset` (ascending) against the remaining leaves.
inline Eigen::MatrixXd block(const Eigen::MatrixXd& R, std::vector<int> subset) {
  std::sort(subset.begin(), subset.end());
  std::vector<int> rest;
  for (int j = 0; j < R.rows(); ++j)
    if (!std::binary_search(subset.begin(), subset.end(), j)) rest.push_back(j);
  Eigen::MatrixXd M(subset.size(), rest.size());
  for (std::size_t a = 0; a < subset.size(); ++a)
    for (std::size_t b = 0; b < rest.size(); ++b) M(a, b) = R(subset[a], rest[b]);
  return M;
}

}  // namespace oracle
