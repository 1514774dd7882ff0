#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <compare>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "snj/error.hpp"

namespace snj {

using NodeId = int;
using EdgeId = int;

// Sorted, duplicate-free list of leaf indices.
using LeafSet = std::vector<int>;

// Fixed-width bitset over leaf indices [0, size).
class LeafMask {
 public:
  LeafMask() = default;
  explicit LeafMask(int size) : size_(size), words_((size + 63) / 64, 0) {}

  static LeafMask of(int size, std::span<const int> leaves) {
    LeafMask mask(size);
    for (int leaf : leaves) {
      detail::require(leaf >= 0 && leaf < size,
                      "leaf index " + std::to_string(leaf) + " out of range");
      mask.set(leaf);
    }
    return mask;
  }

  int size() const noexcept { return size_; }
  void set(int i) { words_[i >> 6] |= (std::uint64_t{1} << (i & 63)); }
  bool test(int i) const { return (words_[i >> 6] >> (i & 63)) & 1U; }

  int count() const noexcept {
    int c = 0;
    for (auto w : words_) c += std::popcount(w);
    return c;
  }
  bool none() const noexcept { return count() == 0; }

  LeafMask complement() const {
    LeafMask out(size_);
    for (std::size_t w = 0; w < words_.size(); ++w) out.words_[w] = ~words_[w];
    out.trim();
    return out;
  }

  LeafMask& operator|=(const LeafMask& other) {
    for (std::size_t w = 0; w < words_.size(); ++w) words_[w] |= other.words_[w];
    return *this;
  }

  bool intersects(const LeafMask& other) const {
    for (std::size_t w = 0; w < words_.size(); ++w)
      if (words_[w] & other.words_[w]) return true;
    return false;
  }

  LeafSet indices() const {
    LeafSet out;
    for (int i = 0; i < size_; ++i)
      if (test(i)) out.push_back(i);
    return out;
  }

  friend bool operator==(const LeafMask&, const LeafMask&) = default;
  friend auto operator<=>(const LeafMask&, const LeafMask&) = default;

 private:
  void trim() {
    if (size_ % 64 != 0 && !words_.empty())
      words_.back() &= (std::uint64_t{1} << (size_ % 64)) - 1;
  }

  int size_ = 0;
  std::vector<std::uint64_t> words_;
};

struct Edge {
  NodeId u;
  NodeId v;
};

// Unrooted bifurcating tree. Nodes [0, m) are the terminal nodes in label
// order; nodes [m, 2m-2) are internal. Immutable once built.
class Topology {
 public:
  struct Incidence {
    NodeId node;
    EdgeId edge;
  };

  Topology() = default;

  // Validates: m >= 3 unique labels, 2m-2 nodes, 2m-3 edges, leaves of
  // degree 1, internal nodes of degree 3, connected.
  static Topology from_edges(std::vector<std::string> labels,
                             const std::vector<Edge>& edges) {
    Topology t;
    const int m = static_cast<int>(labels.size());
    detail::require(m >= 3, "a topology needs at least 3 terminal nodes");
    {
      std::vector<std::string> sorted = labels;
      std::sort(sorted.begin(), sorted.end());
      auto dup = std::adjacent_find(sorted.begin(), sorted.end());
      detail::require(dup == sorted.end(), "duplicate leaf label '" +
                                               (dup == sorted.end() ? "" : *dup) + "'");
    }
    const int n_nodes = 2 * m - 2;
    detail::require(static_cast<int>(edges.size()) == 2 * m - 3,
                    "expected " + std::to_string(2 * m - 3) + " edges, got " +
                        std::to_string(edges.size()));
    t.labels_ = std::move(labels);
    t.adjacency_.assign(n_nodes, {});
    t.edges_.reserve(edges.size());
    for (const Edge& e : edges) {
      detail::require(e.u >= 0 && e.u < n_nodes && e.v >= 0 && e.v < n_nodes &&
                          e.u != e.v,
                      "edge endpoint out of range");
      Edge canon{std::min(e.u, e.v), std::max(e.u, e.v)};
      const EdgeId id = static_cast<EdgeId>(t.edges_.size());
      t.edges_.push_back(canon);
      t.adjacency_[canon.u].push_back({canon.v, id});
      t.adjacency_[canon.v].push_back({canon.u, id});
    }
    for (NodeId v = 0; v < n_nodes; ++v) {
      const int want = v < m ? 1 : 3;
      detail::require(t.degree(v) == want,
                      "node " + std::to_string(v) + " has degree " +
                          std::to_string(t.degree(v)) + ", expected " +
                          std::to_string(want));
    }
    // With |E| = |V| - 1, connectivity implies acyclicity.
    std::vector<char> seen(n_nodes, 0);
    std::vector<NodeId> stack{0};
    seen[0] = 1;
    int reached = 1;
    while (!stack.empty()) {
      NodeId v = stack.back();
      stack.pop_back();
      for (auto [w, e] : t.adjacency_[v]) {
        if (!seen[w]) {
          seen[w] = 1;
          ++reached;
          stack.push_back(w);
        }
      }
    }
    detail::require(reached == n_nodes, "edge list is not connected");
    return t;
  }

  int leaf_count() const noexcept { return static_cast<int>(labels_.size()); }
  int node_count() const noexcept { return static_cast<int>(adjacency_.size()); }
  int edge_count() const noexcept { return static_cast<int>(edges_.size()); }

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::string& label(int leaf) const { return labels_.at(leaf); }

  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const Edge& edge(EdgeId e) const { return edges_.at(e); }

  std::span<const Incidence> neighbors(NodeId v) const { return adjacency_.at(v); }
  int degree(NodeId v) const { return static_cast<int>(adjacency_.at(v).size()); }
  bool is_leaf(NodeId v) const noexcept { return v < leaf_count(); }
  bool is_internal_edge(EdgeId e) const {
    return !is_leaf(edges_.at(e).u) && !is_leaf(edges_.at(e).v);
  }

  std::optional<EdgeId> find_edge(NodeId a, NodeId b) const {
    for (auto [w, e] : adjacency_.at(a))
      if (w == b) return e;
    return std::nullopt;
  }

  // Leaf index for a label, or -1.
  int leaf_index(std::string_view label) const {
    for (int i = 0; i < leaf_count(); ++i)
      if (labels_[i] == label) return i;
    return -1;
  }

  // Nodes on the unique path from `from` to `to`, both included.
  std::vector<NodeId> path(NodeId from, NodeId to) const {
    std::vector<NodeId> parent(node_count(), -1);
    std::deque<NodeId> queue{from};
    parent[from] = from;
    while (!queue.empty()) {
      NodeId v = queue.front();
      queue.pop_front();
      if (v == to) break;
      for (auto [w, e] : adjacency_[v]) {
        if (parent[w] < 0) {
          parent[w] = v;
          queue.push_back(w);
        }
      }
    }
    std::vector<NodeId> out{to};
    while (out.back() != from) out.push_back(parent[out.back()]);
    std::reverse(out.begin(), out.end());
    return out;
  }

  // Hop counts from `source` to every node.
  std::vector<int> hops_from(NodeId source) const {
    std::vector<int> dist(node_count(), -1);
    std::deque<NodeId> queue{source};
    dist[source] = 0;
    while (!queue.empty()) {
      NodeId v = queue.front();
      queue.pop_front();
      for (auto [w, e] : adjacency_[v]) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          queue.push_back(w);
        }
      }
    }
    return dist;
  }

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<Incidence>> adjacency_;
  std::vector<Edge> edges_;
};

// Per-edge affinity r(e) in (0,1), indexed by EdgeId of the owning topology.
class EdgeAffinities {
 public:
  EdgeAffinities() = default;
  explicit EdgeAffinities(std::vector<double> values) : values_(std::move(values)) {
    for (std::size_t e = 0; e < values_.size(); ++e) {
      detail::require(values_[e] > 0.0 && values_[e] < 1.0,
                      "edge affinity " + std::to_string(values_[e]) + " on edge " +
                          std::to_string(e) + " is outside (0,1)");
    }
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](EdgeId e) const { return values_.at(e); }
  const std::vector<double>& values() const noexcept { return values_; }

  double delta() const { return *std::min_element(values_.begin(), values_.end()); }
  double xi() const { return *std::max_element(values_.begin(), values_.end()); }

  void check_matches(const Topology& t) const {
    detail::require(static_cast<int>(values_.size()) == t.edge_count(),
                    "affinity count " + std::to_string(values_.size()) +
                        " does not match edge count " + std::to_string(t.edge_count()));
  }

 private:
  std::vector<double> values_;
};

// Split of the leaf set induced by one edge. `side_a` holds leaf 0.
struct Bipartition {
  LeafMask side_a;

  LeafMask side_b() const { return side_a.complement(); }
  bool is_trivial() const {
    const int a = side_a.count();
    return a <= 1 || side_a.size() - a <= 1;
  }

  friend bool operator==(const Bipartition&, const Bipartition&) = default;
  friend auto operator<=>(const Bipartition&, const Bipartition&) = default;
};

namespace detail {

// For each edge, the leaves on the side away from leaf `leaf_map`-image 0.
// `leaf_map[i]` renames leaf i of `t` (used to compare trees whose labels are
// ordered differently).
inline std::vector<LeafMask> edge_splits(const Topology& t,
                                         std::span<const int> leaf_map = {}) {
  const int m = t.leaf_count();
  auto leaf_id = [&](int leaf) { return leaf_map.empty() ? leaf : leaf_map[leaf]; };
  int anchor = 0;
  if (!leaf_map.empty()) {
    for (int i = 0; i < m; ++i)
      if (leaf_map[i] == 0) anchor = i;
  }
  std::vector<LeafMask> below(t.node_count(), LeafMask(m));
  std::vector<LeafMask> split(t.edge_count(), LeafMask(m));
  // Iterative post-order from the anchor leaf.
  struct Frame {
    NodeId node;
    NodeId parent;
    EdgeId via;
    std::size_t next;
  };
  std::vector<Frame> stack{{anchor, -1, -1, 0}};
  while (!stack.empty()) {
    Frame& f = stack.back();
    auto nbrs = t.neighbors(f.node);
    if (f.next < nbrs.size()) {
      auto [w, e] = nbrs[f.next++];
      if (w != f.parent) stack.push_back({w, f.node, e, 0});
      continue;
    }
    if (t.is_leaf(f.node)) below[f.node].set(leaf_id(f.node));
    if (f.parent >= 0) {
      split[f.via] = below[f.node];
      below[f.parent] |= below[f.node];
    }
    stack.pop_back();
  }
  return split;
}

}  // namespace detail

// The m-3 nontrivial bipartitions, one per internal edge.
inline std::set<Bipartition> bipartitions(const Topology& t) {
  std::set<Bipartition> out;
  if (t.leaf_count() < 4) return out;
  auto splits = detail::edge_splits(t);
  for (EdgeId e = 0; e < t.edge_count(); ++e) {
    if (t.is_internal_edge(e)) out.insert(Bipartition{splits[e].complement()});
  }
  return out;
}

// Robinson-Foulds distance over nontrivial bipartitions.
inline int rf_distance(const Topology& t1, const Topology& t2) {
  const int m = t1.leaf_count();
  detail::require(t2.leaf_count() == m, "RF distance needs identical leaf sets");
  std::vector<int> map2(m);
  for (int i = 0; i < m; ++i) {
    map2[i] = t1.leaf_index(t2.label(i));
    detail::require(map2[i] >= 0,
                    "RF distance needs identical leaf sets; '" + t2.label(i) +
                        "' is missing from the first tree");
  }
  auto collect = [m](const Topology& t, std::span<const int> map) {
    std::vector<LeafMask> out;
    if (m < 4) return out;
    auto splits = detail::edge_splits(t, map);
    for (EdgeId e = 0; e < t.edge_count(); ++e)
      if (t.is_internal_edge(e)) out.push_back(splits[e].complement());
    std::sort(out.begin(), out.end());
    return out;
  };
  auto a = collect(t1, {});
  auto b = collect(t2, map2);
  std::vector<LeafMask> diff;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(),
                                std::back_inserter(diff));
  return static_cast<int>(diff.size());
}

// The edge that cuts `subset` off from the rest of the tree, if any.
struct ClanEdge {
  EdgeId edge;
  NodeId inside;   // endpoint on the subset's side
  NodeId outside;  // endpoint on the complement's side
};

inline std::optional<ClanEdge> find_clan_edge(const Topology& t, const LeafMask& subset) {
  const int m = t.leaf_count();
  const int k = subset.count();
  detail::require(subset.size() == m, "leaf mask size does not match the tree");
  detail::require(k >= 1 && k <= m - 1,
                  "a clan must be a non-empty proper subset of the leaves");
  auto splits = detail::edge_splits(t);
  // splits[e] is the side away from leaf 0; find which endpoint that is.
  for (EdgeId e = 0; e < t.edge_count(); ++e) {
    const bool away = splits[e] == subset;
    const bool toward = !away && splits[e].complement() == subset;
    if (!away && !toward) continue;
    auto [u, v] = t.edge(e);
    // The endpoint farther from leaf 0 carries splits[e].
    auto hops = t.hops_from(0);
    NodeId far = hops[u] > hops[v] ? u : v;
    NodeId near = far == u ? v : u;
    return away ? ClanEdge{e, far, near} : ClanEdge{e, near, far};
  }
  return std::nullopt;
}

inline bool is_clan(const Topology& t, const LeafMask& subset) {
  return find_clan_edge(t, subset).has_value();
}

inline bool is_clan(const Topology& t, std::span<const int> subset) {
  return is_clan(t, LeafMask::of(t.leaf_count(), subset));
}

// Max over internal edges of the larger endpoint-to-nearest-taxon hop count,
// each endpoint looking only into its own side.
inline int tree_depth(const Topology& t) {
  detail::require(t.leaf_count() >= 4, "tree depth needs at least 4 terminal nodes");
  auto nearest_leaf = [&](NodeId start, NodeId blocked) {
    std::vector<int> dist(t.node_count(), -1);
    std::deque<NodeId> queue{start};
    dist[start] = 0;
    dist[blocked] = 0;  // never entered
    while (!queue.empty()) {
      NodeId v = queue.front();
      queue.pop_front();
      if (t.is_leaf(v)) return dist[v];
      for (auto [w, e] : t.neighbors(v)) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          queue.push_back(w);
        }
      }
    }
    return std::numeric_limits<int>::max();
  };
  int depth = 0;
  for (EdgeId e = 0; e < t.edge_count(); ++e) {
    if (!t.is_internal_edge(e)) continue;
    auto [u, v] = t.edge(e);
    depth = std::max({depth, nearest_leaf(u, v), nearest_leaf(v, u)});
  }
  return depth;
}

// Maximum leaf-to-leaf hop count.
inline int tree_diameter(const Topology& t) {
  auto first = t.hops_from(0);
  NodeId far = 0;
  for (int i = 0; i < t.leaf_count(); ++i)
    if (first[i] > first[far]) far = i;
  auto second = t.hops_from(far);
  int best = 0;
  for (int i = 0; i < t.leaf_count(); ++i) best = std::max(best, second[i]);
  return best;
}

// Internal nodes adjacent to exactly two leaves.
inline int cherry_count(const Topology& t) {
  int count = 0;
  for (NodeId v = t.leaf_count(); v < t.node_count(); ++v) {
    int leaves = 0;
    for (auto [w, e] : t.neighbors(v)) leaves += t.is_leaf(w) ? 1 : 0;
    if (leaves == 2) ++count;
  }
  return count;
}

// ---------------------------------------------------------------------------
// Rooted intermediate form shared by the Newick reader and the generators.

namespace detail {

struct RootedNode {
  std::vector<int> children;
  std::string label;
  std::optional<double> value;  // annotation on the edge to the parent
  std::size_t position = 0;     // source offset, for diagnostics
};

struct RootedTree {
  std::vector<RootedNode> nodes;
  int root = 0;

  int add(std::string label = {}, std::optional<double> value = std::nullopt) {
    nodes.push_back({{}, std::move(label), value, 0});
    return static_cast<int>(nodes.size()) - 1;
  }
};

struct Unrooted {
  Topology topology;
  std::optional<std::vector<double>> edge_values;
};

// Converts a rooted binary tree (root of degree 2 or 3) to a Topology.
// A degree-2 root is suppressed; the merged edge's value is the product of
// the two values it replaces, which keeps affinities multiplicative.
inline Unrooted unroot(const RootedTree& rt) {
  const auto& nodes = rt.nodes;
  auto fail = [](const std::string& what, std::size_t pos) -> void {
    throw ParseError(what, pos);
  };
  const auto& root = nodes.at(rt.root);
  if (root.children.size() < 2 || root.children.size() > 3)
    fail("root has " + std::to_string(root.children.size()) +
             " children; expected 2 or 3",
         root.position);

  // Leaves in pre-order; internal nodes after.
  std::vector<int> order;
  std::vector<int> stack{rt.root};
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    order.push_back(v);
    const auto& ch = nodes[v].children;
    for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
  }
  std::vector<std::string> labels;
  std::vector<int> id(nodes.size(), -1);
  for (int v : order) {
    const auto& node = nodes[v];
    if (node.children.empty()) {
      if (node.label.empty()) fail("terminal node without a label", node.position);
      id[v] = static_cast<int>(labels.size());
      labels.push_back(node.label);
    } else if (v != rt.root && node.children.size() != 2) {
      if (node.children.size() == 1) fail("node with a single child", node.position);
      fail("node of degree " + std::to_string(node.children.size() + 1) +
               " (only bifurcating trees are supported)",
           node.position);
    }
  }
  const int m = static_cast<int>(labels.size());
  if (m < 3) fail("a tree needs at least 3 terminal nodes", root.position);
  {
    std::unordered_map<std::string, std::size_t> seen;
    for (int v : order) {
      if (!nodes[v].children.empty()) continue;
      auto [it, fresh] = seen.emplace(nodes[v].label, nodes[v].position);
      if (!fresh) fail("duplicate leaf label '" + nodes[v].label + "'", nodes[v].position);
    }
  }
  const bool suppress_root = root.children.size() == 2;
  int next = m;
  for (int v : order) {
    if (nodes[v].children.empty()) continue;
    if (v == rt.root && suppress_root) continue;
    id[v] = next++;
  }
  std::vector<Edge> edges;
  std::vector<std::optional<double>> values;
  for (int v : order) {
    if (v == rt.root) continue;
    for (int c : nodes[v].children) {
      edges.push_back({id[v], id[c]});
      values.push_back(nodes[c].value);
    }
  }
  for (int c : root.children) {
    if (!suppress_root) {
      edges.push_back({id[rt.root], id[c]});
      values.push_back(nodes[c].value);
    }
  }
  if (suppress_root) {
    int a = root.children[0], b = root.children[1];
    edges.push_back({id[a], id[b]});
    const auto& va = nodes[a].value;
    const auto& vb = nodes[b].value;
    values.push_back(va && vb ? std::optional<double>(*va * *vb) : std::nullopt);
  }
  Unrooted out{Topology::from_edges(std::move(labels), edges), std::nullopt};
  if (std::all_of(values.begin(), values.end(), [](auto& x) { return x.has_value(); })) {
    std::vector<double> vals;
    vals.reserve(values.size());
    for (auto& x : values) vals.push_back(*x);
    out.edge_values = std::move(vals);
  }
  return out;
}

class NewickReader {
 public:
  explicit NewickReader(std::string_view text) : text_(text) {}

  RootedTree read() {
    RootedTree rt;
    skip_space();
    rt.root = subtree(rt);
    skip_space();
    if (peek() == ':') {
      ++pos_;
      (void)number();
    }
    skip_space();
    expect(';');
    skip_space();
    if (pos_ != text_.size()) throw ParseError("trailing characters after ';'", pos_);
    return rt;
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void expect(char c) {
    if (peek() != c) {
      throw ParseError(std::string("expected '") + c + "'" +
                           (pos_ < text_.size() ? std::string(", found '") + peek() + "'"
                                                : std::string(", found end of input")),
                       pos_);
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos_;
      } else if (c == '[') {
        auto close = text_.find(']', pos_);
        if (close == std::string_view::npos) throw ParseError("unterminated comment", pos_);
        pos_ = close + 1;
      } else {
        break;
      }
    }
  }

  static bool is_plain(char c) {
    return c != '\0' && std::string_view("()[]':;, \t\n\r").find(c) == std::string_view::npos;
  }

  std::string label() {
    skip_space();
    std::string out;
    if (peek() == '\'') {
      const std::size_t start = pos_++;
      while (true) {
        if (pos_ >= text_.size()) throw ParseError("unterminated quoted label", start);
        char c = text_[pos_++];
        if (c == '\'') {
          if (peek() == '\'') {
            out.push_back('\'');
            ++pos_;
          } else {
            break;
          }
        } else {
          out.push_back(c);
        }
      }
      return out;
    }
    while (is_plain(peek())) out.push_back(text_[pos_++]);
    return out;
  }

  double number() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           std::string_view("+-.0123456789eE").find(text_[pos_]) != std::string_view::npos)
      ++pos_;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (ec != std::errc() || ptr != text_.data() + pos_ || start == pos_)
      throw ParseError("malformed branch annotation", start);
    return value;
  }

  int subtree(RootedTree& rt) {
    skip_space();
    const std::size_t start = pos_;
    int node = rt.add();
    rt.nodes[node].position = start;
    if (peek() == '(') {
      ++pos_;
      while (true) {
        int child = subtree(rt);
        rt.nodes[node].children.push_back(child);
        skip_space();
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        expect(')');
        break;
      }
      (void)label();  // internal labels are ignored
    } else {
      rt.nodes[node].label = label();
      if (rt.nodes[node].label.empty()) {
        if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
        throw ParseError(std::string("unexpected character '") + peek() + "'", pos_);
      }
    }
    skip_space();
    if (peek() == ':') {
      ++pos_;
      rt.nodes[node].value = number();
    }
    return node;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

inline bool needs_quotes(const std::string& label) {
  return label.find_first_of("()[]':;, \t\n\r") != std::string::npos;
}

inline std::string quote_label(const std::string& label) {
  if (!needs_quotes(label)) return label;
  std::string out = "'";
  for (char c : label) {
    out.push_back(c);
    if (c == '\'') out.push_back('\'');
  }
  out.push_back('\'');
  return out;
}

inline std::string format_shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

struct ParsedNewick {
  Topology topology;
  std::optional<EdgeAffinities> affinities;  // present when every edge is annotated
};

// Parses a Newick string. Branch annotations, when present on every edge, are
// read as affinities; a bifurcating root is suppressed and its two edge values
// multiplied.
inline ParsedNewick parse_newick_annotated(std::string_view text) {
  auto rooted = detail::NewickReader(text).read();
  auto unrooted = detail::unroot(rooted);
  ParsedNewick out{std::move(unrooted.topology), std::nullopt};
  if (unrooted.edge_values) out.affinities = EdgeAffinities(std::move(*unrooted.edge_values));
  return out;
}

inline Topology parse_newick(std::string_view text) {
  auto rooted = detail::NewickReader(text).read();
  return detail::unroot(rooted).topology;
}

// Canonical Newick. The pseudo-root is the internal node adjacent to the
// leaf whose label sorts first; children are ordered by the smallest label
// they contain. Affinities, when given, are written as branch annotations.
inline std::string write_newick(const Topology& t, const EdgeAffinities* affinities = nullptr) {
  if (affinities) affinities->check_matches(t);
  const int m = t.leaf_count();
  int first_leaf = 0;
  for (int i = 1; i < m; ++i)
    if (t.label(i) < t.label(first_leaf)) first_leaf = i;
  const NodeId root = t.neighbors(first_leaf)[0].node;

  // Smallest label below each node, rooted at `root`.
  std::vector<NodeId> parent(t.node_count(), -1);
  std::vector<EdgeId> parent_edge(t.node_count(), -1);
  std::vector<NodeId> order{root};
  parent[root] = root;
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (auto [w, e] : t.neighbors(order[i])) {
      if (parent[w] < 0) {
        parent[w] = order[i];
        parent_edge[w] = e;
        order.push_back(w);
      }
    }
  }
  std::vector<const std::string*> min_label(t.node_count(), nullptr);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeId v = *it;
    if (t.is_leaf(v)) min_label[v] = &t.label(v);
    if (v != root) {
      auto& p = min_label[parent[v]];
      if (!p || *min_label[v] < *p) p = min_label[v];
    }
  }
  std::string out;
  auto emit = [&](auto&& self, NodeId v) -> void {
    if (t.is_leaf(v)) {
      out += detail::quote_label(t.label(v));
    } else {
      std::vector<NodeId> kids;
      for (auto [w, e] : t.neighbors(v))
        if (w != parent[v] || v == root) kids.push_back(w);
      std::sort(kids.begin(), kids.end(),
                [&](NodeId a, NodeId b) { return *min_label[a] < *min_label[b]; });
      out.push_back('(');
      for (std::size_t i = 0; i < kids.size(); ++i) {
        if (i) out.push_back(',');
        self(self, kids[i]);
      }
      out.push_back(')');
    }
    if (affinities && v != root) {
      out.push_back(':');
      out += detail::format_shortest((*affinities)[parent_edge[v]]);
    }
  };
  emit(emit, root);
  out.push_back(';');
  return out;
}

}  // namespace snj
