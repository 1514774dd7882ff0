#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "snj/error.hpp"
#include "snj/rng.hpp"
#include "snj/tree.hpp"

namespace snj {

enum class TreeKind { caterpillar, perfect_binary, coalescent, birth_death, tight_example };

inline std::string to_string(TreeKind kind) {
  switch (kind) {
    case TreeKind::caterpillar: return "caterpillar";
    case TreeKind::perfect_binary: return "binary";
    case TreeKind::coalescent: return "coalescent";
    case TreeKind::birth_death: return "birth_death";
    case TreeKind::tight_example: return "tight";
  }
  return "unknown";
}

inline TreeKind tree_kind_from_string(const std::string& name) {
  if (name == "caterpillar") return TreeKind::caterpillar;
  if (name == "binary" || name == "perfect_binary") return TreeKind::perfect_binary;
  if (name == "coalescent") return TreeKind::coalescent;
  if (name == "birth_death" || name == "birth-death") return TreeKind::birth_death;
  if (name == "tight" || name == "tight_example") return TreeKind::tight_example;
  throw InvalidArgument("unknown tree kind '" + name + "'");
}

namespace detail {

inline std::vector<std::string> default_labels(int m) {
  std::vector<std::string> labels;
  labels.reserve(m);
  for (int i = 1; i <= m; ++i) labels.push_back("x" + std::to_string(i));
  return labels;
}

inline bool is_power_of_two(int m) { return m > 0 && (m & (m - 1)) == 0; }

inline void require_power_of_two(int m) {
  require(m >= 4 && is_power_of_two(m),
          "m must be a power of two (got " + std::to_string(m) + ")");
}

inline void require_affinity(double value, const char* name) {
  require(value > 0.0 && value < 1.0,
          std::string(name) + " must lie in (0,1), got " + std::to_string(value));
}

}  // namespace detail

// Internal nodes form a path; leaves x1..xm are attached in path order.
inline Topology caterpillar(int m) {
  detail::require(m >= 4, "caterpillar needs m >= 4");
  std::vector<Edge> edges;
  const int first = m;          // internal node ids m .. 2m-3
  const int last = 2 * m - 3;
  for (int h = first; h < last; ++h) edges.push_back({h, h + 1});
  edges.push_back({0, first});
  edges.push_back({1, first});
  for (int leaf = 2; leaf < m - 2; ++leaf) edges.push_back({leaf, first + leaf - 1});
  edges.push_back({m - 2, last});
  edges.push_back({m - 1, last});
  return Topology::from_edges(detail::default_labels(m), edges);
}

struct PerfectBinary {
  Topology topology;
  EdgeId central_edge;
};

namespace detail {

inline PerfectBinary build_perfect_binary(int m) {
  require_power_of_two(m);
  std::vector<Edge> edges;
  int next = m;
  auto build = [&](auto&& self, int lo, int hi) -> int {
    if (hi - lo == 1) return lo;
    const int node = next++;
    const int mid = (lo + hi) / 2;
    edges.push_back({node, self(self, lo, mid)});
    edges.push_back({node, self(self, mid, hi)});
    return node;
  };
  const int left = build(build, 0, m / 2);
  const int right = build(build, m / 2, m);
  edges.push_back({left, right});
  const EdgeId central = static_cast<EdgeId>(edges.size()) - 1;
  return {Topology::from_edges(default_labels(m), edges), central};
}

}  // namespace detail

// Two complete binary subtrees of m/2 leaves joined by a central edge.
inline Topology perfect_binary(int m) { return detail::build_perfect_binary(m).topology; }

// Uniform random merging of active lineages until three remain, which are
// then joined at a final internal node.
inline Topology coalescent(int m, std::uint64_t seed) {
  detail::require(m >= 4, "coalescent needs m >= 4");
  SplitMix64 rng(derive_seed(seed, {tag("coalescent"), static_cast<std::uint64_t>(m)}));
  std::vector<int> active(m);
  for (int i = 0; i < m; ++i) active[i] = i;
  std::vector<Edge> edges;
  int next = m;
  while (active.size() > 3) {
    const auto n = active.size();
    auto i = static_cast<std::size_t>(uniform_below(rng, n));
    auto j = static_cast<std::size_t>(uniform_below(rng, n - 1));
    if (j >= i) ++j;
    const int node = next++;
    edges.push_back({node, active[i]});
    edges.push_back({node, active[j]});
    active[std::min(i, j)] = node;
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(std::max(i, j)));
  }
  const int hub = next++;
  for (int a : active) edges.push_back({hub, a});
  return Topology::from_edges(detail::default_labels(m), edges);
}

// Forward birth-death process stopped when m lineages are alive. Runs that
// go extinct are restarted. Extinct lineages are pruned and the degree-2
// root suppressed.
inline Topology birth_death(int m, std::uint64_t seed, double birth_rate, double death_rate) {
  detail::require(m >= 4, "birth-death needs m >= 4");
  detail::require(death_rate >= 0.0, "death rate must be non-negative");
  detail::require(birth_rate > death_rate, "birth rate must exceed death rate");
  SplitMix64 rng(derive_seed(seed, {tag("birth_death"), static_cast<std::uint64_t>(m)}));
  const double p_birth = birth_rate / (birth_rate + death_rate);

  std::vector<std::vector<int>> children;
  std::vector<char> extinct;
  std::vector<int> alive;
  for (;;) {
    children.assign(3, {});
    extinct.assign(3, 0);
    children[0] = {1, 2};
    alive = {1, 2};
    while (!alive.empty() && static_cast<int>(alive.size()) < m) {
      const auto pick = static_cast<std::size_t>(uniform_below(rng, alive.size()));
      const int tip = alive[pick];
      if (uniform01(rng) < p_birth) {
        const int a = static_cast<int>(children.size());
        children.push_back({});
        children.push_back({});
        extinct.push_back(0);
        extinct.push_back(0);
        children[tip] = {a, a + 1};
        alive[pick] = a;
        alive.push_back(a + 1);
      } else {
        extinct[tip] = 1;
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(pick));
      }
    }
    if (static_cast<int>(alive.size()) == m) break;
  }

  // Prune to surviving lineages; unary nodes collapse onto their child.
  detail::RootedTree rt;
  auto prune = [&](auto&& self, int v) -> int {
    if (children[v].empty()) {
      return extinct[v] ? -1 : rt.add();
    }
    std::vector<int> kept;
    for (int c : children[v]) {
      int r = self(self, c);
      if (r >= 0) kept.push_back(r);
    }
    if (kept.empty()) return -1;
    if (kept.size() == 1) return kept[0];
    int node = rt.add();
    rt.nodes[node].children = kept;
    return node;
  };
  rt.root = prune(prune, 0);
  int label = 1;
  // Leaves labelled in pre-order so the labelling is deterministic.
  std::vector<int> stack{rt.root};
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    auto& node = rt.nodes[v];
    if (node.children.empty()) node.label = "x" + std::to_string(label++);
    for (auto it = node.children.rbegin(); it != node.children.rend(); ++it)
      stack.push_back(*it);
  }
  auto unrooted = detail::unroot(rt).topology;
  // Re-index so that leaf i carries label x(i+1).
  std::vector<int> leaf_of(m);
  for (int i = 0; i < m; ++i) leaf_of[std::stoi(unrooted.label(i).substr(1)) - 1] = i;
  std::vector<int> new_id(unrooted.node_count());
  for (int i = 0; i < m; ++i) new_id[leaf_of[i]] = i;
  for (int v = m; v < unrooted.node_count(); ++v) new_id[v] = v;
  std::vector<Edge> edges;
  for (const Edge& e : unrooted.edges()) edges.push_back({new_id[e.u], new_id[e.v]});
  return Topology::from_edges(detail::default_labels(m), edges);
}

inline EdgeAffinities assign_constant_affinity(const Topology& t, double delta) {
  detail::require_affinity(delta, "delta");
  return EdgeAffinities(std::vector<double>(t.edge_count(), delta));
}

// Lower clamp for heterogeneous affinities; the upper clamp is 1 - this.
inline constexpr double kAffinityClampEpsilon = 1e-6;

// Edge e gets clamp(delta * r_e) with r_e ~ Gamma(shape, scale 1/shape), so
// that E[r_e] = 1.
inline EdgeAffinities assign_gamma_affinity(const Topology& t, double delta, double shape,
                                            std::uint64_t seed) {
  detail::require_affinity(delta, "delta");
  detail::require(shape > 0.0, "gamma shape must be positive");
  std::mt19937_64 engine(derive_seed(seed, {tag("edge_gamma")}));
  std::gamma_distribution<double> gamma(shape, 1.0 / shape);
  std::vector<double> values(t.edge_count());
  for (auto& v : values) {
    v = std::clamp(delta * gamma(engine), kAffinityClampEpsilon, 1.0 - kAffinityClampEpsilon);
  }
  return EdgeAffinities(std::move(values));
}

// Perfect binary tree with affinity delta everywhere except xi on the
// central edge. `clan_a` and `clan_c` are one quarter of the leaves on each
// side of the central edge; their union is not a clan.
struct TightExample {
  Topology topology;
  EdgeAffinities affinities;
  LeafSet clan_a;
  LeafSet clan_c;
  EdgeId central_edge;
};

inline TightExample tight_example_tree(int m, double delta, double xi) {
  detail::require_power_of_two(m);
  detail::require_affinity(delta, "delta");
  detail::require_affinity(xi, "xi");
  auto pb = detail::build_perfect_binary(m);
  std::vector<double> values(pb.topology.edge_count(), delta);
  values[pb.central_edge] = xi;
  TightExample out{std::move(pb.topology), EdgeAffinities(std::move(values)), {}, {},
                   pb.central_edge};
  for (int i = 0; i < m / 4; ++i) out.clan_a.push_back(i);
  for (int i = m / 2; i < m / 2 + m / 4; ++i) out.clan_c.push_back(i);
  return out;
}

// Full description of one generated tree model.
struct GenSpec {
  TreeKind kind = TreeKind::caterpillar;
  int m = 8;
  std::uint64_t seed = 0;
  double birth_rate = 1.0;
  double death_rate = 0.5;
  double delta = 0.85;
  std::optional<double> xi;           // tight_example only
  std::optional<double> edge_gamma;   // per-edge Gamma heterogeneity shape
};

struct GeneratedTree {
  Topology topology;
  EdgeAffinities affinities;
  std::optional<std::pair<LeafSet, LeafSet>> clan_pair;  // tight_example only
};

inline GeneratedTree generate(const GenSpec& spec) {
  detail::require(spec.m >= 4, "m must be at least 4");
  detail::require_affinity(spec.delta, "delta");
  if (spec.kind == TreeKind::tight_example) {
    detail::require(spec.xi.has_value(), "tight example needs xi");
    auto te = tight_example_tree(spec.m, spec.delta, *spec.xi);
    return {std::move(te.topology), std::move(te.affinities),
            std::make_pair(std::move(te.clan_a), std::move(te.clan_c))};
  }
  Topology t;
  switch (spec.kind) {
    case TreeKind::caterpillar: t = caterpillar(spec.m); break;
    case TreeKind::perfect_binary: t = perfect_binary(spec.m); break;
    case TreeKind::coalescent: t = coalescent(spec.m, spec.seed); break;
    case TreeKind::birth_death:
      t = birth_death(spec.m, spec.seed, spec.birth_rate, spec.death_rate);
      break;
    case TreeKind::tight_example: break;
  }
  EdgeAffinities aff = spec.edge_gamma
                           ? assign_gamma_affinity(t, spec.delta, *spec.edge_gamma, spec.seed)
                           : assign_constant_affinity(t, spec.delta);
  return {std::move(t), std::move(aff), std::nullopt};
}

}  // namespace snj
