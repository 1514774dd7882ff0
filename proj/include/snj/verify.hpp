#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "snj/markov.hpp"
#include "snj/reconstruct.hpp"
#include "snj/rng.hpp"
#include "snj/spectral.hpp"
#include "snj/tree_gen.hpp"

namespace snj {

// Checks of the structural properties of population similarity matrices.
struct VerifyOptions {
  std::uint64_t seed = 0;
  double sigma_tolerance = 1e-10;  // relative, for rank and closed-form checks
  std::ostream* dump = nullptr;     // receives the offending matrix on failure
};

struct PropertyResult {
  explicit PropertyResult(std::string n) : name(std::move(n)) {}
  std::string name;
  bool passed = true;
  int checked = 0;
  double worst = 0.0;  // largest normalized violation seen
  std::string detail;
};

struct VerifyReport {
  std::vector<PropertyResult> properties;
  bool passed() const {
    return std::all_of(properties.begin(), properties.end(),
                       [](const PropertyResult& p) { return p.passed; });
  }
};

// Every clan of t (both sides of every edge), sorted.
inline std::vector<LeafSet> all_clans(const Topology& t) {
  auto splits = detail::edge_splits(t);
  std::vector<LeafSet> out;
  for (const auto& s : splits) {
    out.push_back(s.indices());
    out.push_back(s.complement().indices());
  }
  return out;
}

struct ClanPair {
  LeafSet a, b;
};

// Disjoint clan pairs leaving at least two leaves outside. With
// `non_adjacent`, only pairs whose union is not itself a clan.
inline std::vector<ClanPair> disjoint_clan_pairs(const Topology& t, bool non_adjacent) {
  auto clans = all_clans(t);
  const int m = t.leaf_count();
  std::vector<ClanPair> out;
  for (std::size_t x = 0; x < clans.size(); ++x) {
    const auto mx = LeafMask::of(m, clans[x]);
    for (std::size_t y = x + 1; y < clans.size(); ++y) {
      const auto my = LeafMask::of(m, clans[y]);
      if (mx.intersects(my)) continue;
      if (static_cast<int>(clans[x].size() + clans[y].size()) > m - 2) continue;
      auto u = mx;
      u |= my;
      if (non_adjacent && is_clan(t, u)) continue;
      out.push_back({clans[x], clans[y]});
    }
  }
  return out;
}

namespace detail {

struct VerifyTree {
  std::string name;
  Topology topology;
  Eigen::MatrixXd R;
};

// Two fixed shapes plus seeded random trees with heterogeneous affinities.
inline std::vector<VerifyTree> verify_trees(std::uint64_t seed) {
  std::vector<VerifyTree> out;
  auto add = [&](std::string name, Topology t, const EdgeAffinities& aff) {
    Eigen::MatrixXd R = population_similarity(t, aff).values();
    out.push_back({std::move(name), std::move(t), std::move(R)});
  };
  {
    auto t = caterpillar(12);
    add("caterpillar12", t, assign_constant_affinity(t, 0.85));
    auto b = perfect_binary(16);
    add("binary16", b, assign_constant_affinity(b, 0.8));
  }
  for (std::uint64_t k = 0; k < 4; ++k) {
    const auto s = derive_seed(seed, {tag("verify"), k});
    auto t = k % 2 ? birth_death(14, s, 1.0, 0.5) : coalescent(14, s);
    add((k % 2 ? "birth_death14#" : "coalescent14#") + std::to_string(k), t,
        assign_gamma_affinity(t, 0.8, 2.0, s));
  }
  return out;
}

inline std::vector<ClanPair> sample_pairs(std::vector<ClanPair> pairs, std::size_t k,
                                          std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  std::shuffle(pairs.begin(), pairs.end(), engine);
  if (pairs.size() > k) pairs.resize(k);
  return pairs;
}

inline void note(PropertyResult& r, double violation, bool ok, const std::string& where) {
  ++r.checked;
  r.worst = std::max(r.worst, violation);
  if (!ok && r.passed) {
    r.passed = false;
    r.detail = where;
  }
}

inline std::string describe(const ClanPair& p) {
  auto list = [](const LeafSet& s) {
    std::string out = "{";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "}";
  };
  return list(p.a) + " u " + list(p.b);
}

}  // namespace detail

inline VerifyReport verify_properties(const VerifyOptions& options = {}) {
  const double tol = options.sigma_tolerance;
  const auto trees = detail::verify_trees(options.seed);
  VerifyReport report;

  PropertyResult rank1{"rank_one_clans"};
  PropertyResult rank2{"rank_two_clan_pairs"};
  PropertyResult quartet{"quartet_identity"};
  PropertyResult frob{"frobenius_block_identity"};
  PropertyResult bound{"rank_two_sigma2_bound"};
  for (std::size_t ti = 0; ti < trees.size(); ++ti) {
    const auto& [name, t, R] = trees[ti];
    const int m = t.leaf_count();
    for (const auto& c : all_clans(t)) {
      if (c.size() < 2 || static_cast<int>(c.size()) > m - 2) continue;
      const auto s = singular_values(cross_similarity(R, c));
      const double ratio = s(1) / s(0);
      detail::note(rank1, ratio / tol, ratio <= tol, name);
    }
    const auto pair_seed = derive_seed(options.seed, {tag("pairs"), ti});
    for (const auto& p : detail::sample_pairs(disjoint_clan_pairs(t, false), 40, pair_seed)) {
      const auto C = detail::merged_sorted(p.a, p.b);
      const Eigen::MatrixXd M = cross_similarity(R, C);
      const auto s = singular_values(M);
      const bool adjacent = is_clan(t, C);
      const double r3 = s.size() > 2 ? s(2) / s(0) : 0.0;
      const bool ok = r3 <= tol && (adjacent || s(1) > 0.0);
      detail::note(rank2, r3 / tol, ok, name + " " + detail::describe(p));

      const auto q = quartet_identity(R, p.a, p.b);
      const double qrel = q.residual() / (1.0 + q.quartet_sum);
      detail::note(quartet, qrel / 1e-8, qrel <= 1e-8, name + " " + detail::describe(p));

      const double b = rank2_sigma2_squared_bound(M);
      const double excess = b - s(1) * s(1);
      detail::note(bound, std::max(0.0, excess) / 1e-12, excess <= 1e-12,
                   name + " " + detail::describe(p));
    }
    for (const auto& p : detail::sample_pairs(disjoint_clan_pairs(t, true), 40, pair_seed + 1)) {
      const auto f = frobenius_block_identity(t, R, p.a, p.b);
      const double scale = std::max(f.lhs, f.rhs);
      const double rel = scale > 0.0 ? std::abs(f.lhs - f.rhs) / scale : 0.0;
      detail::note(frob, rel / tol, rel <= tol, name + " " + detail::describe(p));
    }
  }

  // sigma_2 of the union of the two quarter clans against the closed form
  // (m/4) delta^(2 log2(m/2)) (1 - xi).
  PropertyResult tight{"tight_example"};
  const std::pair<double, double> params[] = {{0.9, 0.8}, {0.6, 0.95}};
  for (int m : {4, 8, 16}) {
    for (auto [delta, xi] : params) {
      auto te = tight_example_tree(m, delta, xi);
      const Eigen::MatrixXd R = population_similarity(te.topology, te.affinities).values();
      const auto C = detail::merged_sorted(te.clan_a, te.clan_c);
      const Eigen::MatrixXd M = cross_similarity(R, C);
      const double got = second_singular_value(M);
      const double want = m / 4.0 * std::pow(delta, 2.0 * std::log2(m / 2.0)) * (1.0 - xi);
      const double rel = std::abs(got - want) / want;
      const std::string where = "m=" + std::to_string(m) + " delta=" +
                                detail::format_shortest(delta) +
                                " xi=" + detail::format_shortest(xi);
      const bool was_passing = tight.passed;
      detail::note(tight, rel / tol, rel <= tol, where);
      if (was_passing && !tight.passed) {
        tight.detail += " got " + detail::format_shortest(got) + " want " +
                        detail::format_shortest(want);
        if (options.dump) {
          Eigen::IOFormat fmt(Eigen::FullPrecision, 0, " ", "\n");
          *options.dump << "tight example " << where << ": R[C, C^c] =\n"
                        << M.format(fmt) << '\n';
        }
      }
    }
  }

  // SNJ on exact population matrices returns the true tree.
  PropertyResult consistency{"population_consistency"};
  for (const auto& [name, t, R] : trees) {
    SimilarityMatrix S(t.labels(), R);
    const int rf = rf_distance(t, snj(S).topology);
    detail::note(consistency, rf, rf == 0, name + " rf=" + std::to_string(rf));
  }

  report.properties = {rank1, rank2, tight, quartet, frob, bound, consistency};
  return report;
}

inline void write_verify_report(std::ostream& os, const VerifyReport& report) {
  for (const auto& p : report.properties) {
    os << (p.passed ? "PASS " : "FAIL ") << p.name << " checked=" << p.checked
       << " worst=" << detail::format_shortest(p.worst);
    if (!p.passed) os << " first failure: " << p.detail;
    os << '\n';
  }
}

}  // namespace snj
