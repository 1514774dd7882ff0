#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "snj/error.hpp"
#include "snj/parallel.hpp"
#include "snj/rng.hpp"
#include "snj/similarity_types.hpp"
#include "snj/tree.hpp"

namespace snj {

// d x d column-stochastic matrix; entry (a, b) = Pr[child = a | parent = b].
class TransitionMatrix {
 public:
  TransitionMatrix() = default;
  explicit TransitionMatrix(Eigen::MatrixXd p) : p_(std::move(p)) {
    detail::require(p_.rows() == p_.cols() && p_.rows() >= 2,
                    "transition matrix must be square with d >= 2");
    for (Eigen::Index b = 0; b < p_.cols(); ++b) {
      detail::require((p_.col(b).array() >= 0.0).all() && (p_.col(b).array() <= 1.0).all(),
                      "transition matrix entries must lie in [0,1]");
      detail::require(std::abs(p_.col(b).sum() - 1.0) <= 1e-12,
                      "transition matrix columns must sum to 1");
    }
  }

  int states() const noexcept { return static_cast<int>(p_.rows()); }
  const Eigen::MatrixXd& matrix() const noexcept { return p_; }
  double operator()(int a, int b) const { return p_(a, b); }
  double determinant() const { return p_.determinant(); }

 private:
  Eigen::MatrixXd p_;
};

// Largest admissible Jukes-Cantor mutation probability, exclusive.
inline double jc_theta_limit(int d) { return static_cast<double>(d - 1) / d; }

inline TransitionMatrix jc_transition(double theta, int d) {
  detail::require(d >= 2, "JC model needs d >= 2");
  detail::require(theta >= 0.0 && theta < jc_theta_limit(d),
                  "JC theta must lie in [0, (d-1)/d), got " + std::to_string(theta));
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(d, d, theta / (d - 1));
  p.diagonal().setConstant(1.0 - theta);
  return TransitionMatrix(std::move(p));
}

// (1 - d*theta/(d-1))^(d-1)
inline double affinity_from_theta(double theta, int d) {
  detail::require(d >= 2, "JC model needs d >= 2");
  detail::require(theta >= 0.0 && theta < jc_theta_limit(d),
                  "JC theta must lie in [0, (d-1)/d), got " + std::to_string(theta));
  return std::pow(1.0 - d * theta / (d - 1), d - 1);
}

// Inverse of affinity_from_theta.
inline double theta_from_affinity(double r, int d) {
  detail::require(d >= 2, "JC model needs d >= 2");
  detail::require(r > 0.0 && r <= 1.0, "affinity must lie in (0,1], got " + std::to_string(r));
  return jc_theta_limit(d) * (1.0 - std::pow(r, 1.0 / (d - 1)));
}

// Markov random field on a tree, stored as transition matrices in both
// directions of every edge.
struct MarkovTreeModel {
  Topology topology;
  int d = 4;
  // For edge (u, v) with u < v: toward_v = P_{v|u}, toward_u = P_{u|v}.
  std::vector<TransitionMatrix> toward_v;
  std::vector<TransitionMatrix> toward_u;
  NodeId root_node = 0;
  Eigen::VectorXd root_distribution;
  // Present for Jukes-Cantor models; enables per-site rate scaling.
  std::optional<std::vector<double>> jc_affinity;

  const TransitionMatrix& transition(EdgeId e, NodeId child) const {
    return child == topology.edge(e).v ? toward_v.at(e) : toward_u.at(e);
  }
};

// Jukes-Cantor model whose edge determinants equal the given affinities.
inline MarkovTreeModel model_from_affinities(const Topology& t, const EdgeAffinities& aff, int d) {
  aff.check_matches(t);
  MarkovTreeModel model;
  model.topology = t;
  model.d = d;
  model.root_node = t.leaf_count();  // first internal node
  model.root_distribution = Eigen::VectorXd::Constant(d, 1.0 / d);
  std::vector<double> r(t.edge_count());
  for (EdgeId e = 0; e < t.edge_count(); ++e) {
    r[e] = aff[e];
    auto p = jc_transition(theta_from_affinity(aff[e], d), d);
    model.toward_v.push_back(p);
    model.toward_u.push_back(p);
  }
  model.jc_affinity = std::move(r);
  return model;
}

// Observed states, m rows (terminal nodes) by n columns (sites), values in
// 1..d.
class CharacterMatrix {
 public:
  CharacterMatrix() = default;
  CharacterMatrix(std::vector<std::string> labels, int sites, int states)
      : labels_(std::move(labels)), n_(sites), d_(states),
        data_(labels_.size() * static_cast<std::size_t>(sites), 1) {
    detail::require(!labels_.empty() && sites >= 1, "character matrix must be non-empty");
    detail::require(states >= 2 && states <= 255, "state count must lie in [2,255]");
  }

  int rows() const noexcept { return static_cast<int>(labels_.size()); }
  int sites() const noexcept { return n_; }
  int states() const noexcept { return d_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  std::uint8_t operator()(int row, int site) const {
    return data_[static_cast<std::size_t>(row) * n_ + site];
  }
  void set(int row, int site, int state) {
    detail::require(state >= 1 && state <= d_, "state out of range");
    data_[static_cast<std::size_t>(row) * n_ + site] = static_cast<std::uint8_t>(state);
  }
  std::span<const std::uint8_t> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * n_, static_cast<std::size_t>(n_)};
  }

 private:
  std::vector<std::string> labels_;
  int n_ = 0;
  int d_ = 0;
  std::vector<std::uint8_t> data_;
};

// Per-site rate multipliers.
struct SiteRates {
  std::vector<double> rates;
};

// Rates r_s ~ Gamma(shape, scale 1/shape), mean one.
inline SiteRates gamma_site_rates(int n, double shape, std::uint64_t seed) {
  detail::require(n >= 1, "site count must be positive");
  detail::require(shape > 0.0, "gamma shape must be positive");
  std::mt19937_64 engine(derive_seed(seed, {tag("site_gamma")}));
  std::gamma_distribution<double> gamma(shape, 1.0 / shape);
  SiteRates out;
  out.rates.resize(n);
  for (auto& r : out.rates) {
    do {
      r = gamma(engine);
    } while (!(r > 0.0));
  }
  return out;
}

namespace detail {

struct SimStep {
  NodeId parent;
  NodeId child;
  EdgeId edge;
};

inline std::vector<SimStep> traversal(const Topology& t, NodeId root) {
  std::vector<SimStep> steps;
  std::vector<char> seen(t.node_count(), 0);
  std::vector<NodeId> queue{root};
  seen[root] = 1;
  for (std::size_t i = 0; i < queue.size(); ++i) {
    for (auto [w, e] : t.neighbors(queue[i])) {
      if (!seen[w]) {
        seen[w] = 1;
        steps.push_back({queue[i], w, e});
        queue.push_back(w);
      }
    }
  }
  return steps;
}

template <class Engine>
int sample_column(const Eigen::MatrixXd& cumulative, int column, Engine& engine) {
  const double u = uniform01(engine);
  const int d = static_cast<int>(cumulative.rows());
  for (int a = 0; a < d - 1; ++a)
    if (u < cumulative(a, column)) return a;
  return d - 1;
}

// Jukes-Cantor step: keep with probability 1 - theta, else a uniform other state.
template <class Engine>
int sample_jc(int parent_state, double theta, int d, Engine& engine) {
  if (uniform01(engine) >= theta) return parent_state;
  int s = static_cast<int>(uniform_below(engine, static_cast<std::uint64_t>(d - 1)));
  return s >= parent_state ? s + 1 : s;
}

}  // namespace detail

// Draws n i.i.d. site patterns. Site s uses its own RNG stream keyed by
// (seed, s), so the output does not depend on `threads`. With site rates,
// the per-site affinity of an edge is its affinity raised to r_s.
inline CharacterMatrix simulate(const MarkovTreeModel& model, int n, std::uint64_t seed,
                                const SiteRates* site_rates = nullptr, int threads = 1) {
  detail::require(n >= 1, "site count must be positive");
  const Topology& t = model.topology;
  const int d = model.d;
  const int m = t.leaf_count();
  if (site_rates) {
    detail::require(static_cast<int>(site_rates->rates.size()) == n,
                    "site rate vector length must equal n");
    detail::require(model.jc_affinity.has_value(),
                    "site rates are only supported for Jukes-Cantor models");
  }
  const auto steps = detail::traversal(t, model.root_node);
  Eigen::VectorXd root_cdf(d);
  {
    double acc = 0.0;
    for (int a = 0; a < d; ++a) root_cdf[a] = (acc += model.root_distribution[a]);
  }
  std::vector<Eigen::MatrixXd> cumulative;
  std::vector<double> base_theta;
  if (model.jc_affinity) {
    for (const auto& s : steps) base_theta.push_back(theta_from_affinity((*model.jc_affinity)[s.edge], d));
  } else {
    for (const auto& s : steps) {
      Eigen::MatrixXd c = model.transition(s.edge, s.child).matrix();
      for (int a = 1; a < d; ++a) c.row(a) += c.row(a - 1);
      cumulative.push_back(std::move(c));
    }
  }

  CharacterMatrix X(t.labels(), n, d);
  // Leaf rows are written by site; distinct sites touch distinct cells.
  parallel_for(n, threads, [&](int site) {
    SplitMix64 engine(derive_seed(seed, {tag("site"), static_cast<std::uint64_t>(site)}));
    std::vector<int> state(t.node_count(), 0);
    {
      const double u = uniform01(engine);
      int a = 0;
      while (a < d - 1 && u >= root_cdf[a]) ++a;
      state[model.root_node] = a;
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
      const auto& s = steps[i];
      if (model.jc_affinity) {
        double theta = base_theta[i];
        if (site_rates) {
          const double r = site_rates->rates[site];
          if (r != 1.0) theta = theta_from_affinity(std::pow((*model.jc_affinity)[s.edge], r), d);
        }
        state[s.child] = detail::sample_jc(state[s.parent], theta, d, engine);
      } else {
        state[s.child] = detail::sample_column(cumulative[i], state[s.parent], engine);
      }
    }
    for (int leaf = 0; leaf < m; ++leaf) X.set(leaf, site, state[leaf] + 1);
  });
  return X;
}

// R(i,j) = product of edge affinities on the path i -> j; R(i,i) = 1.
inline SimilarityMatrix population_similarity(const Topology& t, const EdgeAffinities& aff) {
  aff.check_matches(t);
  const int m = t.leaf_count();
  Eigen::MatrixXd R = Eigen::MatrixXd::Identity(m, m);
  std::vector<double> prod(t.node_count());
  std::vector<NodeId> queue;
  std::vector<char> seen(t.node_count());
  for (int i = 0; i < m; ++i) {
    std::fill(seen.begin(), seen.end(), 0);
    queue.assign(1, i);
    seen[i] = 1;
    prod[i] = 1.0;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      NodeId v = queue[q];
      for (auto [w, e] : t.neighbors(v)) {
        if (seen[w]) continue;
        seen[w] = 1;
        prod[w] = prod[v] * aff[e];
        queue.push_back(w);
      }
    }
    for (int j = 0; j < m; ++j)
      if (j != i) R(i, j) = prod[j];
  }
  // Exact symmetry regardless of multiplication order.
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) R(j, i) = R(i, j);
  return SimilarityMatrix(t.labels(), std::move(R));
}

// ---------------------------------------------------------------------------
// Text format:
//   m n d
//   #labels l1 l2 ... lm
//   m rows of n space-separated states in 1..d

inline void write_character_matrix(std::ostream& os, const CharacterMatrix& X) {
  os << X.rows() << ' ' << X.sites() << ' ' << X.states() << '\n';
  os << "#labels";
  for (const auto& l : X.labels()) os << ' ' << l;
  os << '\n';
  std::string line;
  for (int i = 0; i < X.rows(); ++i) {
    line.clear();
    for (int s = 0; s < X.sites(); ++s) {
      if (s) line.push_back(' ');
      line += std::to_string(X(i, s));
    }
    os << line << '\n';
  }
}

inline CharacterMatrix read_character_matrix(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::vector<std::string>> labels;
  int m = -1, n = -1, d = -1;
  auto next_line = [&]() -> bool {
    while (std::getline(is, line)) {
      ++line_no;
      if (line.rfind("#labels", 0) == 0) {
        std::istringstream ss(line.substr(7));
        labels.emplace();
        for (std::string l; ss >> l;) labels->push_back(l);
        continue;
      }
      if (line.empty() || line[0] == '#') continue;
      return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("missing 'm n d' header", line_no);
  {
    std::istringstream ss(line);
    if (!(ss >> m >> n >> d) || m < 1 || n < 1 || d < 2)
      throw ParseError("malformed 'm n d' header", line_no);
  }
  std::vector<std::vector<int>> rows;
  while (static_cast<int>(rows.size()) < m && next_line()) {
    std::istringstream ss(line);
    std::vector<int> row;
    row.reserve(n);
    for (int v; ss >> v;) {
      if (v < 1 || v > d) throw ParseError("state " + std::to_string(v) + " outside 1.." + std::to_string(d), line_no);
      row.push_back(v);
    }
    if (!ss.eof()) throw ParseError("non-integer entry", line_no);
    if (static_cast<int>(row.size()) != n)
      throw ParseError("expected " + std::to_string(n) + " entries, found " + std::to_string(row.size()), line_no);
    rows.push_back(std::move(row));
  }
  if (static_cast<int>(rows.size()) != m)
    throw ParseError("expected " + std::to_string(m) + " rows", line_no);
  if (!labels) {
    labels.emplace();
    for (int i = 1; i <= m; ++i) labels->push_back("x" + std::to_string(i));
  }
  if (static_cast<int>(labels->size()) != m)
    throw ParseError("#labels lists " + std::to_string(labels->size()) + " names for " + std::to_string(m) + " rows", line_no);
  CharacterMatrix X(std::move(*labels), n, d);
  for (int i = 0; i < m; ++i)
    for (int s = 0; s < n; ++s) X.set(i, s, rows[i][s]);
  return X;
}

}  // namespace snj
