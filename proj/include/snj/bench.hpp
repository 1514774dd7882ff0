#pragma once

#include <yaml-cpp/yaml.h>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "snj/error.hpp"
#include "snj/markov.hpp"
#include "snj/parallel.hpp"
#include "snj/reconstruct.hpp"
#include "snj/rng.hpp"
#include "snj/similarity.hpp"
#include "snj/tree_gen.hpp"

namespace snj {

// One grid of experiments: every (m, n, trial, method) combination.
struct BenchCell {
  std::string name;
  TreeKind kind = TreeKind::caterpillar;
  std::vector<int> m;
  std::vector<int> n;
  int d = 4;
  double delta = 0.85;
  std::optional<double> xi;          // tight trees
  std::optional<double> shape;       // per-site Gamma rates
  std::optional<double> edge_shape;  // per-edge Gamma affinities
  std::string estimator = "jc";      // jc | logdet | gamma_jc
  std::vector<std::string> methods;  // snj | nj | maxq
  int trials = 1;
  std::uint64_t base_seed = 0;
  std::string output;  // optional per-cell CSV
};

struct BenchConfig {
  int schema = 1;
  std::vector<BenchCell> cells;
};

struct ResultRow {
  std::string method;
  std::string tree_kind;
  int m = 0;
  int n = 0;
  int d = 0;
  double delta = 0.0;
  std::optional<double> xi;
  std::optional<double> shape;
  std::string estimator;
  std::uint64_t trial_seed = 0;
  int rf_distance = 0;
  double normalized_rf = 0.0;
  double runtime_ms = 0.0;
  int cherries_true = 0;
  int cherries_est = 0;
  int clamp_count = 0;
  std::string error;  // non-empty when this run failed
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{
      "method",      "tree_kind",  "m",           "n",        "d",          "delta",
      "xi",          "shape",      "estimator",   "trial_seed", "rf_distance", "normalized_rf",
      "runtime_ms",  "cherries_true", "cherries_est", "clamp_count", "error"};
  return cols;
}

namespace detail {

inline const std::set<std::string>& known_methods() {
  static const std::set<std::string> s{"snj", "nj", "maxq"};
  return s;
}

inline const std::set<std::string>& known_estimators() {
  static const std::set<std::string> s{"jc", "logdet", "gamma_jc"};
  return s;
}

template <class T>
std::vector<T> scalar_or_list(const YAML::Node& node) {
  std::vector<T> out;
  if (node.IsSequence()) {
    for (const auto& v : node) out.push_back(v.as<T>());
  } else {
    out.push_back(node.as<T>());
  }
  return out;
}

inline void validate_cell(const BenchCell& c) {
  const std::string where = "cell '" + c.name + "': ";
  require(!c.m.empty() && !c.n.empty(), where + "m and n lists must be non-empty");
  for (int m : c.m) require(m >= 4, where + "m must be at least 4");
  for (int n : c.n) require(n >= 1, where + "n must be at least 1");
  require(c.d >= 2 && c.d <= 255, where + "d must lie in [2,255]");
  require(c.delta > 0.0 && c.delta < 1.0, where + "delta must lie in (0,1)");
  if (c.xi) require(*c.xi > 0.0 && *c.xi < 1.0, where + "xi must lie in (0,1)");
  if (c.kind == TreeKind::tight_example) require(c.xi.has_value(), where + "tight trees need xi");
  if (c.shape) require(*c.shape > 0.0, where + "shape must be positive");
  if (c.edge_shape) require(*c.edge_shape > 0.0, where + "edge_shape must be positive");
  require(known_estimators().count(c.estimator),
          where + "unknown estimator '" + c.estimator + "'");
  if (c.estimator == "gamma_jc") require(c.shape.has_value(), where + "gamma_jc needs shape");
  require(!c.methods.empty(), where + "methods must be non-empty");
  for (const auto& name : c.methods)
    require(known_methods().count(name), where + "unknown method '" + name + "'");
  require(c.trials >= 1, where + "trials must be at least 1");
}

}  // namespace detail

// YAML document:
//   schema: 1
//   cells:
//     - name: ...      tree: caterpillar|binary|coalescent|birth_death|tight
//       m: [..]        n: [..]        d: 4       delta: 0.85
//       xi, shape, edge_shape (optional)          estimator: jc|logdet|gamma_jc
//       methods: [snj, nj, maxq]      trials: 20  base_seed: 1   output (optional)
inline BenchConfig parse_bench_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ParseError(std::string("config: ") + e.what(), e.mark.line + 1);
  }
  detail::require(root.IsMap(), "config must be a mapping");
  detail::require(root["schema"].IsDefined(), "config needs 'schema: 1'");
  BenchConfig config;
  config.schema = root["schema"].as<int>();
  detail::require(config.schema == 1,
                  "unsupported config schema " + std::to_string(config.schema));
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    detail::require(key == "schema" || key == "cells", "unknown config key '" + key + "'");
  }
  detail::require(root["cells"].IsSequence() && root["cells"].size() > 0,
                  "config needs a non-empty 'cells' list");
  static const std::set<std::string> keys{"name",   "tree",      "m",          "n",
                                          "d",      "delta",     "xi",         "shape",
                                          "edge_shape", "estimator", "methods", "trials",
                                          "base_seed",  "output"};
  int index = 0;
  for (const auto& node : root["cells"]) {
    BenchCell c;
    c.name = node["name"] ? node["name"].as<std::string>() : "cell" + std::to_string(index);
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      detail::require(keys.count(key), "cell '" + c.name + "': unknown key '" + key + "'");
    }
    try {
      detail::require(node["tree"].IsDefined() && node["m"].IsDefined() && node["n"].IsDefined(),
                      "cell '" + c.name + "' needs tree, m and n");
      c.kind = tree_kind_from_string(node["tree"].as<std::string>());
      c.m = detail::scalar_or_list<int>(node["m"]);
      c.n = detail::scalar_or_list<int>(node["n"]);
      if (node["d"]) c.d = node["d"].as<int>();
      if (node["delta"]) c.delta = node["delta"].as<double>();
      if (node["xi"]) c.xi = node["xi"].as<double>();
      if (node["shape"]) c.shape = node["shape"].as<double>();
      if (node["edge_shape"]) c.edge_shape = node["edge_shape"].as<double>();
      if (node["estimator"]) c.estimator = node["estimator"].as<std::string>();
      c.methods = node["methods"] ? detail::scalar_or_list<std::string>(node["methods"])
                                  : std::vector<std::string>{"snj", "nj"};
      if (node["trials"]) c.trials = node["trials"].as<int>();
      if (node["base_seed"]) c.base_seed = node["base_seed"].as<std::uint64_t>();
      if (node["output"]) c.output = node["output"].as<std::string>();
    } catch (const YAML::Exception& e) {
      throw ParseError("cell '" + c.name + "': " + e.what(), e.mark.line + 1);
    }
    detail::validate_cell(c);
    config.cells.push_back(std::move(c));
    ++index;
  }
  return config;
}

inline BenchConfig load_bench_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_bench_config(text);
}

// ---------------------------------------------------------------------------

struct Estimate {
  SimilarityMatrix R;
  int clamp_count = 0;
};

inline Estimate estimate_similarity(const CharacterMatrix& X, const std::string& estimator,
                                    std::optional<double> shape, int threads = 1) {
  SimilarityEstimate e;
  if (estimator == "jc")
    e = estimate_jc_similarity(X, threads);
  else if (estimator == "logdet")
    e = estimate_logdet_similarity(X, 0.0, threads);
  else if (estimator == "gamma_jc") {
    detail::require(shape.has_value(), "gamma_jc estimator needs a shape");
    e = estimate_gamma_jc_similarity(X, *shape, threads);
  } else {
    throw InvalidArgument("unknown estimator '" + estimator + "'");
  }
  return {std::move(e.similarity), e.diagnostics.clamp_count};
}

// Runs one method; NJ sees saturated (zero) affinities at the largest
// observed distance.
inline Reconstruction run_method(const std::string& method, const SimilarityMatrix& R,
                                 double* runtime_ms = nullptr) {
  using Clock = std::chrono::steady_clock;
  std::optional<DistanceMatrix> D;
  if (method == "nj") {
    SimilarityMatrix floored = R;
    floor_zero_affinities(floored);
    D = affinity_to_distance(floored);
  } else {
    detail::require(method == "snj" || method == "maxq", "unknown method '" + method + "'");
  }
  const auto start = Clock::now();
  Reconstruction out = method == "snj"  ? snj(R)
                       : method == "nj" ? nj(*D)
                                        : max_quartet_nj(R);
  const auto stop = Clock::now();
  if (runtime_ms) *runtime_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  return out;
}

inline std::uint64_t simulation_seed(std::uint64_t trial_seed, int m, int n) {
  return derive_seed(trial_seed, {tag("simulate"), static_cast<std::uint64_t>(m),
                                  static_cast<std::uint64_t>(n)});
}

// The tree of a trial depends on (kind, m, trial seed) only, so one trial
// sees the same tree at every n.
inline GeneratedTree bench_tree(const BenchCell& cell, int m, std::uint64_t trial_seed) {
  GenSpec spec;
  spec.kind = cell.kind;
  spec.m = m;
  spec.seed = trial_seed;
  spec.delta = cell.delta;
  spec.xi = cell.xi;
  spec.edge_gamma = cell.edge_shape;
  return generate(spec);
}

// Rows of one cell in (m, n, trial, method) order.
inline std::vector<ResultRow> run_cell(const BenchCell& cell, int threads = 1) {
  detail::validate_cell(cell);
  struct Job {
    int m, n, trial;
  };
  std::vector<Job> jobs;
  for (int m : cell.m)
    for (int n : cell.n)
      for (int trial = 0; trial < cell.trials; ++trial) jobs.push_back({m, n, trial});
  const std::size_t k = cell.methods.size();
  std::vector<ResultRow> rows(jobs.size() * k);

  parallel_for(static_cast<int>(jobs.size()), threads, [&](int j) {
    const Job& job = jobs[j];
    const std::uint64_t seed = cell.base_seed + static_cast<std::uint64_t>(job.trial);
    for (std::size_t q = 0; q < k; ++q) {
      ResultRow& r = rows[j * k + q];
      r.method = cell.methods[q];
      r.tree_kind = to_string(cell.kind);
      r.m = job.m;
      r.n = job.n;
      r.d = cell.d;
      r.delta = cell.delta;
      r.xi = cell.xi;
      r.shape = cell.shape;
      r.estimator = cell.estimator;
      r.trial_seed = seed;
    }
    try {
      auto tree = bench_tree(cell, job.m, seed);
      auto model = model_from_affinities(tree.topology, tree.affinities, cell.d);
      const std::uint64_t sim = simulation_seed(seed, job.m, job.n);
      std::optional<SiteRates> rates;
      if (cell.shape) rates = gamma_site_rates(job.n, *cell.shape, derive_seed(sim, {tag("rates")}));
      auto X = simulate(model, job.n, sim, rates ? &*rates : nullptr);
      auto est = estimate_similarity(X, cell.estimator, cell.shape);
      const int cherries = cherry_count(tree.topology);
      for (std::size_t q = 0; q < k; ++q) {
        ResultRow& r = rows[j * k + q];
        r.cherries_true = cherries;
        r.clamp_count = est.clamp_count;
        try {
          auto out = run_method(r.method, est.R, &r.runtime_ms);
          r.rf_distance = rf_distance(tree.topology, out.topology);
          r.normalized_rf = static_cast<double>(r.rf_distance) / (2.0 * (job.m - 3));
          r.cherries_est = cherry_count(out.topology);
        } catch (const std::exception& e) {
          r.error = e.what();
        }
      }
    } catch (const std::exception& e) {
      for (std::size_t q = 0; q < k; ++q) rows[j * k + q].error = e.what();
    }
  });
  return rows;
}

inline std::vector<ResultRow> run_benchmark(const BenchConfig& config, int threads = 1) {
  std::vector<ResultRow> rows;
  for (const auto& cell : config.cells) {
    auto part = run_cell(cell, threads);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

inline std::string optional_number(const std::optional<double>& v) {
  return v ? format_shortest(*v) : std::string();
}

}  // namespace detail

inline void write_results_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  const auto& cols = result_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  char runtime[32];
  for (const auto& r : rows) {
    const bool ok = r.error.empty();
    std::snprintf(runtime, sizeof runtime, "%.3f", r.runtime_ms);
    os << r.method << ',' << r.tree_kind << ',' << r.m << ',' << r.n << ',' << r.d << ','
       << detail::format_shortest(r.delta) << ',' << detail::optional_number(r.xi) << ','
       << detail::optional_number(r.shape) << ',' << r.estimator << ',' << r.trial_seed << ',';
    if (ok) {
      os << r.rf_distance << ',' << detail::format_shortest(r.normalized_rf) << ',' << runtime
         << ',' << r.cherries_true << ',' << r.cherries_est << ',' << r.clamp_count << ",\n";
    } else {
      os << ",,,,,," << detail::csv_field(r.error) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Concentration of the JC estimate around the population matrix.

struct ConcentrationSpec {
  TreeKind kind = TreeKind::caterpillar;
  int m = 4;
  int d = 4;
  double delta = 0.9;
  std::vector<int> n;
  int trials = 50;
  std::uint64_t seed = 0;
};

struct ConcentrationRow {
  int n = 0;
  int trials = 0;
  double mean_max_error = 0.0;       // mean of max |R_hat - R| over entries
  double mean_spectral_error = 0.0;  // mean of ||R_hat - R||_2
};

inline std::vector<ConcentrationRow> run_concentration(const ConcentrationSpec& spec,
                                                       int threads = 1) {
  detail::require(!spec.n.empty(), "n list must be non-empty");
  for (int n : spec.n) detail::require(n >= 1, "n must be at least 1");
  detail::require(spec.trials >= 1, "trials must be at least 1");
  GenSpec g;
  g.kind = spec.kind;
  g.m = spec.m;
  g.seed = spec.seed;
  g.delta = spec.delta;
  auto tree = generate(g);
  auto model = model_from_affinities(tree.topology, tree.affinities, spec.d);
  const Eigen::MatrixXd R = population_similarity(tree.topology, tree.affinities).values();

  std::vector<ConcentrationRow> out;
  for (int n : spec.n) {
    std::vector<double> max_err(spec.trials), spec_err(spec.trials);
    parallel_for(spec.trials, threads, [&](int t) {
      const auto seed = derive_seed(spec.seed, {tag("concentration"), static_cast<std::uint64_t>(n),
                                                static_cast<std::uint64_t>(t)});
      auto X = simulate(model, n, seed);
      const Eigen::MatrixXd E = estimate_jc_similarity(X).similarity.values() - R;
      max_err[t] = E.cwiseAbs().maxCoeff();
      spec_err[t] = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(E, Eigen::EigenvaluesOnly)
                        .eigenvalues()
                        .cwiseAbs()
                        .maxCoeff();
    });
    ConcentrationRow row{n, spec.trials, 0.0, 0.0};
    for (int t = 0; t < spec.trials; ++t) {
      row.mean_max_error += max_err[t] / spec.trials;
      row.mean_spectral_error += spec_err[t] / spec.trials;
    }
    out.push_back(row);
  }
  return out;
}

// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  detail::require(x.size() == y.size() && x.size() >= 2, "need at least two points");
  double mx = 0, my = 0;
  const double k = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    detail::require(x[i] > 0 && y[i] > 0, "log-log fit needs positive values");
    mx += std::log(x[i]) / k;
    my += std::log(y[i]) / k;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  detail::require(sxx > 0, "x values must not all be equal");
  return sxy / sxx;
}

inline double concentration_slope(const std::vector<ConcentrationRow>& rows) {
  std::vector<double> x, y;
  for (const auto& r : rows) {
    x.push_back(r.n);
    y.push_back(r.mean_max_error);
  }
  return loglog_slope(x, y);
}

inline void write_concentration_csv(std::ostream& os, const std::vector<ConcentrationRow>& rows) {
  os << "n,trials,mean_max_error,mean_spectral_error\n";
  for (const auto& r : rows)
    os << r.n << ',' << r.trials << ',' << detail::format_shortest(r.mean_max_error) << ','
       << detail::format_shortest(r.mean_spectral_error) << '\n';
}

}  // namespace snj
