// Acceptance run: one PASS/FAIL line per criterion. Exit status is 0 only
// when every criterion passes.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "snj/snj.hpp"

using namespace snj;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Population similarity built from the raw edge list.
SimilarityMatrix population(const Topology& t, const EdgeAffinities& aff) {
  return SimilarityMatrix(t.labels(), oracle::path_products(t, aff.values()));
}

Topology make_tree(TreeKind kind, int m, std::uint64_t seed) {
  GenSpec spec;
  spec.kind = kind;
  spec.m = m;
  spec.seed = seed;
  return generate(spec).topology;
}

std::set<int> as_set(const LeafSet& s) { return {s.begin(), s.end()}; }

// ---------------------------------------------------------------------------

Outcome population_consistency() {
  const auto start = Clock::now();
  const TreeKind kinds[] = {TreeKind::caterpillar, TreeKind::perfect_binary, TreeKind::coalescent,
                            TreeKind::birth_death};
  int runs = 0, failures = 0;
  std::string first;
  for (TreeKind kind : kinds)
    for (int m : {8, 16, 32, 64})
      for (double delta : {0.7, 0.85, 0.95})
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
          auto t = make_tree(kind, m, seed);
          auto R = population(t, assign_constant_affinity(t, delta));
          std::vector<std::pair<std::string, Topology>> outs;
          outs.emplace_back("snj", snj::snj(R).topology);
          outs.emplace_back("nj", nj(affinity_to_distance(R)).topology);
          if (m <= 32) outs.emplace_back("maxq", max_quartet_nj(R).topology);
          for (const auto& [method, est] : outs) {
            ++runs;
            if (oracle::rf(est, t) != 0) {
              if (!failures)
                first = method + " " + to_string(kind) + " m=" + std::to_string(m) +
                        " delta=" + fmt("%g", delta) + " seed=" + std::to_string(seed);
              ++failures;
            }
          }
        }
  const double secs = seconds_since(start);
  std::string detail = std::to_string(runs - failures) + "/" + std::to_string(runs) +
                       " runs exact, " + fmt("%.1f s", secs);
  if (failures) detail += "; first miss: " + first;
  return {failures == 0 && secs < 120.0, detail};
}

Outcome rank_structure() {
  std::mt19937_64 rng(2);
  double worst_rank1 = 0, worst_rank2 = 0, min_sigma2 = std::numeric_limits<double>::infinity();
  int subsets = 0, pairs = 0, separated = 0;
  for (std::uint64_t seed = 0; subsets < 100 || pairs < 100; ++seed) {
    const int m = 8 + static_cast<int>(seed % 4) * 8;  // 8..32
    auto t = coalescent(m, seed);
    auto R = population(t, assign_gamma_affinity(t, 0.8, 3.0, seed)).values();
    auto clans = all_clans(t);
    std::shuffle(clans.begin(), clans.end(), rng);
    int taken = 0;
    for (const auto& c : clans) {
      if (subsets >= 100 || taken >= 10) break;
      if (c.size() < 2 || static_cast<int>(c.size()) > m - 2) continue;
      auto s = singular_values(cross_similarity(R, c));
      worst_rank1 = std::max(worst_rank1, s(1) / s(0));
      ++subsets;
      ++taken;
    }
    auto cp = disjoint_clan_pairs(t, false);
    std::shuffle(cp.begin(), cp.end(), rng);
    for (std::size_t k = 0; k < cp.size() && k < 10 && pairs < 100; ++k) {
      auto C = detail::merged_sorted(cp[k].a, cp[k].b);
      auto s = singular_values(cross_similarity(R, C));
      if (s.size() > 2) worst_rank2 = std::max(worst_rank2, s(2) / s(0));
      std::set<int> u = as_set(C);
      if (!oracle::clan(t, u)) {
        min_sigma2 = std::min(min_sigma2, s(1) / s(0));
        ++separated;
      }
      ++pairs;
    }
  }
  const bool pass = worst_rank1 <= 1e-10 && worst_rank2 <= 1e-10 && min_sigma2 > 0.0 && separated > 0;
  return {pass, std::to_string(subsets) + " clans max s2/s1=" + fmt("%.2e", worst_rank1) + "; " +
                    std::to_string(pairs) + " clan pairs max s3/s1=" + fmt("%.2e", worst_rank2) +
                    ", min s2/s1 over " + std::to_string(separated) +
                    " non-adjacent=" + fmt("%.2e", min_sigma2)};
}

Outcome tight_example() {
  double worst = 0;
  const std::pair<double, double> params[] = {{0.9, 0.8}, {0.6, 0.95}};
  for (int m : {4, 8, 16})
    for (auto [delta, xi] : params) {
      auto te = tight_example_tree(m, delta, xi);
      auto R = population(te.topology, te.affinities).values();
      auto C = detail::merged_sorted(te.clan_a, te.clan_c);
      const double got = second_singular_value(cross_similarity(R, C));
      const double want = m / 4.0 * std::pow(delta, 2.0 * std::log2(m / 2.0)) * (1.0 - xi);
      worst = std::max(worst, std::abs(got - want) / want);
    }
  return {worst <= 1e-10, "6 cases, max relative error " + fmt("%.2e", worst)};
}

// Random clan pairs over a mix of tree shapes, with heterogeneous affinities.
struct Instance {
  Topology t;
  Eigen::MatrixXd R;
  ClanPair pair;
};

std::vector<Instance> instances(int count, bool non_adjacent, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Instance> out;
  for (std::uint64_t k = 0; static_cast<int>(out.size()) < count; ++k) {
    const int m = 6 + static_cast<int>(rng() % 11);  // 6..16
    const auto s = derive_seed(seed, {k});
    auto t = k % 2 ? birth_death(m, s, 1.0, 0.5) : coalescent(m, s);
    std::uniform_real_distribution<double> base(0.6, 0.95);
    auto R = population(t, assign_gamma_affinity(t, base(rng), 4.0, s)).values();
    auto cp = disjoint_clan_pairs(t, non_adjacent);
    if (cp.empty()) continue;
    std::shuffle(cp.begin(), cp.end(), rng);
    for (std::size_t i = 0; i < cp.size() && i < 5 && static_cast<int>(out.size()) < count; ++i)
      out.push_back({t, R, cp[i]});
  }
  return out;
}

Outcome quartet_identity_check() {
  double worst = 0;
  for (const auto& inst : instances(50, false, 4)) {
    auto q = quartet_identity(inst.R, inst.pair.a, inst.pair.b);
    // Both sides are sums of products of four entries of R[C, C^c]; its
    // squared Frobenius norm sets their scale.
    const double f2 = cross_similarity(inst.R, detail::merged_sorted(inst.pair.a, inst.pair.b)).squaredNorm();
    worst = std::max(worst, q.residual() / std::max({q.spectral, q.quartet_sum, 1e-16 * f2 * f2}));
  }
  return {worst <= 1e-8, "50 clan pairs, max relative residual " + fmt("%.2e", worst)};
}

Outcome frobenius_and_rank2_bound() {
  double worst_identity = 0;
  for (const auto& inst : instances(1000, true, 5)) {
    auto f = frobenius_block_identity(inst.t, inst.R, inst.pair.a, inst.pair.b);
    worst_identity = std::max(worst_identity, std::abs(f.lhs - f.rhs) / std::max(f.lhs, f.rhs));
  }
  double worst_excess = -std::numeric_limits<double>::infinity();
  for (const auto& inst : instances(1000, false, 6)) {
    const Eigen::MatrixXd M = cross_similarity(inst.R, detail::merged_sorted(inst.pair.a, inst.pair.b));
    const double s2 = singular_values(M)(1);
    worst_excess = std::max(worst_excess, rank2_sigma2_squared_bound(M) - s2 * s2);
  }
  return {worst_identity <= 1e-10 && worst_excess <= 1e-12,
          "1000 identities max relative gap " + fmt("%.2e", worst_identity) +
              "; 1000 bounds max (bound - s2^2) " + fmt("%.2e", worst_excess)};
}

// Smallest criterion value among non-clan candidate unions along the
// population SNJ trace.
double min_non_adjacent_sigma2(const Topology& t, const SimilarityMatrix& R) {
  ReconstructOptions opt;
  opt.record_candidates = true;
  auto base = snj::snj(R, opt);
  double gap = std::numeric_limits<double>::infinity();
  std::map<int, LeafSet> leaves;
  for (int i = 0; i < t.leaf_count(); ++i) leaves[i] = {i};
  for (const auto& e : base.trace.events) {
    for (const auto& c : e.candidates) {
      std::set<int> u(leaves[c.a].begin(), leaves[c.a].end());
      u.insert(leaves[c.b].begin(), leaves[c.b].end());
      if (!oracle::clan(t, u)) gap = std::min(gap, c.value);
    }
    leaves[e.merged] = e.leaves;
  }
  return gap;
}

Outcome snj_noise_robustness() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss;
  int kept = 0, trials = 0;
  double smallest_gap = std::numeric_limits<double>::infinity();
  for (std::uint64_t tree = 0; tree < 10; ++tree) {
    const int m = 8 + static_cast<int>(tree % 3) * 4;
    auto t = tree % 2 ? birth_death(m, tree, 1.0, 0.5) : coalescent(m, tree);
    auto R = population(t, assign_constant_affinity(t, 0.75 + 0.02 * tree));
    const double gap = min_non_adjacent_sigma2(t, R);
    smallest_gap = std::min(smallest_gap, gap);
    for (int k = 0; k < 10; ++k) {
      // Alternate Gaussian and rank-one perturbations, zero diagonal,
      // rescaled to spectral norm exactly gap / 2.
      Eigen::MatrixXd E(m, m);
      if (k % 2 == 0) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j <= i; ++j) E(i, j) = E(j, i) = gauss(rng);
      } else {
        Eigen::VectorXd v(m);
        for (int i = 0; i < m; ++i) v(i) = gauss(rng);
        E = v * v.transpose();
      }
      E.diagonal().setZero();
      const double norm = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(E, Eigen::EigenvaluesOnly)
                              .eigenvalues()
                              .cwiseAbs()
                              .maxCoeff();
      const Eigen::MatrixXd noisy = R.values() + E * (0.5 * gap / norm);
      ++trials;
      kept += oracle::rf(snj::snj(SimilarityMatrix(R.labels(), noisy)).topology, t) == 0;
    }
  }
  return {kept == trials, std::to_string(kept) + "/" + std::to_string(trials) +
                              " perturbed runs unchanged; smallest measured gap " +
                              fmt("%.3e", smallest_gap)};
}

Outcome nj_atteson() {
  std::mt19937_64 rng(8);
  int kept = 0, trials = 0;
  for (std::uint64_t tree = 0; tree < 20; ++tree) {
    const int m = 8 << (tree % 3);  // 8, 16, 32
    auto t = tree % 2 ? birth_death(m, tree, 1.0, 0.5) : coalescent(m, tree);
    auto aff = assign_gamma_affinity(t, 0.8, 4.0, tree);
    auto D = affinity_to_distance(population(t, aff));
    // Half the shortest edge length, -log(max affinity) / 2.
    const double radius = atteson_radius(aff);
    std::uniform_real_distribution<double> u(-radius, radius);
    for (int k = 0; k < 5; ++k) {
      Eigen::MatrixXd noisy = D.values();
      for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
          // Every other trial pushes each entry to the edge of the ball.
          double e = k % 2 ? std::copysign(radius, u(rng)) : u(rng);
          e *= 1.0 - 1e-9;
          noisy(i, j) = noisy(j, i) = std::max(0.0, noisy(i, j) + e);
        }
      ++trials;
      kept += oracle::rf(nj(DistanceMatrix(D.labels(), noisy)).topology, t) == 0;
    }
  }
  return {kept == trials, std::to_string(kept) + "/" + std::to_string(trials) + " perturbed runs unchanged"};
}

Outcome concentration_rate() {
  ConcentrationSpec spec;
  spec.kind = TreeKind::caterpillar;
  spec.m = 4;
  spec.d = 4;
  spec.delta = 0.9;
  spec.n = {1000, 4000, 16000, 64000};
  spec.trials = 50;
  spec.seed = 0;
  auto rows = run_concentration(spec, default_thread_count());
  const double slope = concentration_slope(rows);
  std::string detail = "slope " + fmt("%.3f", slope) + " (mean max error";
  for (const auto& r : rows) detail += " " + fmt("%.4f", r.mean_max_error);
  return {slope >= -0.6 && slope <= -0.4, detail + ")"};
}

Outcome desk_trend() {
  const auto start = Clock::now();
  auto config = load_bench_config(SNJ_SOURCE_DIR "/configs/desk.yaml");
  const BenchCell* cell = nullptr;
  for (const auto& c : config.cells)
    if (c.name == "caterpillar64") cell = &c;
  if (!cell) return {false, "desk preset has no caterpillar64 cell"};
  auto rows = run_cell(*cell, default_thread_count());
  std::map<int, double> snj_rf, nj_rf;
  int errors = 0;
  for (const auto& r : rows) {
    errors += !r.error.empty();
    (r.method == "snj" ? snj_rf : nj_rf)[r.n] += static_cast<double>(r.rf_distance) / cell->trials;
  }
  bool ordered = errors == 0;
  int inversions = 0;
  double prev = std::numeric_limits<double>::infinity();
  std::string detail = "mean RF snj/nj:";
  for (auto [n, v] : snj_rf) {
    ordered = ordered && v <= nj_rf[n];
    if (v > prev) {
      ++inversions;
      ordered = ordered && v - prev <= 2.0;
    }
    prev = v;
    detail += " n=" + std::to_string(n) + " " + fmt("%.2f", v) + "/" + fmt("%.2f", nj_rf[n]);
  }
  const double secs = seconds_since(start);
  return {ordered && inversions <= 1 && secs < 600.0, detail + ", " + fmt("%.1f s", secs)};
}

Outcome runtime_ordering() {
  // Summed reconstruction times over five simulated data sets per m.
  auto timings = [](int m, bool with_maxq) {
    std::map<std::string, double> ms;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto t = coalescent(m, seed);
      auto model = model_from_affinities(t, assign_constant_affinity(t, 0.9), 4);
      auto X = simulate(model, 1000, derive_seed(seed, {tag("timing")}));
      auto R = estimate_jc_similarity(X).similarity;
      for (std::string method : {"snj", "nj", "maxq"}) {
        if (method == "maxq" && !with_maxq) continue;
        double best = std::numeric_limits<double>::infinity();
        for (int rep = 0; rep < 3; ++rep) {
          double t_ms = 0;
          run_method(method, R, &t_ms);
          best = std::min(best, t_ms);
        }
        ms[method] += best;
      }
    }
    return ms;
  };
  bool pass = true;
  std::string detail;
  for (int m : {16, 32, 64, 128}) {
    auto ms = timings(m, m == 32 || m == 64);
    const double ratio = ms["snj"] / ms["nj"];
    pass = pass && ratio <= 10.0;
    detail += "m=" + std::to_string(m) + " snj/nj " + fmt("%.1f", ratio);
    if (ms.count("maxq")) {
      pass = pass && ms["maxq"] > ms["snj"];
      detail += " maxq/snj " + fmt("%.1f", ms["maxq"] / ms["snj"]);
    }
    detail += "; ";
  }
  return {pass, detail.substr(0, detail.size() - 2)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"population consistency", population_consistency},
      {"rank structure", rank_structure},
      {"tight example", tight_example},
      {"quartet-sum identity", quartet_identity_check},
      {"Frobenius identity and rank-2 bound", frobenius_and_rank2_bound},
      {"SNJ noise robustness", snj_noise_robustness},
      {"NJ Atteson robustness", nj_atteson},
      {"concentration rate", concentration_rate},
      {"desk-scale caterpillar trend", desk_trend},
      {"runtime ordering", runtime_ordering},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
