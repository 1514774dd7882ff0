// Command-line front end: tree generation, simulation, reconstruction,
// property checks and benchmark grids.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "snj/snj.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kComputation = 2, kProperty = 3 };

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  int threads = snj::default_thread_count();
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw snj::Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes to --out when given, else stdout.
template <class Fn>
void emit(const std::string& path, Fn&& fn) {
  if (path.empty()) {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw snj::Error("cannot write '" + path + "'");
  fn(os);
  if (!os) throw snj::Error("write to '" + path + "' failed");
}

struct GenArgs {
  std::string kind;
  int m = 0;
  double delta = 0.85;
  std::optional<double> xi;
  std::optional<double> edge_shape;
  double birth_rate = 1.0;
  double death_rate = 0.5;
};

int gen_tree(const Globals& g, const GenArgs& a) {
  snj::GenSpec spec;
  spec.kind = snj::tree_kind_from_string(a.kind);
  spec.m = a.m;
  spec.seed = g.seed;
  spec.delta = a.delta;
  spec.xi = a.xi;
  spec.edge_gamma = a.edge_shape;
  spec.birth_rate = a.birth_rate;
  spec.death_rate = a.death_rate;
  auto tree = snj::generate(spec);
  emit(g.out, [&](std::ostream& os) { os << snj::write_newick(tree.topology, &tree.affinities) << '\n'; });
  if (tree.clan_pair) {
    auto names = [&](const snj::LeafSet& s) {
      nlohmann::json j = nlohmann::json::array();
      for (int i : s) j.push_back(tree.topology.label(i));
      return j;
    };
    nlohmann::json side{{"m", a.m},
                        {"delta", a.delta},
                        {"xi", *a.xi},
                        {"clan_a", names(tree.clan_pair->first)},
                        {"clan_c", names(tree.clan_pair->second)}};
    if (g.out.empty()) {
      std::cerr << "clans: " << side.dump() << '\n';
    } else {
      emit(g.out + ".clans.json", [&](std::ostream& os) { os << side.dump(2) << '\n'; });
    }
  }
  return kOk;
}

struct SimArgs {
  std::string tree;
  int n = 0;
  int d = 4;
  std::optional<double> gamma_shape;
};

int simulate(const Globals& g, const SimArgs& a) {
  auto parsed = snj::parse_newick_annotated(read_file(a.tree));
  if (!parsed.affinities)
    throw snj::InvalidArgument("tree file '" + a.tree + "' has no affinity annotations");
  auto model = snj::model_from_affinities(parsed.topology, *parsed.affinities, a.d);
  std::optional<snj::SiteRates> rates;
  if (a.gamma_shape)
    rates = snj::gamma_site_rates(a.n, *a.gamma_shape, snj::derive_seed(g.seed, {snj::tag("rates")}));
  auto X = snj::simulate(model, a.n, g.seed, rates ? &*rates : nullptr, g.threads);
  emit(g.out, [&](std::ostream& os) { snj::write_character_matrix(os, X); });
  return kOk;
}

struct ReconArgs {
  std::string data;
  std::string method = "snj";
  std::string estimator = "jc";
  std::optional<double> shape;
  std::string true_tree;
  bool candidates = false;
};

int reconstruct(const Globals& g, const ReconArgs& a) {
  std::istringstream in(read_file(a.data));
  auto X = snj::read_character_matrix(in);
  auto est = snj::estimate_similarity(X, a.estimator, a.shape);
  snj::ReconstructOptions opts;
  opts.record_candidates = a.candidates;
  opts.threads = g.threads;

  using Clock = std::chrono::steady_clock;
  snj::Reconstruction out;
  double runtime_ms = 0.0;
  if (a.method == "nj") {
    snj::SimilarityMatrix floored = est.R;
    snj::floor_zero_affinities(floored);
    auto D = snj::affinity_to_distance(floored);
    const auto start = Clock::now();
    out = snj::nj(D, opts);
    runtime_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  } else if (a.method == "snj" || a.method == "maxq") {
    const auto start = Clock::now();
    out = a.method == "snj" ? snj::snj(est.R, opts) : snj::max_quartet_nj(est.R, opts);
    runtime_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  } else {
    throw snj::InvalidArgument("unknown method '" + a.method + "'");
  }

  emit(g.out, [&](std::ostream& os) { os << snj::write_newick(out.topology) << '\n'; });
  if (!g.out.empty())
    emit(g.out + ".trace.jsonl", [&](std::ostream& os) { snj::write_trace_jsonl(os, out.trace); });
  for (const auto& w : out.trace.warnings) std::cerr << "warning: " << w << '\n';

  char runtime[32];
  std::snprintf(runtime, sizeof runtime, "%.3f", runtime_ms);
  std::cerr << "method=" << a.method << " estimator=" << a.estimator << " m=" << X.rows()
            << " n=" << X.sites() << " clamp_count=" << est.clamp_count << " runtime_ms=" << runtime;
  if (!a.true_tree.empty()) {
    auto truth = snj::parse_newick(read_file(a.true_tree));
    std::cerr << " rf=" << snj::rf_distance(truth, out.topology);
  }
  std::cerr << '\n';
  return kOk;
}

int verify(const Globals& g, double sigma_tol) {
  snj::VerifyOptions opts;
  opts.seed = g.seed;
  opts.sigma_tolerance = sigma_tol;
  opts.dump = &std::cerr;
  const auto start = std::chrono::steady_clock::now();
  auto report = snj::verify_properties(opts);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  emit(g.out, [&](std::ostream& os) { snj::write_verify_report(os, report); });
  std::cerr << "verify: " << (report.passed() ? "all properties pass" : "FAILED") << " in "
            << secs << " s\n";
  return report.passed() ? kOk : kProperty;
}

int benchmark(const Globals& g, const std::string& config_path) {
  auto config = snj::load_bench_config(config_path);
  std::vector<snj::ResultRow> all;
  int failed = 0;
  for (const auto& cell : config.cells) {
    auto rows = snj::run_cell(cell, g.threads);
    for (const auto& r : rows) failed += !r.error.empty();
    if (!cell.output.empty())
      emit(cell.output, [&](std::ostream& os) { snj::write_results_csv(os, rows); });
    std::cerr << "cell " << cell.name << ": " << rows.size() << " rows\n";
    all.insert(all.end(), rows.begin(), rows.end());
  }
  emit(g.out, [&](std::ostream& os) { snj::write_results_csv(os, all); });
  if (failed) std::cerr << failed << " rows recorded errors\n";
  return kOk;
}

struct ConcArgs {
  std::string kind = "caterpillar";
  int m = 4;
  int d = 4;
  double delta = 0.9;
  std::vector<int> n;
  int trials = 50;
};

int concentration(const Globals& g, const ConcArgs& a) {
  snj::ConcentrationSpec spec;
  spec.kind = snj::tree_kind_from_string(a.kind);
  spec.m = a.m;
  spec.d = a.d;
  spec.delta = a.delta;
  spec.n = a.n;
  spec.trials = a.trials;
  spec.seed = g.seed;
  auto rows = snj::run_concentration(spec, g.threads);
  emit(g.out, [&](std::ostream& os) { snj::write_concentration_csv(os, rows); });
  if (rows.size() >= 2) std::cerr << "loglog slope " << snj::concentration_slope(rows) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral neighbor joining toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Base seed")->capture_default_str();
  app.add_option("--out", g.out, "Output path (default stdout)");
  app.add_option("--threads", g.threads, "Worker threads (default SNJ_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-tree", "Generate a tree with edge affinities (Newick)");
  gen_cmd->add_option("--kind", gen.kind, "caterpillar|binary|coalescent|birth_death|tight")->required();
  gen_cmd->add_option("--m", gen.m, "Number of leaves")->required();
  gen_cmd->add_option("--delta", gen.delta, "Edge affinity")->capture_default_str();
  gen_cmd->add_option("--xi", gen.xi, "Central edge affinity (tight)");
  gen_cmd->add_option("--edge-shape", gen.edge_shape, "Gamma shape for per-edge affinities");
  gen_cmd->add_option("--birth-rate", gen.birth_rate)->capture_default_str();
  gen_cmd->add_option("--death-rate", gen.death_rate)->capture_default_str();

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a character matrix on a tree");
  sim_cmd->add_option("--tree", sim.tree, "Newick file with affinities")->required();
  sim_cmd->add_option("--n", sim.n, "Number of sites")->required();
  sim_cmd->add_option("--d", sim.d, "Number of states")->capture_default_str();
  sim_cmd->add_option("--gamma-shape", sim.gamma_shape, "Per-site Gamma rate shape");

  ReconArgs rec;
  auto* rec_cmd = app.add_subcommand("reconstruct", "Reconstruct a tree from a character matrix");
  rec_cmd->add_option("--data", rec.data, "Character matrix file")->required();
  rec_cmd->add_option("--method", rec.method, "snj|nj|maxq")->capture_default_str();
  rec_cmd->add_option("--estimator", rec.estimator, "jc|logdet|gamma_jc")->capture_default_str();
  rec_cmd->add_option("--shape", rec.shape, "Gamma shape for gamma_jc");
  rec_cmd->add_option("--true-tree", rec.true_tree, "Newick file to report RF against");
  rec_cmd->add_flag("--candidates", rec.candidates, "Record every candidate score in the trace");

  double sigma_tol = 1e-10;
  auto* ver_cmd = app.add_subcommand("verify", "Run the population property battery");
  ver_cmd->add_option("--sigma-tol", sigma_tol, "Relative sigma tolerance")->capture_default_str();

  std::string config_path;
  auto* bench_cmd = app.add_subcommand("benchmark", "Run a benchmark config (CSV of result rows)");
  bench_cmd->add_option("--config", config_path, "YAML config")->required();

  ConcArgs conc;
  auto* conc_cmd = app.add_subcommand("concentration", "Estimation error of R versus n");
  conc_cmd->add_option("--kind", conc.kind)->capture_default_str();
  conc_cmd->add_option("--m", conc.m)->capture_default_str();
  conc_cmd->add_option("--d", conc.d)->capture_default_str();
  conc_cmd->add_option("--delta", conc.delta)->capture_default_str();
  conc_cmd->add_option("--n", conc.n, "Sample sizes")->required()->delimiter(',');
  conc_cmd->add_option("--trials", conc.trials)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen_cmd) return gen_tree(g, gen);
    if (*sim_cmd) return simulate(g, sim);
    if (*rec_cmd) return reconstruct(g, rec);
    if (*ver_cmd) return verify(g, sigma_tol);
    if (*bench_cmd) return benchmark(g, config_path);
    if (*conc_cmd) return concentration(g, conc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kComputation;
  }
  return kUsage;
}
