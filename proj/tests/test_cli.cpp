#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "snj/markov.hpp"
#include "snj/tree.hpp"
#include "snj/tree_gen.hpp"

namespace fs = std::filesystem;
using namespace snj;

namespace {

struct Run {
  int exit_code;
  std::string out;
  std::string err;
};

fs::path workdir() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / ("snj_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run run(const std::string& args, const std::string& env = "") {
  const auto out = workdir() / "stdout.txt";
  const auto err = workdir() / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + SNJ_CLI_PATH + std::string(" ") + args +
                          " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

double runtime_of(const std::string& err) {
  auto pos = err.find("runtime_ms=");
  REQUIRE(pos != std::string::npos);
  return std::stod(err.substr(pos + 11));
}

int rf_of(const std::string& err) {
  auto pos = err.find(" rf=");
  REQUIRE(pos != std::string::npos);
  return std::stoi(err.substr(pos + 4));
}

// Variance across sites of the number of leaf pairs that disagree.
double mismatch_variance(const CharacterMatrix& X) {
  double sum = 0, sum2 = 0;
  for (int s = 0; s < X.sites(); ++s) {
    int c = 0;
    for (int i = 0; i < X.rows(); ++i)
      for (int j = i + 1; j < X.rows(); ++j) c += X(i, s) != X(j, s);
    sum += c;
    sum2 += static_cast<double>(c) * c;
  }
  const double n = X.sites();
  return sum2 / n - (sum / n) * (sum / n);
}

}  // namespace

TEST_CASE("gen-tree") {
  auto r = run("--seed 1 --out " + path("cat8.nwk") + " gen-tree --kind caterpillar --m 8 --delta 0.85");
  REQUIRE(r.exit_code == 0);
  auto parsed = parse_newick_annotated(slurp(path("cat8.nwk")));
  CHECK(parsed.topology.leaf_count() == 8);
  CHECK(tree_diameter(parsed.topology) == 7);
  REQUIRE(parsed.affinities.has_value());
  for (double v : parsed.affinities->values()) CHECK(v == 0.85);
  CHECK_FALSE(fs::exists(path("cat8.nwk") + ".clans.json"));

  r = run("--out " + path("tight8.nwk") + " gen-tree --kind tight --m 8 --delta 0.9 --xi 0.8");
  REQUIRE(r.exit_code == 0);
  auto side = nlohmann::json::parse(slurp(path("tight8.nwk") + ".clans.json"));
  auto te = tight_example_tree(8, 0.9, 0.8);
  std::vector<std::string> a, c;
  for (int i : te.clan_a) a.push_back(te.topology.label(i));
  for (int i : te.clan_c) c.push_back(te.topology.label(i));
  CHECK(side["clan_a"].get<std::vector<std::string>>() == a);
  CHECK(side["clan_c"].get<std::vector<std::string>>() == c);
  auto tight = parse_newick_annotated(slurp(path("tight8.nwk")));
  CHECK(rf_distance(tight.topology, te.topology) == 0);

  r = run("gen-tree --kind binary --m 12");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("m must be a power of two") != std::string::npos);

  r = run("gen-tree --kind tight --m 8 --delta 0.9");
  CHECK(r.exit_code == 2);
  r = run("gen-tree --kind oak --m 8");
  CHECK(r.exit_code == 2);
}

TEST_CASE("simulate") {
  REQUIRE(run("--out " + path("q.nwk") + " gen-tree --kind caterpillar --m 4 --delta 0.9").exit_code == 0);
  auto r = run("--seed 4 --out " + path("q100.txt") + " simulate --tree " + path("q.nwk") + " --n 100 --d 4");
  REQUIRE(r.exit_code == 0);
  const auto text = slurp(path("q100.txt"));
  CHECK(text.rfind("4 100 4\n", 0) == 0);

  REQUIRE(run("--seed 4 --out " + path("q100b.txt") + " simulate --tree " + path("q.nwk") + " --n 100",
              "SNJ_THREADS=3")
              .exit_code == 0);
  CHECK(slurp(path("q100b.txt")) == text);
  REQUIRE(run("--seed 5 --out " + path("q100c.txt") + " simulate --tree " + path("q.nwk") + " --n 100")
              .exit_code == 0);
  CHECK(slurp(path("q100c.txt")) != text);

  std::ofstream(path("bare.nwk")) << "((a,b),(c,d));\n";
  r = run("simulate --tree " + path("bare.nwk") + " --n 10");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("affinit") != std::string::npos);
  CHECK(run("simulate --tree " + path("missing.nwk") + " --n 10").exit_code == 2);
}

TEST_CASE("simulate with gamma site rates spreads mismatches") {
  REQUIRE(run("--out " + path("c8.nwk") + " gen-tree --kind caterpillar --m 8 --delta 0.8").exit_code == 0);
  const std::string tree = " simulate --tree " + path("c8.nwk") + " --n 20000";
  REQUIRE(run("--seed 9 --out " + path("flat.txt") + tree).exit_code == 0);
  REQUIRE(run("--seed 9 --out " + path("gamma.txt") + tree + " --gamma-shape 5").exit_code == 0);
  std::ifstream flat(path("flat.txt")), gamma(path("gamma.txt"));
  CHECK(mismatch_variance(read_character_matrix(gamma)) >
        mismatch_variance(read_character_matrix(flat)));
}

TEST_CASE("reconstruct") {
  REQUIRE(run("--out " + path("rq.nwk") + " gen-tree --kind caterpillar --m 4 --delta 0.9").exit_code == 0);
  REQUIRE(run("--seed 2 --out " + path("rq.txt") + " simulate --tree " + path("rq.nwk") + " --n 100000")
              .exit_code == 0);
  for (std::string method : {"snj", "nj"}) {
    const auto out = path("rq_" + method + ".nwk");
    auto r = run("--out " + out + " reconstruct --data " + path("rq.txt") + " --method " + method +
                 " --estimator jc --true-tree " + path("rq.nwk"));
    REQUIRE(r.exit_code == 0);
    CHECK(rf_of(r.err) == 0);
    CHECK(rf_distance(parse_newick(slurp(out)), parse_newick(slurp(path("rq.nwk")))) == 0);
    auto trace = slurp(out + ".trace.jsonl");
    auto event = nlohmann::json::parse(trace.substr(0, trace.find('\n')));
    CHECK(event["step"] == 0);
    CHECK(event["leaves"].size() == 2);
  }

  REQUIRE(run("--seed 3 --out " + path("c48.nwk") + " gen-tree --kind coalescent --m 48 --delta 0.9").exit_code == 0);
  REQUIRE(run("--seed 3 --out " + path("c48.txt") + " simulate --tree " + path("c48.nwk") + " --n 2000")
              .exit_code == 0);
  auto snj_run = run("--out " + path("c48_snj.nwk") + " reconstruct --data " + path("c48.txt") + " --method snj");
  auto maxq_run = run("--out " + path("c48_maxq.nwk") + " reconstruct --data " + path("c48.txt") + " --method maxq");
  REQUIRE(snj_run.exit_code == 0);
  REQUIRE(maxq_run.exit_code == 0);
  CHECK(runtime_of(maxq_run.err) >= runtime_of(snj_run.err));
  int lines = 0;
  for (char ch : slurp(path("c48_snj.nwk") + ".trace.jsonl")) lines += ch == '\n';
  CHECK(lines == 48 - 3);

  auto r = run("reconstruct --data " + path("rq.txt") + " --method upgma");
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("unknown method") != std::string::npos);
  CHECK(run("reconstruct --data " + path("rq.txt") + " --estimator gamma_jc").exit_code == 2);
  r = run("reconstruct --data " + path("rq.txt") + " --estimator logdet");
  CHECK(r.exit_code == 0);
  CHECK(parse_newick(r.out).leaf_count() == 4);

  // A leaf that never shows state 4 starves the general estimator.
  std::ofstream(path("starved.txt")) << "4 4 4\n#labels a b c d\n1 2 3 1\n1 2 3 4\n1 2 3 4\n1 2 3 4\n";
  r = run("reconstruct --data " + path("starved.txt") + " --estimator logdet");
  CHECK(r.exit_code == 2);
}

TEST_CASE("verify") {
  auto r = run("verify");
  CHECK(r.exit_code == 0);
  int pass = 0;
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) pass += line.rfind("PASS ", 0) == 0;
  CHECK(pass == 7);

  auto failing = run("verify --sigma-tol 1e-20");
  CHECK(failing.exit_code == 3);
  CHECK(failing.out.find("FAIL tight_example") != std::string::npos);
  CHECK(failing.err.find("tight example m=") != std::string::npos);
  CHECK(failing.err.find("R[C, C^c] =") != std::string::npos);

  // Structural cases do not depend on the seed.
  auto line_of = [](const std::string& text, const std::string& name) {
    auto pos = text.find(name);
    return text.substr(pos, text.find('\n', pos) - pos);
  };
  auto a = run("--seed 1 verify"), b = run("--seed 2 verify"), c = run("--seed 1 verify");
  CHECK(line_of(a.out, "tight_example") == line_of(b.out, "tight_example"));
  CHECK(a.out == c.out);
}

TEST_CASE("benchmark") {
  std::ofstream(path("grid.yaml")) << "schema: 1\ncells:\n"
                                      "  - {name: g, tree: caterpillar, m: [8, 12], n: [100, 300], "
                                      "methods: [snj, nj], trials: 2, base_seed: 5, output: "
                                   << path("cell.csv") << "}\n"
                                   << "  - {name: bad, tree: binary, m: [12], n: [100], methods: [snj], trials: 1}\n";
  auto r = run("--out " + path("grid.csv") + " benchmark --config " + path("grid.yaml"));
  REQUIRE(r.exit_code == 0);
  auto count_lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  const auto text = slurp(path("grid.csv"));
  CHECK(count_lines(text) == 1 + 2 * 2 * 2 * 2 + 1);
  CHECK(count_lines(slurp(path("cell.csv"))) == 1 + 16);
  CHECK(text.find("power of two") != std::string::npos);
  CHECK(r.err.find("1 rows recorded errors") != std::string::npos);

  // Same CSV on a rerun, runtime column aside.
  auto strip = [](const std::string& s) {
    std::istringstream in(s);
    std::string out;
    for (std::string line; std::getline(in, line);) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      if (cells.size() > 12) cells[12].clear();
      for (const auto& cell : cells) out += cell + ',';
      out += '\n';
    }
    return out;
  };
  REQUIRE(run("--threads 2 --out " + path("grid2.csv") + " benchmark --config " + path("grid.yaml")).exit_code == 0);
  CHECK(strip(slurp(path("grid2.csv"))) == strip(text));

  std::ofstream(path("broken.yaml")) << "schema: 3\ncells: []\n";
  CHECK(run("benchmark --config " + path("broken.yaml")).exit_code == 2);
}

TEST_CASE("concentration") {
  auto r = run("--seed 1 concentration --n 1000,4000 --trials 5");
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.rfind("n,trials,mean_max_error,mean_spectral_error\n1000,5,", 0) == 0);
  CHECK(r.err.find("loglog slope") != std::string::npos);
  CHECK(run("--seed 1 concentration --n 1000,4000 --trials 5").out == r.out);
  CHECK(run("concentration --n 0").exit_code == 2);
}

TEST_CASE("usage errors") {
  CHECK(run("").exit_code == 1);
  CHECK(run("frobnicate").exit_code == 1);
  CHECK(run("gen-tree --kind caterpillar").exit_code == 1);
  CHECK(run("--threads 0 verify").exit_code == 1);
  CHECK(run("--help").exit_code == 0);
}
