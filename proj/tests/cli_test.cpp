#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "attnchain/chain.hpp"
#include "attnchain/ops.hpp"
#include "attnchain/spectral.hpp"
#include "attnchain/synth.hpp"
#include "attnchain/tensor_io.hpp"

using namespace attnchain;
namespace fs = std::filesystem;

namespace {

const fs::path kScratch = fs::path(ATTNCHAIN_SCRATCH) / "cli_scratch";

fs::path fresh(const std::string& name) {
  const fs::path dir = kScratch / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const std::string& args, const std::string& env = "") {
  const fs::path out = kScratch / "stdout.txt";
  const fs::path err = kScratch / "stderr.txt";
  fs::create_directories(kScratch);
  const std::string cmd = env + " '" + std::string(ATTNCHAIN_BIN) + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_text(out);
  r.err = io::read_text(err);
  return r;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(io::read_text(path));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Column `col` of a CSV with a header line, as numbers.
std::vector<double> csv_column(const fs::path& path, std::size_t col) {
  std::vector<double> v;
  const auto rows = read_csv(path);
  for (std::size_t r = 1; r < rows.size(); ++r) v.push_back(std::stod(rows[r].at(col)));
  return v;
}

// All cells of a header-less numeric grid CSV, row-major.
std::vector<double> csv_grid(const fs::path& path) {
  std::vector<double> v;
  for (const auto& row : read_csv(path))
    for (const auto& cell : row) v.push_back(std::stod(cell));
  return v;
}

// One-layer manifest holding `heads`.
fs::path write_fixture(const fs::path& dir, const std::vector<StochasticMatrix>& heads,
                       std::optional<Grid> grid = std::nullopt,
                       std::vector<std::size_t> special = {}) {
  const std::size_t n = heads.front().size();
  io::NdArray array{{heads.size(), n, n}, {}, io::Dtype::kF64};
  for (const auto& h : heads) array.data.insert(array.data.end(), h.entries().begin(), h.entries().end());
  io::save_array(dir / "layer_000.npy", array, io::Dtype::kF64);
  io::Manifest m;
  m.seq_len = n;
  m.grid = grid;
  m.special_tokens = std::move(special);
  m.entries.push_back({0, heads.size(), io::Dtype::kF64, "layer_000.npy", {heads.size(), n, n}});
  io::save_manifest(dir / "manifest.json", m);
  return dir / "manifest.json";
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string tree_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + io::read_text(f);
  return all;
}

StochasticMatrix two_state(double a, double b) {
  return StochasticMatrix::from_rows({{1 - a, a}, {b, 1 - b}});
}

}  // namespace

TEST_CASE("help and version exit 0 and show defaults") {
  auto r = run("tokenrank --help");
  CHECK(r.code == 0);
  CHECK(r.out.find("[0.85]") != std::string::npos);
  CHECK(r.out.find("[1e-10]") != std::string::npos);
  CHECK(r.out.find("[1000]") != std::string::npos);
  CHECK(r.out.find("ATTNCHAIN_THREADS") != std::string::npos);
  CHECK(run("segment --help").out.find("[outgoing]") != std::string::npos);
  CHECK(run("--version").code == 0);
}

TEST_CASE("usage errors exit 2") {
  const fs::path dir = fresh("usage");
  const auto manifest = write_fixture(dir, {two_state(0.1, 0.5)});
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("tokenrank " + q(manifest)).code == 2);  // --out missing
  CHECK(run("tokenrank " + q(manifest) + " --out " + q(dir / "o") + " --direction sideways").code == 2);
  CHECK(run("tokenrank " + q(manifest) + " --out " + q(dir / "o") + " --alpha 1.5").code == 2);
  CHECK(run("tokenrank " + q(manifest) + " --out " + q(dir / "o") + " --tau 0").code == 2);
  CHECK(run("tokenrank " + q(dir / "absent.json") + " --out " + q(dir / "o")).code == 2);
  io::write_text(dir / "broken.json", "{ not json");
  CHECK(run("validate " + q(dir / "broken.json")).code == 2);
  CHECK(run("bounce " + q(manifest) + " --token 0 --n 1,x --out " + q(dir / "o")).code == 2);
}

TEST_CASE("domain errors exit 1") {
  const fs::path dir = fresh("domain");
  const auto manifest = write_fixture(dir, {two_state(0.1, 0.5)});
  auto r = run("bounce " + q(manifest) + " --token 5 --out " + q(dir / "o"));
  CHECK(r.code == 1);
  CHECK(r.err.find("IndexOutOfRange") != std::string::npos);
  // No grid: segmentation has nothing to map onto.
  CHECK(run("segment " + q(manifest) + " --token 0 --out " + q(dir / "s")).code == 1);
}

TEST_CASE("validate: clean manifest passes, NaN matrix fails with its location") {
  const fs::path dir = fresh("validate");
  auto r = run("validate " + q(write_fixture(dir, {two_state(0.1, 0.5), two_state(0.3, 0.3)})));
  CHECK(r.code == 0);
  CHECK(r.out.find("2 matrices, 0 failed") != std::string::npos);

  io::NdArray bad{{2, 3, 3}, std::vector<double>(18, 1.0 / 3.0), io::Dtype::kF64};
  bad.data[9 + 1 * 3 + 2] = std::numeric_limits<double>::quiet_NaN();
  io::save_array(dir / "layer_000.npy", bad, io::Dtype::kF64);
  io::Manifest m;
  m.seq_len = 3;
  m.entries.push_back({4, 2, io::Dtype::kF64, "layer_000.npy", {2, 3, 3}});
  io::save_manifest(dir / "manifest.json", m);
  r = run("validate " + q(dir / "manifest.json"));
  CHECK(r.code == 1);
  CHECK(r.err.find("layer 4 head 1: non-finite entry at row 1 column 2") != std::string::npos);
}

TEST_CASE("synth output validates and has the expected spectral character") {
  const fs::path dir = fresh("synth");
  CHECK(run("synth --kind block --n 8 --blocks 2 --intra 0.98 --out " + q(dir / "b")).code == 0);
  CHECK(run("synth --kind random --n 8 --seed 3 --out " + q(dir / "r")).code == 0);
  CHECK(run("validate " + q(dir / "b/manifest.json")).code == 0);
  CHECK(run("validate " + q(dir / "r/manifest.json")).code == 0);
  CHECK(run("lambda2 " + q(dir / "b/manifest.json") + " --out " + q(dir / "bl")).code == 0);
  CHECK(run("lambda2 " + q(dir / "r/manifest.json") + " --out " + q(dir / "rl")).code == 0);
  const double block = csv_column(dir / "bl/lambda2.csv", 2).at(0);
  const double random = csv_column(dir / "rl/lambda2.csv", 2).at(0);
  CHECK(block > 0.9);
  CHECK(random < 0.5);

  // The manifest arrays hold exactly the library's chains.
  const auto tensor = io::load_tensor(io::load_manifest(dir / "r/manifest.json"));
  const auto want = synth::random_chain(8, 3);
  CHECK(tensor.matrix(0, 0).entries().size() == 64);
  for (std::size_t i = 0; i < 64; ++i)
    CHECK(std::abs(tensor.matrix(0, 0).entries()[i] - want.entries()[i]) <= 1e-7);

  // Grid without matching state count.
  CHECK(run("synth --kind block --n 10 --grid 3x3 --out " + q(dir / "x")).code == 2);
}

TEST_CASE("tokenrank: uniform tensor, analytic two-state chain, dense oracle") {
  const fs::path dir = fresh("tokenrank");
  CHECK(run("synth --kind block --blocks 1 --n 6 --out " + q(dir / "u")).code == 0);
  auto r = run("tokenrank " + q(dir / "u/manifest.json") + " --out " + q(dir / "uo"));
  CHECK(r.code == 0);
  CHECK(r.out.find("iterations") != std::string::npos);
  CHECK(r.out.find("residual") != std::string::npos);
  const auto scores = csv_column(dir / "uo/tokenrank.csv", 1);
  const auto ranks = csv_column(dir / "uo/tokenrank.csv", 2);
  REQUIRE(scores.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(scores[i] - 1.0 / 6.0) <= 1e-12);
    CHECK(ranks[i] == static_cast<double>(i + 1));
  }

  const auto two = write_fixture(fresh("tokenrank/two"), {StochasticMatrix::from_rows({{0.9, 0.1}, {0.5, 0.5}})});
  CHECK(run("tokenrank " + q(two) + " --alpha 0.999999 --out " + q(dir / "to")).code == 0);
  const auto pi = csv_column(dir / "to/tokenrank.csv", 1);
  CHECK(std::abs(pi[0] - 5.0 / 6.0) <= 1e-4);
  CHECK(std::abs(pi[1] - 1.0 / 6.0) <= 1e-4);

  // 8x8 grid plus one special token, one head.
  const auto m = synth::random_chain(65, 11);
  const auto grid_manifest = write_fixture(fresh("tokenrank/grid"), {m}, Grid{8, 8}, {0});
  CHECK(run("tokenrank " + q(grid_manifest) + " --layer 0 --head 0 --tau 1e-24 --out " +
            q(dir / "go")).code == 0);
  const auto oracle = dense_left_eigvec_oracle(teleport_adjust(m, 0.85));
  const auto got = csv_column(dir / "go/tokenrank.csv", 1);
  for (std::size_t i = 0; i < 65; ++i) CHECK(std::abs(got[i] - oracle[i]) <= 1e-8);
  CHECK(fs::exists(dir / "go/tokenrank.pgm"));
  CHECK(fs::exists(dir / "go/tokenrank.special.csv"));
  CHECK(fs::exists(dir / "go/provenance.json"));
}

TEST_CASE("bounce: n=0 echoes the one-hot, n=1 matches row select, sequence approaches tokenrank") {
  const fs::path dir = fresh("bounce");
  const auto manifest = write_fixture(dir, {synth::block_chain(20, 2, 0.9, 0.5, 2)});
  CHECK(run("bounce " + q(manifest) + " --token 3 --n 0,1 --out " + q(dir / "b")).code == 0);
  CHECK(run("select " + q(manifest) + " --row 3 --out " + q(dir / "s")).code == 0);
  const auto zero = csv_column(dir / "b/bounce_n0.csv", 1);
  for (std::size_t i = 0; i < 20; ++i) CHECK(zero[i] == (i == 3 ? 1.0 : 0.0));
  CHECK(csv_column(dir / "b/bounce_n1.csv", 1) == csv_column(dir / "s/row_3.csv", 1));

  std::string list;
  for (int n = 1; n <= 64; ++n) list += std::to_string(n) + ",";
  auto r = run("bounce " + q(manifest) + " --token 3 --teleport --tau 1e-24 --n " + list + "inf --out " +
               q(dir / "t"));
  CHECK(r.code == 0);
  const auto limit = csv_column(dir / "t/bounce_ninf.csv", 1);
  double prev = INFINITY;
  for (int n = 1; n <= 64; ++n) {
    const auto v = csv_column(dir / ("t/bounce_n" + std::to_string(n) + ".csv"), 1);
    double l1 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) l1 += std::abs(v[i] - limit[i]);
    CHECK(l1 <= prev + 1e-12);
    prev = l1;
  }
  CHECK(prev <= 1e-6);
}

TEST_CASE("lambda2: two-state and uniform heads, block above random") {
  const fs::path dir = fresh("lambda2");
  const auto manifest = write_fixture(
      dir, {StochasticMatrix::from_rows({{0.9, 0.1}, {0.1, 0.9}}), StochasticMatrix::uniform(2)});
  auto r = run("lambda2 " + q(manifest) + " --out " + q(dir / "o"));
  CHECK(r.code == 0);
  const auto rows = read_csv(dir / "o/lambda2.csv");
  CHECK(rows.at(0) == std::vector<std::string>{"layer", "head", "lambda2", "weight"});
  CHECK(std::abs(std::stod(rows.at(1).at(2)) - 0.8) <= 1e-10);
  CHECK(std::abs(std::stod(rows.at(2).at(2))) <= 1e-10);
  CHECK(std::abs(std::stod(rows.at(1).at(3)) - 1.0) <= 1e-10);

  const auto mixed = write_fixture(fresh("lambda2/mixed"), {synth::random_chain(16, 1),
                                                             synth::block_chain(16, 2, 0.98, 0.2, 1)});
  CHECK(run("lambda2 " + q(mixed) + " --method deflated --out " + q(dir / "m")).code == 0);
  const auto w = csv_column(dir / "m/lambda2.csv", 3);
  CHECK(w.at(1) > w.at(0));
}

TEST_CASE("segment: planted block mask, optional metrics, n=1 is the column baseline") {
  const fs::path dir = fresh("segment");
  CHECK(run("synth --kind block --grid 8x8 --special 1 --blocks 2 --intra 0.98 --jitter 0.3 "
            "--heads 2 --seed 5 --out " + q(dir / "syn")).code == 0);
  auto r = run("segment " + q(dir / "syn/manifest.json") + " --gt " + q(dir / "syn/gt.pgm") +
               " --out " + q(dir / "o"));
  CHECK(r.code == 0);
  const auto rows = read_csv(dir / "o/metrics.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"image_id", "accuracy", "miou", "ap"});
  CHECK(std::stod(rows[1][1]) > 0.95);
  CHECK(rows[2][0] == "mean");
  CHECK(fs::exists(dir / "o/syn.mask.pgm"));
  CHECK(fs::exists(dir / "o/syn.scores.pgm"));

  CHECK(run("segment " + q(dir / "syn/manifest.json") + " --out " + q(dir / "nogt")).code == 0);
  CHECK_FALSE(fs::exists(dir / "nogt/metrics.csv"));
  CHECK(fs::exists(dir / "nogt/syn.mask.pgm"));

  CHECK(run("segment " + q(dir / "syn/manifest.json") + " --n 1 --token 0 --heatmap csv --out " +
            q(dir / "n1")).code == 0);
  CHECK(run("select " + q(dir / "syn/manifest.json") + " --aggregate lambda2 --column 0 --out " +
            q(dir / "col")).code == 0);
  const auto map = csv_grid(dir / "n1/syn.scores.csv");
  const auto col = csv_column(dir / "col/column_0.csv", 1);
  REQUIRE(map.size() == 64);
  for (std::size_t i = 0; i < 64; ++i) CHECK(map[i] == col[i + 1]);

  // One ground truth per manifest.
  CHECK(run("segment " + q(dir / "syn/manifest.json") + " " + q(dir / "syn/manifest.json") +
            " --gt " + q(dir / "syn/gt.pgm") + " --out " + q(dir / "x")).code == 2);
}

TEST_CASE("mask-order: uniform index order, hub chain strategies differ, seeded random") {
  const fs::path dir = fresh("mask");
  CHECK(run("synth --kind block --blocks 1 --grid 3x3 --out " + q(dir / "u")).code == 0);
  CHECK(run("mask-order " + q(dir / "u/manifest.json") + " --strategy column-sum,token-rank --out " +
            q(dir / "uo")).code == 0);
  for (const char* s : {"column-sum", "token-rank"}) {
    const auto tokens = csv_column(dir / "uo" / (std::string("mask_order_") + s + ".csv"), 1);
    REQUIRE(tokens.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) CHECK(tokens[i] == static_cast<double>(i));
  }

  CHECK(run("synth --kind hub --grid 1x5 --out " + q(dir / "f")).code == 0);
  CHECK(run("mask-order " + q(dir / "f/manifest.json") +
            " --strategy column-sum,token-rank --layer-fraction 1 --out " + q(dir / "fo")).code == 0);
  CHECK(csv_column(dir / "fo/mask_order_column-sum.csv", 1).at(0) == 0.0);
  CHECK(csv_column(dir / "fo/mask_order_token-rank.csv", 1).at(0) == 4.0);

  CHECK(run("mask-order " + q(dir / "u/manifest.json") + " --strategy random --seed 9 --out " +
            q(dir / "r1")).code == 0);
  CHECK(run("mask-order " + q(dir / "u/manifest.json") + " --strategy random --seed 9 --out " +
            q(dir / "r2")).code == 0);
  CHECK(io::read_text(dir / "r1/mask_order_random.csv") ==
        io::read_text(dir / "r2/mask_order_random.csv"));
}

TEST_CASE("outputs are byte-identical across runs and thread counts") {
  const fs::path dir = fresh("determinism");
  CHECK(run("synth --kind block --grid 6x6 --special 1 --blocks 3 --jitter 0.4 --heads 6 "
            "--layers 3 --seed 1 --out " + q(dir / "syn")).code == 0);
  const std::string m = q(dir / "syn/manifest.json");
  const std::string cmds[] = {
      "tokenrank " + m + " --aggregate lambda2",
      "bounce " + m + " --token 0 --n 1,2,inf",
      "segment " + m + " --gt " + q(dir / "syn/gt.pgm"),
      "mask-order " + m + " --strategy all --lambda2",
      "lambda2 " + m,
  };
  int k = 0;
  for (const auto& cmd : cmds) {
    const fs::path a = dir / ("a" + std::to_string(k)), b = dir / ("b" + std::to_string(k)),
                   c = dir / ("c" + std::to_string(k));
    ++k;
    CHECK(run(cmd + " --threads 1 --out " + q(a)).code == 0);
    CHECK(run(cmd + " --threads 4 --out " + q(b)).code == 0);
    CHECK(run(cmd + " --out " + q(c), "ATTNCHAIN_THREADS=3").code == 0);
    CHECK(tree_bytes(a) == tree_bytes(b));
    CHECK(tree_bytes(a) == tree_bytes(c));
  }
}
