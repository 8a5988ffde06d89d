#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "attnchain/chain.hpp"
#include "attnchain/dense_eigen.hpp"
#include "attnchain/error.hpp"
#include "attnchain/spectral.hpp"
#include "attnchain/synth.hpp"

using namespace attnchain;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an attnchain::Error");
  return ErrorCode::kInvalidArgument;
}

std::vector<double> eigen_moduli(std::size_t n, std::span<const double> a) {
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = a[i * n + j];
  Eigen::EigenSolver<Eigen::MatrixXd> solver(m, false);
  std::vector<double> mod;
  for (const auto& z : solver.eigenvalues()) mod.push_back(std::abs(z));
  std::sort(mod.begin(), mod.end(), std::greater<>());
  return mod;
}

StochasticMatrix two_state(double a, double b) {
  return StochasticMatrix::from_rows({{1 - a, a}, {b, 1 - b}});
}

}  // namespace

TEST_CASE("dense eigenvalues agree with Eigen") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t n = 3 + seed * 3;
    synth::Rng rng(seed);
    std::vector<double> a(n * n);
    for (double& x : a) x = 2.0 * rng.uniform() - 1.0;
    const auto got = dense::eigenvalues(n, a);
    const auto want = eigen_moduli(n, a);
    REQUIRE(got.size() == n);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(std::abs(got[k]) - want[k]) <= 1e-9);
    // Every returned eigenvalue matches one of Eigen's up to conjugation.
    Eigen::MatrixXd m = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                  Eigen::RowMajor>>(a.data(), n, n);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(m, false);
    for (const auto& z : got) {
      double best = INFINITY;
      for (const auto& w : solver.eigenvalues()) best = std::min(best, std::abs(z - w));
      CHECK(best <= 1e-8);
    }
  }
}

TEST_CASE("low-rank chains converge and agree with Eigen") {
  // Rank-deficient chains leave blocks of near-underflow entries behind the
  // Hessenberg reduction.
  std::vector<StochasticMatrix> cases;
  for (std::size_t n : {16, 64, 200}) cases.push_back(synth::block_chain(n, 2, 0.98, 0.0, 0));
  for (std::size_t side : {6, 8, 12}) {
    auto sink = synth::sink_planted_chain(side, side, side + 2);
    cases.push_back(sink);
    cases.push_back(transpose(to_left_stochastic(sink)));
  }
  for (const auto& m : cases) {
    const std::size_t n = m.size();
    const auto got = dense::eigenvalues(n, m.entries());
    const auto want = eigen_moduli(n, m.entries());
    CHECK(std::abs(std::abs(got[1]) - want[1]) <= 1e-9);
    CHECK(std::abs(lambda2(m) - want[1]) <= 1e-9);
  }
}

TEST_CASE("hessenberg reduction preserves the spectrum") {
  synth::Rng rng(4);
  const std::size_t n = 12;
  std::vector<double> a(n * n);
  for (double& x : a) x = rng.uniform();
  std::vector<double> h = a;
  dense::hessenberg_reduce(n, h);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j + 1 < i; ++j) CHECK(h[i * n + j] == 0.0);
  const auto ev_a = eigen_moduli(n, a);
  const auto ev_h = eigen_moduli(n, h);
  for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(ev_a[k] - ev_h[k]) <= 1e-10);
}

TEST_CASE("linear solve") {
  std::vector<double> a{0, 2, 1, 1, 1, 1, 2, 1, 0};
  std::vector<double> b{5, 4, 4};
  const auto x = dense::solve(3, a, b);
  CHECK(std::abs(x[0] - 1) < 1e-14);
  CHECK(std::abs(x[1] - 2) < 1e-14);
  CHECK(std::abs(x[2] - 1) < 1e-14);
}

TEST_CASE("lambda2 of analytic chains") {
  CHECK(lambda2(StochasticMatrix::identity(3)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lambda2(StochasticMatrix::from_rows({{0, 1}, {1, 0}})) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lambda2(StochasticMatrix::uniform(6)) <= 1e-12);
  CHECK(lambda2(StochasticMatrix::uniform(1)) == 0.0);
  for (auto [a, b] : {std::pair{0.1, 0.5}, {0.3, 0.3}, {0.9, 0.8}, {0.05, 0.02}}) {
    CHECK(std::abs(lambda2(two_state(a, b)) - std::abs(1 - a - b)) <= 1e-12);
  }
  // A 3-cycle has eigenvalues on the unit circle.
  auto cycle = StochasticMatrix::from_rows({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}});
  CHECK(std::abs(lambda2(cycle) - 1.0) <= 1e-12);
}

TEST_CASE("lambda2 is orientation aware") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = synth::random_chain(10, seed);
    CHECK(std::abs(lambda2(m) - lambda2(transpose(m))) <= 1e-12);
  }
}

TEST_CASE("teleport scales lambda2 by alpha") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = synth::block_chain(12, 3, 0.9, 0.4, seed);
    for (double alpha : {0.5, 0.85}) {
      const double raw = lambda2(m);
      Lambda2Options adj;
      adj.adjusted = true;
      adj.alpha = alpha;
      CHECK(std::abs(lambda2(m, adj) - alpha * raw) <= 1e-10);
      CHECK(std::abs(lambda2(teleport_adjust(m, alpha)) - alpha * raw) <= 1e-10);
    }
  }
}

TEST_CASE("lambda2 stays within [0, 1]") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto m = synth::random_chain(2 + seed, seed);
    const double l = lambda2(m);
    CHECK(l >= 0.0);
    CHECK(l <= 1.0 + 1e-12);
  }
}

TEST_CASE("deflated power agrees with the dense path") {
  Lambda2Options deflated;
  deflated.method = SpectralMethod::kDeflatedPower;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const std::size_t n = 8 + 11 * seed;
    auto m = seed % 2 ? synth::random_chain(n, seed) : synth::block_chain(n, 4, 0.8, 0.5, seed);
    Lambda2Options d;
    d.method = SpectralMethod::kDense;
    CHECK(std::abs(lambda2(m, d) - lambda2(m, deflated)) <= 1e-6);
  }
  // Complex and negative second eigenvalues.
  auto cycle = mix_identity(StochasticMatrix::from_rows({{0, 1, 0}, {0, 0, 1}, {1, 0, 0}}));
  CHECK(std::abs(lambda2_deflated(cycle) - lambda2(cycle)) <= 1e-6);
  auto flip = two_state(0.9, 0.8);
  CHECK(std::abs(lambda2_deflated(flip) - 0.7) <= 1e-6);
}

TEST_CASE("deflated power reports non-convergence") {
  Lambda2Options opts;
  opts.max_iters = 1;
  opts.tolerance = 1e-300;
  CHECK(code_of([&] { lambda2_deflated(synth::random_chain(40, 1), opts); }) ==
        ErrorCode::kConvergenceFailure);
}

TEST_CASE("lambda2 weights") {
  std::vector<StochasticMatrix> heads{two_state(0.1, 0.1), two_state(0.2, 0.2),
                                      StochasticMatrix::uniform(2)};
  auto s = lambda2_weights(heads);
  CHECK_FALSE(s.uniform_fallback);
  CHECK(s.method == SpectralMethod::kDense);
  CHECK(std::abs(s.per_head_lambda2[0] - 0.8) <= 1e-12);
  CHECK(std::abs(s.per_head_lambda2[1] - 0.6) <= 1e-12);
  CHECK(std::abs(s.weights[0] - 0.8 / 1.4) <= 1e-9);
  CHECK(std::abs(s.weights[1] - 0.6 / 1.4) <= 1e-9);
  CHECK(s.weights[2] <= 1e-12);

  std::vector<StochasticMatrix> flat{StochasticMatrix::uniform(4), StochasticMatrix::uniform(4)};
  auto f = lambda2_weights(flat);
  CHECK(f.uniform_fallback);
  CHECK(f.weights == std::vector<double>{0.5, 0.5});

  CHECK(code_of([] { lambda2_weights(std::span<const StochasticMatrix>{}); }) ==
        ErrorCode::kEmptyHeadList);
}

TEST_CASE("lambda2 weights are permutation equivariant and thread independent") {
  std::vector<StochasticMatrix> heads;
  for (std::uint64_t seed = 0; seed < 6; ++seed)
    heads.push_back(synth::block_chain(16, 2 + seed % 3, 0.7 + 0.04 * seed, 0.3, seed));
  auto base = lambda2_weights(heads, {}, 1);
  double total = std::accumulate(base.weights.begin(), base.weights.end(), 0.0);
  CHECK(std::abs(total - 1.0) <= 1e-12);
  for (double w : base.weights) CHECK(w >= 0.0);

  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<StochasticMatrix> shuffled;
  for (auto p : perm) shuffled.push_back(heads[p]);
  auto moved = lambda2_weights(shuffled, {}, 4);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    CHECK(std::abs(moved.weights[k] - base.weights[perm[k]]) <= 1e-15);
  }
}

TEST_CASE("dense left eigenvector oracle") {
  auto p = teleport_adjust(two_state(0.1, 0.5), 0.999999);
  auto v = dense_left_eigvec_oracle(p);
  // Stationary vector of the teleported two-state chain.
  const double a = 0.999999 * 0.1 + 0.000001 * 0.5;
  const double b = 0.999999 * 0.5 + 0.000001 * 0.5;
  CHECK(std::abs(v[0] - b / (a + b)) <= 1e-12);

  CHECK(code_of([] { dense_left_eigvec_oracle(StochasticMatrix::identity(3)); }) ==
        ErrorCode::kNonPositiveMatrix);
  CHECK(code_of([] { dense_left_eigvec_oracle(StochasticMatrix::uniform(kDenseCrossover + 1)); }) ==
        ErrorCode::kSizeExceeded);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto m = synth::random_chain(20, seed);
    auto pi = dense_left_eigvec_oracle(m);
    std::vector<double> next(20, 0.0);
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t j = 0; j < 20; ++j) next[j] += pi[i] * m(i, j);
    for (std::size_t j = 0; j < 20; ++j) CHECK(std::abs(next[j] - pi[j]) <= 1e-13);
  }
}
