#pragma once

// Second-eigenvalue analysis of attention chains and head weighting by |λ2|.

#include <cstddef>
#include <span>
#include <vector>

#include "attnchain/chain.hpp"

namespace attnchain {

// Largest chain handled by the dense eigensolver when method is kAuto.
inline constexpr std::size_t kDenseCrossover = 512;

enum class SpectralMethod { kAuto, kDense, kDeflatedPower };

struct Lambda2Options {
  SpectralMethod method = SpectralMethod::kAuto;
  // Evaluate on teleport_adjust(m, alpha) instead of the raw chain.
  bool adjusted = false;
  double alpha = 0.85;
  // Deflated power iteration controls.
  double tolerance = 1e-8;
  std::size_t max_iters = 5000;
  std::size_t block_size = 8;
};

struct SpectralSummary {
  std::vector<double> per_head_lambda2;
  std::vector<double> weights;
  // kDense or kDeflatedPower; kAuto never appears here.
  SpectralMethod method = SpectralMethod::kDense;
  bool uniform_fallback = false;
};

// Modulus of the eigenvalue with second-largest modulus. A 1-state chain
// returns 0.
double lambda2(const StochasticMatrix& m, const Lambda2Options& opts = {});

// Same quantity by subspace iteration on the operator with the unit
// eigenvalue removed. Throws kConvergenceFailure after opts.max_iters.
double lambda2_deflated(const StochasticMatrix& m, const Lambda2Options& opts = {});

// weights[h] = |λ2|_h / Σ|λ2|; uniform if every |λ2| is below 1e-12.
// Heads are evaluated on up to `threads` workers (0 = hardware concurrency).
SpectralSummary lambda2_weights(std::span<const StochasticMatrix> heads,
                                const Lambda2Options& opts = {},
                                std::size_t threads = 1);

// Dominant left eigenvector of a strictly positive matrix of at most
// kDenseCrossover states, from the dense eigenvalue and a direct null-space
// solve. Normalized to sum one.
StateVector dense_left_eigvec_oracle(const StochasticMatrix& m);

}  // namespace attnchain
