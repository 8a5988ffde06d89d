#pragma once

// Seeded synthetic chains used by the CLI's synth command and the test suites.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "attnchain/chain.hpp"

namespace attnchain::synth {

// mt19937_64 with explicitly defined real/integer mappings so that outputs do
// not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Uniform on the open interval (0, 1).
  double uniform();
  // Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound);

 private:
  std::mt19937_64 engine_;
};

// i.i.d. uniform entries, rows normalized. Strictly positive.
StochasticMatrix random_chain(std::size_t n, std::uint64_t seed);

// Block id of each state when n states are cut into k contiguous blocks whose
// sizes differ by at most one (larger blocks first).
std::vector<std::size_t> block_labels(std::size_t n, std::size_t k);

// Each row puts `intra_mass` on its own block and the rest on the other
// blocks. Within each part the weights are 1 + jitter * u, u ~ U(-1, 1),
// normalized; jitter = 0 spreads mass uniformly.
StochasticMatrix block_chain(std::size_t n, std::size_t k, double intra_mass,
                             double jitter, std::uint64_t seed);

// Five-state chain where most states move to state 0, state 0 moves to
// state 3, and state 3 moves to state 4. Column sums favour state 0 while the
// stationary vector favours state 4.
StochasticMatrix hub_chain();

// Object/background chain on an h x w grid preceded by one sink token
// (index 0). Left-half tokens attend uniformly to every spatial token;
// right-half tokens send `sink_mass` to the sink, `target_mass` to `target`
// and spread the rest over the right half. Along the outgoing direction the
// left half is a closed, slowly mixing set.
StochasticMatrix sink_planted_chain(std::size_t height, std::size_t width,
                                    std::size_t target, double sink_mass = 0.9,
                                    double target_mass = 0.05);

}  // namespace attnchain::synth
