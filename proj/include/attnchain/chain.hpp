#pragma once

// Attention matrices as discrete-time Markov chains: validated stochastic
// matrices, distributions over tokens, teleportation, and power iteration.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace attnchain {

inline constexpr std::size_t kDefaultMaxStates = 16384;

// Tolerance on row (or column) sums for a constructed StochasticMatrix and
// on the total mass of a StateVector.
inline constexpr double kSumTolerance = 1e-9;

// Looser tolerance accepted from raw input in strict mode.
inline constexpr double kStrictInputTolerance = 1e-6;

// Negatives no larger than this in magnitude are treated as rounding noise.
inline constexpr double kClampTolerance = 1e-9;

enum class Orientation { kRowStochastic, kLeftStochastic };

enum class RepairPolicy { kStrict, kClampAndRenormalize };

// Square, non-negative matrix whose rows (kRowStochastic) or columns
// (kLeftStochastic) each sum to one. Entries are stored row-major.
class StochasticMatrix {
 public:
  // Builds a row-stochastic matrix from untrusted input. In clamp mode tiny
  // negatives are zeroed, rows are rescaled to sum one, and all-zero rows
  // become uniform.
  static StochasticMatrix from_raw(std::size_t rows, std::size_t cols,
                                   std::span<const double> entries,
                                   RepairPolicy policy,
                                   std::size_t max_states = kDefaultMaxStates);
  static StochasticMatrix from_rows(
      const std::vector<std::vector<double>>& rows,
      RepairPolicy policy = RepairPolicy::kStrict);

  // Adopts entries that already satisfy the invariants for `orientation`;
  // throws if they do not.
  static StochasticMatrix from_normalized(std::size_t n,
                                          std::vector<double> entries,
                                          Orientation orientation);

  static StochasticMatrix identity(std::size_t n);
  static StochasticMatrix uniform(std::size_t n);

  std::size_t size() const noexcept { return n_; }
  Orientation orientation() const noexcept { return orientation_; }
  bool is_row_stochastic() const noexcept {
    return orientation_ == Orientation::kRowStochastic;
  }

  double operator()(std::size_t i, std::size_t j) const noexcept {
    return entries_[i * n_ + j];
  }
  std::span<const double> row(std::size_t i) const noexcept {
    return {entries_.data() + i * n_, n_};
  }
  std::span<const double> entries() const noexcept { return entries_; }

  std::vector<double> column(std::size_t j) const;
  std::vector<double> column_sums() const;

 private:
  StochasticMatrix(std::size_t n, std::vector<double> entries,
                   Orientation orientation)
      : n_(n), entries_(std::move(entries)), orientation_(orientation) {}

  std::size_t n_ = 0;
  std::vector<double> entries_;
  Orientation orientation_ = Orientation::kRowStochastic;
};

// Probability distribution over the states of a chain.
class StateVector {
 public:
  explicit StateVector(std::vector<double> probs);

  static StateVector uniform(std::size_t n);
  static StateVector one_hot(std::size_t n, std::size_t index);
  // Divides non-negative weights by their sum.
  static StateVector normalized(std::vector<double> weights);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const noexcept { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

 private:
  std::vector<double> probs_;
};

struct ChainConfig {
  double alpha = 0.85;
  // Squared L2 distance between successive iterates that ends iteration.
  double tau = 1e-10;
  std::size_t max_iters = 1000;

  // Throws kAlphaOutOfRange or kInvalidConfig.
  void validate() const;
};

struct RankResult {
  StateVector vector;
  std::size_t iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

StochasticMatrix to_left_stochastic(const StochasticMatrix& m);
StochasticMatrix transpose(const StochasticMatrix& m);

// alpha * m + (1 - alpha) / n * ones.
StochasticMatrix teleport_adjust(const StochasticMatrix& m, double alpha);

// 0.5 * (I + m). Keeps the orientation of `m`.
StochasticMatrix mix_identity(const StochasticMatrix& m);

StochasticMatrix chain_multiply(const StochasticMatrix& a,
                                const StochasticMatrix& b);

// v0^T m^steps by repeated vector-matrix products, renormalizing each step.
StateVector bounce(const StochasticMatrix& m, const StateVector& v0,
                   std::size_t steps);

// Plain power iteration on `chain` as given. Stops once the squared step
// difference drops below tau or after max_iters products.
RankResult power_iterate(const StochasticMatrix& chain, const StateVector& v0,
                         double tau, std::size_t max_iters);

// Stationary vector of teleport_adjust(m, cfg.alpha); v0 defaults to uniform.
RankResult steady_state(const StochasticMatrix& m, const ChainConfig& cfg,
                        const std::optional<StateVector>& v0 = std::nullopt);

// Token indices by descending score; equal scores keep ascending index order.
std::vector<std::size_t> rank_order(std::span<const double> scores);

namespace detail {

// out = v^T m for a row-major square m.
void left_multiply(std::span<const double> v, const StochasticMatrix& m,
                   std::span<double> out);

}  // namespace detail

}  // namespace attnchain
