#include "attnchain/chain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "attnchain/error.hpp"

namespace attnchain {
namespace {

std::string at(std::size_t i, std::size_t j) {
  return "(" + std::to_string(i) + ", " + std::to_string(j) + ")";
}

void check_invariants(std::size_t n, std::span<const double> entries,
                      Orientation orientation) {
  if (n == 0) fail(ErrorCode::kNonSquare, "matrix has no states");
  if (entries.size() != n * n) {
    fail(ErrorCode::kDimensionMismatch,
         "expected " + std::to_string(n * n) + " entries, got " +
             std::to_string(entries.size()));
  }
  std::vector<double> sums(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double x = entries[i * n + j];
      if (!std::isfinite(x)) fail(ErrorCode::kNonFinite, "entry " + at(i, j));
      if (x < 0.0) fail(ErrorCode::kNegativeEntry, "entry " + at(i, j));
      sums[orientation == Orientation::kRowStochastic ? i : j] += x;
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(sums[k] - 1.0) > kSumTolerance) {
      fail(ErrorCode::kRowSumViolation,
           (orientation == Orientation::kRowStochastic ? "row " : "column ") +
               std::to_string(k) + " sums to " + std::to_string(sums[k]));
    }
  }
}

void normalize_in_place(std::span<double> v) {
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (double& x : v) x /= s;
}

// Rows renormalized to absorb rounding; used after convex combinations.
void renormalize_rows(std::size_t n, std::vector<double>& entries) {
  for (std::size_t i = 0; i < n; ++i) {
    normalize_in_place(std::span<double>(entries.data() + i * n, n));
  }
}

void require_row_stochastic(const StochasticMatrix& m, const char* op) {
  if (!m.is_row_stochastic()) {
    fail(ErrorCode::kOrientationMismatch,
         std::string(op) + " requires a row-stochastic matrix");
  }
}

}  // namespace

StochasticMatrix StochasticMatrix::from_raw(std::size_t rows, std::size_t cols,
                                            std::span<const double> entries,
                                            RepairPolicy policy,
                                            std::size_t max_states) {
  if (rows != cols || rows == 0) {
    fail(ErrorCode::kNonSquare,
         "shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  const std::size_t n = rows;
  if (n > max_states) {
    fail(ErrorCode::kSizeExceeded, std::to_string(n) + " states exceeds cap " +
                                       std::to_string(max_states));
  }
  if (entries.size() != n * n) {
    fail(ErrorCode::kDimensionMismatch,
         "expected " + std::to_string(n * n) + " entries, got " +
             std::to_string(entries.size()));
  }

  std::vector<double> out(entries.begin(), entries.end());
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> row(out.data() + i * n, n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double& x = row[j];
      if (!std::isfinite(x)) fail(ErrorCode::kNonFinite, "entry " + at(i, j));
      if (x < 0.0) {
        if (policy == RepairPolicy::kStrict || -x > kClampTolerance) {
          fail(ErrorCode::kNegativeEntry, "entry " + at(i, j));
        }
        x = 0.0;
      }
      sum += x;
    }
    if (policy == RepairPolicy::kStrict) {
      if (std::abs(sum - 1.0) > kStrictInputTolerance) {
        fail(ErrorCode::kRowSumViolation,
             "row " + std::to_string(i) + " sums to " + std::to_string(sum));
      }
      if (std::abs(sum - 1.0) > kSumTolerance) normalize_in_place(row);
    } else if (sum == 0.0) {
      std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(n));
    } else {
      for (double& x : row) x /= sum;
    }
  }
  return StochasticMatrix(n, std::move(out), Orientation::kRowStochastic);
}

StochasticMatrix StochasticMatrix::from_rows(
    const std::vector<std::vector<double>>& rows, RepairPolicy policy) {
  const std::size_t n = rows.size();
  std::vector<double> flat;
  flat.reserve(n * n);
  for (const auto& r : rows) {
    if (r.size() != n) {
      fail(ErrorCode::kNonSquare, "row of length " + std::to_string(r.size()) +
                                      " in " + std::to_string(n) + "-row matrix");
    }
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return from_raw(n, n, flat, policy);
}

StochasticMatrix StochasticMatrix::from_normalized(std::size_t n,
                                                   std::vector<double> entries,
                                                   Orientation orientation) {
  check_invariants(n, entries, orientation);
  return StochasticMatrix(n, std::move(entries), orientation);
}

StochasticMatrix StochasticMatrix::identity(std::size_t n) {
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) e[i * n + i] = 1.0;
  return from_normalized(n, std::move(e), Orientation::kRowStochastic);
}

StochasticMatrix StochasticMatrix::uniform(std::size_t n) {
  return from_normalized(n, std::vector<double>(n * n, 1.0 / static_cast<double>(n)),
                         Orientation::kRowStochastic);
}

std::vector<double> StochasticMatrix::column(std::size_t j) const {
  std::vector<double> c(n_);
  for (std::size_t i = 0; i < n_; ++i) c[i] = entries_[i * n_ + j];
  return c;
}

std::vector<double> StochasticMatrix::column_sums() const {
  std::vector<double> s(n_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j) s[j] += entries_[i * n_ + j];
  }
  return s;
}

StateVector::StateVector(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) fail(ErrorCode::kInvalidDistribution, "empty vector");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    const double x = probs_[i];
    if (!std::isfinite(x) || x < 0.0) {
      fail(ErrorCode::kInvalidDistribution,
           "entry " + std::to_string(i) + " = " + std::to_string(x));
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    fail(ErrorCode::kInvalidDistribution, "sums to " + std::to_string(sum));
  }
}

StateVector StateVector::uniform(std::size_t n) {
  return StateVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

StateVector StateVector::one_hot(std::size_t n, std::size_t index) {
  if (index >= n) {
    fail(ErrorCode::kIndexOutOfRange,
         "token " + std::to_string(index) + " of " + std::to_string(n));
  }
  std::vector<double> v(n, 0.0);
  v[index] = 1.0;
  return StateVector(std::move(v));
}

StateVector StateVector::normalized(std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      fail(ErrorCode::kInvalidDistribution, "negative or non-finite weight");
    }
    sum += w;
  }
  if (sum <= 0.0) fail(ErrorCode::kInvalidDistribution, "zero total mass");
  for (double& w : weights) w /= sum;
  return StateVector(std::move(weights));
}

void ChainConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    fail(ErrorCode::kAlphaOutOfRange, "alpha = " + std::to_string(alpha));
  }
  if (!(tau > 0.0)) fail(ErrorCode::kInvalidConfig, "tau must be positive");
  if (max_iters < 1) fail(ErrorCode::kInvalidConfig, "max_iters must be >= 1");
}

StochasticMatrix to_left_stochastic(const StochasticMatrix& m) {
  const std::size_t n = m.size();
  std::vector<double> sums = m.column_sums();
  std::vector<double> out(m.entries().begin(), m.entries().end());
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(sums[j])) fail(ErrorCode::kNonFinite, "column sum");
  }
  const double u = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double& x = out[i * n + j];
      x = sums[j] == 0.0 ? u : x / sums[j];
    }
  }
  return StochasticMatrix::from_normalized(n, std::move(out),
                                           Orientation::kLeftStochastic);
}

StochasticMatrix transpose(const StochasticMatrix& m) {
  const std::size_t n = m.size();
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * n + i] = m(i, j);
  }
  const Orientation flipped = m.is_row_stochastic()
                                  ? Orientation::kLeftStochastic
                                  : Orientation::kRowStochastic;
  return StochasticMatrix::from_normalized(n, std::move(out), flipped);
}

StochasticMatrix teleport_adjust(const StochasticMatrix& m, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    fail(ErrorCode::kAlphaOutOfRange, "alpha = " + std::to_string(alpha));
  }
  require_row_stochastic(m, "teleport_adjust");
  const std::size_t n = m.size();
  const double jump = (1.0 - alpha) / static_cast<double>(n);
  std::vector<double> out(m.entries().begin(), m.entries().end());
  for (double& x : out) x = alpha * x + jump;
  return StochasticMatrix::from_normalized(n, std::move(out),
                                           Orientation::kRowStochastic);
}

StochasticMatrix mix_identity(const StochasticMatrix& m) {
  const std::size_t n = m.size();
  std::vector<double> out(m.entries().begin(), m.entries().end());
  for (double& x : out) x *= 0.5;
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] += 0.5;
  return StochasticMatrix::from_normalized(n, std::move(out), m.orientation());
}

StochasticMatrix chain_multiply(const StochasticMatrix& a,
                                const StochasticMatrix& b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kDimensionMismatch,
         std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  require_row_stochastic(a, "chain_multiply");
  require_row_stochastic(b, "chain_multiply");
  const std::size_t n = a.size();
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    detail::left_multiply(a.row(i), b, std::span<double>(out.data() + i * n, n));
  }
  renormalize_rows(n, out);
  return StochasticMatrix::from_normalized(n, std::move(out),
                                           Orientation::kRowStochastic);
}

void detail::left_multiply(std::span<const double> v, const StochasticMatrix& m,
                           std::span<double> out) {
  const std::size_t n = m.size();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = v[k];
    if (w == 0.0) continue;
    const double* row = m.entries().data() + k * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += w * row[j];
  }
}

StateVector bounce(const StochasticMatrix& m, const StateVector& v0,
                   std::size_t steps) {
  require_row_stochastic(m, "bounce");
  if (v0.size() != m.size()) {
    fail(ErrorCode::kInvalidDistribution,
         "vector of length " + std::to_string(v0.size()) + " for " +
             std::to_string(m.size()) + " states");
  }
  std::vector<double> cur(v0.probs().begin(), v0.probs().end());
  std::vector<double> next(cur.size());
  for (std::size_t s = 0; s < steps; ++s) {
    detail::left_multiply(cur, m, next);
    normalize_in_place(next);
    cur.swap(next);
  }
  return StateVector(std::move(cur));
}

RankResult power_iterate(const StochasticMatrix& chain, const StateVector& v0,
                         double tau, std::size_t max_iters) {
  require_row_stochastic(chain, "power_iterate");
  if (v0.size() != chain.size()) {
    fail(ErrorCode::kInvalidDistribution,
         "vector of length " + std::to_string(v0.size()) + " for " +
             std::to_string(chain.size()) + " states");
  }
  if (!(tau > 0.0) || max_iters < 1) {
    fail(ErrorCode::kInvalidConfig, "tau must be positive and max_iters >= 1");
  }
  std::vector<double> cur(v0.probs().begin(), v0.probs().end());
  std::vector<double> next(cur.size());
  double residual = 0.0;
  std::size_t it = 0;
  while (it < max_iters) {
    detail::left_multiply(cur, chain, next);
    normalize_in_place(next);
    ++it;
    residual = 0.0;
    for (std::size_t j = 0; j < cur.size(); ++j) {
      const double d = next[j] - cur[j];
      residual += d * d;
    }
    cur.swap(next);
    if (residual < tau) break;
  }
  return RankResult{StateVector(std::move(cur)), it, residual, residual < tau};
}

RankResult steady_state(const StochasticMatrix& m, const ChainConfig& cfg,
                        const std::optional<StateVector>& v0) {
  cfg.validate();
  const StochasticMatrix adjusted = teleport_adjust(m, cfg.alpha);
  return power_iterate(adjusted, v0 ? *v0 : StateVector::uniform(m.size()),
                       cfg.tau, cfg.max_iters);
}

std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  return idx;
}

}  // namespace attnchain
