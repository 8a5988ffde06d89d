#include "attnchain/spectral.hpp"

#include <cmath>
#include <complex>
#include <random>
#include <string>

#include "attnchain/dense_eigen.hpp"
#include "attnchain/error.hpp"
#include "attnchain/parallel.hpp"

namespace attnchain {
namespace {

using Block = std::vector<std::vector<double>>;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Modified Gram-Schmidt, applied twice. Columns that collapse to numerical
// zero are zeroed rather than renormalized.
void orthonormalize(Block& q) {
  for (std::size_t c = 0; c < q.size(); ++c) {
    auto& v = q[c];
    const double before = std::sqrt(dot(v, v));
    if (before == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < c; ++k) {
        const double proj = dot(q[k], v);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * q[k][i];
      }
    }
    const double after = std::sqrt(dot(v, v));
    if (after <= 1e-13 * before) {
      std::fill(v.begin(), v.end(), 0.0);
    } else {
      for (double& x : v) x /= after;
    }
  }
}

// z_c = (A - e π^T)^T q_c with π uniform. For a row-stochastic A this
// operator has the spectrum of A with the unit eigenvalue replaced by zero
// (Brauer's deflation holds for any π with π^T e = 1).
void apply_deflated(const StochasticMatrix& a, const Block& q, Block& z) {
  const std::size_t n = a.size();
  for (std::size_t c = 0; c < q.size(); ++c) {
    std::fill(z[c].begin(), z[c].end(), 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = a.row(i);
    for (std::size_t c = 0; c < q.size(); ++c) {
      const double w = q[c][i];
      if (w == 0.0) continue;
      auto& out = z[c];
      for (std::size_t j = 0; j < n; ++j) out[j] += w * row[j];
    }
  }
  for (std::size_t c = 0; c < q.size(); ++c) {
    double sum = 0.0;
    for (double x : q[c]) sum += x;
    const double shift = sum / static_cast<double>(n);
    for (double& x : z[c]) x -= shift;
  }
}

StochasticMatrix spectral_operand(const StochasticMatrix& m,
                                  const Lambda2Options& opts) {
  StochasticMatrix rows = m.is_row_stochastic() ? m : transpose(m);
  if (opts.adjusted) return teleport_adjust(rows, opts.alpha);
  return rows;
}

double lambda2_dense_raw(const StochasticMatrix& m) {
  if (m.size() < 2) return 0.0;
  const auto w = dense::eigenvalues(m.size(), m.entries());
  return std::abs(w[1]);
}

double lambda2_deflated_raw(const StochasticMatrix& a, const Lambda2Options& opts) {
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  const std::size_t p = std::max<std::size_t>(1, std::min(opts.block_size, n - 1));

  std::mt19937_64 rng(0x5eed1234abcdULL);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Block q(p, std::vector<double>(n));
  for (auto& col : q) {
    for (double& x : col) x = unif(rng);
  }
  orthonormalize(q);
  Block z(p, std::vector<double>(n));

  double previous = -1.0;
  int stable = 0;
  for (std::size_t it = 0; it < opts.max_iters; ++it) {
    apply_deflated(a, q, z);
    std::vector<double> h(p * p);
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t j = 0; j < p; ++j) h[i * p + j] = dot(q[i], z[j]);
    }
    const double theta = std::abs(dense::eigenvalues(p, h).front());
    if (std::abs(theta - previous) < opts.tolerance) {
      if (++stable >= 3) return theta;
    } else {
      stable = 0;
    }
    previous = theta;
    q.swap(z);
    orthonormalize(q);
  }
  fail(ErrorCode::kConvergenceFailure,
       "deflated power iteration exceeded " + std::to_string(opts.max_iters) +
           " iterations");
}

bool use_dense(std::size_t n, SpectralMethod method) {
  switch (method) {
    case SpectralMethod::kDense: return true;
    case SpectralMethod::kDeflatedPower: return false;
    case SpectralMethod::kAuto: return n <= kDenseCrossover;
  }
  return true;
}

}  // namespace

double lambda2(const StochasticMatrix& m, const Lambda2Options& opts) {
  const StochasticMatrix a = spectral_operand(m, opts);
  return use_dense(a.size(), opts.method) ? lambda2_dense_raw(a)
                                          : lambda2_deflated_raw(a, opts);
}

double lambda2_deflated(const StochasticMatrix& m, const Lambda2Options& opts) {
  return lambda2_deflated_raw(spectral_operand(m, opts), opts);
}

SpectralSummary lambda2_weights(std::span<const StochasticMatrix> heads,
                                const Lambda2Options& opts, std::size_t threads) {
  if (heads.empty()) fail(ErrorCode::kEmptyHeadList, "no heads to weight");
  const std::size_t n = heads.front().size();
  for (const auto& h : heads) {
    if (h.size() != n) {
      fail(ErrorCode::kDimensionMismatch,
           "head with " + std::to_string(h.size()) + " states, expected " +
               std::to_string(n));
    }
  }

  SpectralSummary out;
  out.method = use_dense(n, opts.method) ? SpectralMethod::kDense
                                         : SpectralMethod::kDeflatedPower;
  out.per_head_lambda2.assign(heads.size(), 0.0);
  parallel_for(heads.size(), threads, [&](std::size_t h) {
    out.per_head_lambda2[h] = lambda2(heads[h], opts);
  });

  double total = 0.0;
  bool all_tiny = true;
  for (double l : out.per_head_lambda2) {
    total += l;
    if (l >= 1e-12) all_tiny = false;
  }
  out.weights.resize(heads.size());
  if (all_tiny) {
    out.uniform_fallback = true;
    std::fill(out.weights.begin(), out.weights.end(),
              1.0 / static_cast<double>(heads.size()));
  } else {
    for (std::size_t h = 0; h < heads.size(); ++h) {
      out.weights[h] = out.per_head_lambda2[h] / total;
    }
  }
  return out;
}

StateVector dense_left_eigvec_oracle(const StochasticMatrix& m) {
  const std::size_t n = m.size();
  if (n > kDenseCrossover) {
    fail(ErrorCode::kSizeExceeded,
         std::to_string(n) + " states exceeds the dense limit");
  }
  for (double x : m.entries()) {
    if (!(x > 0.0)) fail(ErrorCode::kNonPositiveMatrix, "entry not strictly positive");
  }
  // Perron root: the dominant eigenvalue of a positive matrix is real.
  const double root = dense::eigenvalues(n, m.entries()).front().real();

  // (M^T - root I) v = 0 with the last equation replaced by sum(v) = 1.
  std::vector<double> sys(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) sys[i * n + j] = m(j, i);
    sys[i * n + i] -= root;
  }
  for (std::size_t j = 0; j < n; ++j) sys[(n - 1) * n + j] = 1.0;
  std::vector<double> rhs(n, 0.0);
  rhs[n - 1] = 1.0;
  std::vector<double> v = dense::solve(n, std::move(sys), std::move(rhs));
  for (double& x : v) {
    if (x < 0.0) {
      if (x < -1e-12) {
        fail(ErrorCode::kConvergenceFailure, "oracle produced a negative component");
      }
      x = 0.0;
    }
  }
  return StateVector::normalized(std::move(v));
}

}  // namespace attnchain
