#pragma once

// Independent reference computations for the test suites. Nothing here calls
// into the library's iteration or metric code paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <set>
#include <span>
#include <vector>

namespace oracle {

using Dense = std::vector<double>;  // row-major n x n

inline Dense matmul(std::size_t n, const Dense& a, const Dense& b) {
  Dense c(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0.0L;
      for (std::size_t k = 0; k < n; ++k) s += static_cast<long double>(a[i * n + k]) * b[k * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  return c;
}

inline Dense matrix_power(std::size_t n, const Dense& m, std::size_t k) {
  Dense p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) p[i * n + i] = 1.0;
  for (std::size_t s = 0; s < k; ++s) p = matmul(n, p, m);
  return p;
}

// v^T m^k via an explicit matrix power.
inline std::vector<double> vec_times_power(std::span<const double> v, std::size_t n,
                                           const Dense& m, std::size_t k) {
  const Dense p = matrix_power(n, m, k);
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<long double>(v[i]) * p[i * n + j];
    out[j] = static_cast<double>(s);
  }
  return out;
}

// Row-wise softmax; logits equal to -inf contribute zero.
inline Dense softmax_rows(std::size_t n, const Dense& logits) {
  Dense out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, logits[i * n + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double l = logits[i * n + j];
      out[i * n + j] = std::isinf(l) && l < 0 ? 0.0 : std::exp(l - mx);
      s += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  return out;
}

// AP as Σ_k (R_k - R_{k-1}) P_k over the thresholds "score >= t" for every
// distinct score t, visited in descending order.
inline double ap_all_cut_points(std::span<const double> scores,
                                std::span<const std::uint8_t> gt) {
  std::set<double, std::greater<>> cuts(scores.begin(), scores.end());
  std::size_t positives = 0;
  for (auto g : gt) positives += g != 0;
  if (positives == 0) return 1.0;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : cuts) {
    std::size_t tp = 0, predicted = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        ++predicted;
        tp += gt[i] != 0;
      }
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

inline double l1(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

inline double linf(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s = std::max(s, std::abs(a[i] - b[i]));
  return s;
}

}  // namespace oracle
