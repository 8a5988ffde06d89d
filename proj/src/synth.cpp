#include "attnchain/synth.hpp"

#include <string>

#include "attnchain/error.hpp"

namespace attnchain::synth {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

double Rng::uniform() {
  // 53 random mantissa bits, offset by half a step to exclude 0 and 1.
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) fail(ErrorCode::kInvalidArgument, "empty range");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

StochasticMatrix random_chain(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> e(n * n);
  for (double& x : e) x = rng.uniform();
  return StochasticMatrix::from_raw(n, n, e, RepairPolicy::kClampAndRenormalize);
}

std::vector<std::size_t> block_labels(std::size_t n, std::size_t k) {
  if (k == 0 || k > n) {
    fail(ErrorCode::kInvalidArgument,
         std::to_string(k) + " blocks for " + std::to_string(n) + " states");
  }
  std::vector<std::size_t> labels(n);
  const std::size_t base = n / k;
  const std::size_t extra = n % k;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < k; ++b) {
    const std::size_t len = base + (b < extra ? 1 : 0);
    for (std::size_t i = 0; i < len; ++i) labels[pos++] = b;
  }
  return labels;
}

StochasticMatrix block_chain(std::size_t n, std::size_t k, double intra_mass,
                             double jitter, std::uint64_t seed) {
  if (!(intra_mass >= 0.0 && intra_mass <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "intra mass must lie in [0, 1]");
  }
  if (!(jitter >= 0.0 && jitter < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "jitter must lie in [0, 1)");
  }
  const auto labels = block_labels(n, k);
  Rng rng(seed);
  std::vector<double> e(n * n);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double in_sum = 0.0, out_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      w[j] = 1.0 + jitter * (2.0 * rng.uniform() - 1.0);
      (labels[j] == labels[i] ? in_sum : out_sum) += w[j];
    }
    // A single block has nowhere to send cross-block mass.
    const double in_mass = out_sum == 0.0 ? 1.0 : intra_mass;
    for (std::size_t j = 0; j < n; ++j) {
      e[i * n + j] = labels[j] == labels[i] ? in_mass * w[j] / in_sum
                                            : (1.0 - in_mass) * w[j] / out_sum;
    }
  }
  return StochasticMatrix::from_raw(n, n, e, RepairPolicy::kClampAndRenormalize);
}

StochasticMatrix hub_chain() {
  return StochasticMatrix::from_rows({
      {0.05, 0.05, 0.05, 0.80, 0.05},
      {0.60, 0.10, 0.10, 0.10, 0.10},
      {0.60, 0.10, 0.10, 0.10, 0.10},
      {0.05, 0.05, 0.05, 0.05, 0.80},
      {0.50, 0.05, 0.05, 0.10, 0.30},
  });
}

StochasticMatrix sink_planted_chain(std::size_t height, std::size_t width,
                                    std::size_t target, double sink_mass,
                                    double target_mass) {
  const std::size_t spatial = height * width;
  const std::size_t n = spatial + 1;
  if (spatial == 0 || width < 2) fail(ErrorCode::kInvalidArgument, "grid too small");
  if (target == 0 || target >= n) {
    fail(ErrorCode::kIndexOutOfRange, "target must be a spatial token");
  }
  if (!(sink_mass >= 0.0 && target_mass >= 0.0 && sink_mass + target_mass < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "sink and target mass must leave room");
  }
  auto is_left = [&](std::size_t token) {
    return token > 0 && (token - 1) % width < width / 2;
  };
  std::size_t right_count = 0;
  for (std::size_t t = 1; t < n; ++t) right_count += is_left(t) ? 0 : 1;

  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = e.data() + i * n;
    if (i == 0 || is_left(i)) {
      for (std::size_t j = 1; j < n; ++j) row[j] = 1.0 / static_cast<double>(spatial);
      continue;
    }
    row[0] = sink_mass;
    row[target] += target_mass;
    const double rest = (1.0 - sink_mass - target_mass) / static_cast<double>(right_count);
    for (std::size_t j = 1; j < n; ++j) {
      if (!is_left(j)) row[j] += rest;
    }
  }
  return StochasticMatrix::from_raw(n, n, e, RepairPolicy::kClampAndRenormalize);
}

}  // namespace attnchain::synth
