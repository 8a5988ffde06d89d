#pragma once

// Zero-shot segmentation from attention chains, and the Acc / mIoU / AP
// metrics used to score maps against binary ground truth.

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "attnchain/chain.hpp"
#include "attnchain/ops.hpp"
#include "attnchain/tensor_io.hpp"

namespace attnchain {

struct ThresholdRule {
  enum class Kind { kMean, kFixed };
  Kind kind = Kind::kMean;
  double value = 0.0;

  static ThresholdRule mean() { return {}; }
  static ThresholdRule fixed(double t) { return {Kind::kFixed, t}; }
};

struct SegMap {
  Grid size;
  std::vector<double> scores;        // row-major saliency
  std::vector<std::uint8_t> mask;    // 1 where score > threshold
};

struct SegMetrics {
  double accuracy = 0.0;
  double miou = 0.0;
  double ap = 0.0;
};

// Bounce count meaning "iterate to the stationary vector".
inline constexpr std::size_t kSteadyStateBounces = std::numeric_limits<std::size_t>::max();

struct MapRequest {
  std::size_t target = 0;
  std::size_t bounces = 2;
  Direction direction = Direction::kOutgoing;
  HeadScheme scheme = HeadScheme::by_lambda2();
  // Layer ids to average; empty selects every layer.
  std::vector<std::size_t> layers;
  ChainConfig cfg;
  // Bounce on the teleport-adjusted directional chain, the chain whose
  // stationary vector kSteadyStateBounces returns.
  bool teleport = false;
  // Bilinear resize of the token grid; nullopt keeps the grid resolution.
  std::optional<Grid> output_size;
  ThresholdRule threshold = ThresholdRule::mean();
  std::size_t threads = 1;
};

// Heads aggregated by `scheme` within each layer, then layers averaged
// uniformly.
StochasticMatrix aggregate_layers(const AttentionTensor& tensor,
                                  std::span<const std::size_t> layer_ids,
                                  const HeadScheme& scheme, std::size_t threads = 1);

SegMap attention_to_map(const AttentionTensor& tensor, const MapRequest& request);

// Half-pixel-centre bilinear resampling.
std::vector<double> upsample_bilinear(std::span<const double> values, Grid from, Grid to);

SegMap threshold(Grid size, std::vector<double> scores, ThresholdRule rule);

SegMetrics evaluate(const SegMap& pred, const io::BinaryMask& gt);

// Area under the step-wise precision-recall curve; tied scores form one
// operating point. Returns 1 when `gt` has no positives.
double average_precision(std::span<const double> scores,
                         std::span<const std::uint8_t> gt);

// Shannon entropy (nats) of non-negative scores normalized to sum one.
double score_entropy(std::span<const double> scores);

}  // namespace attnchain
