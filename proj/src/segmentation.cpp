#include "attnchain/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "attnchain/error.hpp"
#include "attnchain/parallel.hpp"

namespace attnchain {

StochasticMatrix aggregate_layers(const AttentionTensor& tensor,
                                  std::span<const std::size_t> layer_ids,
                                  const HeadScheme& scheme, std::size_t threads) {
  std::vector<std::size_t> positions;
  if (layer_ids.empty()) {
    positions.resize(tensor.layers());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
  } else {
    for (std::size_t id : layer_ids) positions.push_back(tensor.layer_position(id));
  }
  std::vector<std::optional<StochasticMatrix>> per_layer(positions.size());
  parallel_for(positions.size(), threads, [&](std::size_t k) {
    per_layer[k] = aggregate_heads(tensor.layer(positions[k]), scheme);
  });
  std::vector<StochasticMatrix> layers;
  layers.reserve(per_layer.size());
  for (auto& m : per_layer) layers.push_back(std::move(*m));
  if (layers.size() == 1) return layers.front();
  return aggregate_heads(layers, HeadScheme::uniform());
}

SegMap attention_to_map(const AttentionTensor& tensor, const MapRequest& request) {
  if (!tensor.grid()) fail(ErrorCode::kMissingGrid, "segmentation needs a token grid");
  if (request.target >= tensor.seq_len()) {
    fail(ErrorCode::kIndexOutOfRange, "target token " + std::to_string(request.target));
  }
  const StochasticMatrix chain =
      aggregate_layers(tensor, request.layers, request.scheme, request.threads);

  std::optional<StateVector> v;
  if (request.bounces == kSteadyStateBounces) {
    v = token_rank(chain, request.cfg, request.direction).vector;
  } else if (request.teleport) {
    v = teleported_bounce(chain, request.target, request.bounces, request.direction,
                          request.cfg.alpha);
  } else {
    v = multi_bounce(chain, request.target, request.bounces, request.direction);
  }

  const Grid grid = *tensor.grid();
  std::vector<double> scores;
  scores.reserve(grid.cells());
  for (std::size_t t : tensor.spatial_tokens()) scores.push_back((*v)[t]);

  Grid size = grid;
  if (request.output_size && !(*request.output_size == grid)) {
    size = *request.output_size;
    scores = upsample_bilinear(scores, grid, size);
  }
  return threshold(size, std::move(scores), request.threshold);
}

std::vector<double> upsample_bilinear(std::span<const double> values, Grid from, Grid to) {
  if (values.size() != from.cells()) fail(ErrorCode::kGridMismatch, "source size");
  if (from.cells() == 0 || to.cells() == 0) fail(ErrorCode::kGridMismatch, "empty grid");
  auto source_coord = [](std::size_t dst, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                         static_cast<double>(out) -
                     0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  std::vector<double> out(to.cells());
  for (std::size_t oy = 0; oy < to.height; ++oy) {
    const double sy = source_coord(oy, from.height, to.height);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, from.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < to.width; ++ox) {
      const double sx = source_coord(ox, from.width, to.width);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, from.width - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = values[y0 * from.width + x0] * (1.0 - fx) +
                         values[y0 * from.width + x1] * fx;
      const double bottom = values[y1 * from.width + x0] * (1.0 - fx) +
                            values[y1 * from.width + x1] * fx;
      out[oy * to.width + ox] = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

SegMap threshold(Grid size, std::vector<double> scores, ThresholdRule rule) {
  if (scores.size() != size.cells()) fail(ErrorCode::kGridMismatch, "score count");
  for (double s : scores) {
    if (!std::isfinite(s)) fail(ErrorCode::kNonFinite, "segmentation score");
  }
  double cut = rule.value;
  if (rule.kind == ThresholdRule::Kind::kMean) {
    cut = std::accumulate(scores.begin(), scores.end(), 0.0) /
          static_cast<double>(scores.size());
  }
  SegMap map{size, std::move(scores), {}};
  map.mask.resize(map.scores.size());
  for (std::size_t i = 0; i < map.scores.size(); ++i) {
    map.mask[i] = map.scores[i] > cut ? 1 : 0;
  }
  return map;
}

SegMetrics evaluate(const SegMap& pred, const io::BinaryMask& gt) {
  if (!(pred.size == gt.size) || pred.mask.size() != gt.values.size() ||
      pred.scores.size() != gt.values.size()) {
    fail(ErrorCode::kDimensionMismatch,
         "prediction " + std::to_string(pred.size.height) + "x" +
             std::to_string(pred.size.width) + " vs ground truth " +
             std::to_string(gt.size.height) + "x" + std::to_string(gt.size.width));
  }
  std::size_t agree = 0, fg_inter = 0, fg_union = 0, bg_inter = 0, bg_union = 0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    const bool p = pred.mask[i] != 0;
    const bool g = gt.values[i] != 0;
    agree += p == g;
    fg_inter += p && g;
    fg_union += p || g;
    bg_inter += !p && !g;
    bg_union += !p || !g;
  }
  auto iou = [](std::size_t inter, std::size_t uni) {
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  };
  SegMetrics m;
  m.accuracy = static_cast<double>(agree) / static_cast<double>(gt.values.size());
  m.miou = 0.5 * (iou(fg_inter, fg_union) + iou(bg_inter, bg_union));
  m.ap = average_precision(pred.scores, gt.values);
  return m;
}

double average_precision(std::span<const double> scores,
                         std::span<const std::uint8_t> gt) {
  if (scores.size() != gt.size()) fail(ErrorCode::kDimensionMismatch, "scores vs labels");
  for (double s : scores) {
    if (!std::isfinite(s)) fail(ErrorCode::kNonFinite, "AP score");
  }
  std::size_t positives = 0;
  for (auto g : gt) positives += g != 0;
  if (positives == 0) return 1.0;

  const std::vector<std::size_t> order = rank_order(scores);
  double ap = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    std::size_t group_pos = 0;
    while (end < order.size() && scores[order[end]] == scores[order[start]]) {
      group_pos += gt[order[end]] != 0;
      ++end;
    }
    tp += group_pos;
    fp += (end - start) - group_pos;
    if (group_pos > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      ap += static_cast<double>(group_pos) / static_cast<double>(positives) * precision;
    }
    start = end;
  }
  return ap;
}

double score_entropy(std::span<const double> scores) {
  double total = 0.0;
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0) {
      fail(ErrorCode::kInvalidArgument, "entropy needs non-negative scores");
    }
    total += s;
  }
  if (total <= 0.0) fail(ErrorCode::kInvalidArgument, "entropy of an all-zero map");
  double h = 0.0;
  for (double s : scores) {
    if (s > 0.0) {
      const double p = s / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

}  // namespace attnchain
