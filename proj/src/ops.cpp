#include "attnchain/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "attnchain/error.hpp"
#include "attnchain/parallel.hpp"
#include "attnchain/synth.hpp"

namespace attnchain {

AttentionTensor::AttentionTensor(std::vector<std::vector<StochasticMatrix>> layers,
                                 std::vector<std::size_t> special_tokens,
                                 std::optional<Grid> grid,
                                 std::vector<std::size_t> layer_ids)
    : layers_(std::move(layers)),
      special_(std::move(special_tokens)),
      grid_(grid),
      layer_ids_(std::move(layer_ids)) {
  if (layers_.empty()) fail(ErrorCode::kInvalidArgument, "tensor has no layers");
  seq_len_ = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].empty()) {
      fail(ErrorCode::kEmptyHeadList, "layer " + std::to_string(l) + " has no heads");
    }
    for (const auto& m : layers_[l]) {
      if (seq_len_ == 0) seq_len_ = m.size();
      if (m.size() != seq_len_) {
        fail(ErrorCode::kDimensionMismatch,
             "layer " + std::to_string(l) + " has a " + std::to_string(m.size()) +
                 "-state head, expected " + std::to_string(seq_len_));
      }
      if (!m.is_row_stochastic()) {
        fail(ErrorCode::kOrientationMismatch, "attention heads must be row-stochastic");
      }
    }
  }

  std::sort(special_.begin(), special_.end());
  if (std::adjacent_find(special_.begin(), special_.end()) != special_.end()) {
    fail(ErrorCode::kInvalidArgument, "duplicate special token");
  }
  if (!special_.empty() && special_.back() >= seq_len_) {
    fail(ErrorCode::kIndexOutOfRange,
         "special token " + std::to_string(special_.back()) + " >= seq_len");
  }
  if (grid_ && grid_->cells() + special_.size() != seq_len_) {
    fail(ErrorCode::kGridMismatch,
         std::to_string(grid_->height) + "x" + std::to_string(grid_->width) +
             " grid plus " + std::to_string(special_.size()) +
             " special tokens != seq_len " + std::to_string(seq_len_));
  }

  if (layer_ids_.empty()) {
    layer_ids_.resize(layers_.size());
    std::iota(layer_ids_.begin(), layer_ids_.end(), std::size_t{0});
  }
  if (layer_ids_.size() != layers_.size()) {
    fail(ErrorCode::kDimensionMismatch, "one layer id per layer required");
  }
  auto sorted = layer_ids_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    fail(ErrorCode::kInvalidArgument, "duplicate layer id");
  }
}

std::size_t AttentionTensor::layer_position(std::size_t layer_id) const {
  const auto it = std::find(layer_ids_.begin(), layer_ids_.end(), layer_id);
  if (it == layer_ids_.end()) {
    fail(ErrorCode::kIndexOutOfRange, "no layer " + std::to_string(layer_id));
  }
  return static_cast<std::size_t>(it - layer_ids_.begin());
}

bool AttentionTensor::is_special(std::size_t token) const {
  return std::binary_search(special_.begin(), special_.end(), token);
}

std::vector<std::size_t> AttentionTensor::spatial_tokens() const {
  std::vector<std::size_t> out;
  out.reserve(seq_len_ - special_.size());
  for (std::size_t t = 0; t < seq_len_; ++t) {
    if (!is_special(t)) out.push_back(t);
  }
  return out;
}

std::string_view to_string(Direction d) {
  return d == Direction::kIncoming ? "incoming" : "outgoing";
}

Direction parse_direction(std::string_view text) {
  if (text == "incoming") return Direction::kIncoming;
  if (text == "outgoing") return Direction::kOutgoing;
  fail(ErrorCode::kInvalidArgument, "unknown direction '" + std::string(text) + "'");
}

namespace {

void check_token(const StochasticMatrix& m, std::size_t t) {
  if (t >= m.size()) {
    fail(ErrorCode::kIndexOutOfRange,
         "token " + std::to_string(t) + " of " + std::to_string(m.size()));
  }
}

}  // namespace

StateVector row_select(const StochasticMatrix& m, std::size_t i) {
  check_token(m, i);
  return bounce(m, StateVector::one_hot(m.size(), i), 1);
}

StateVector column_select(const StochasticMatrix& m, std::size_t j) {
  check_token(m, j);
  // Column j of the left-stochastic chain is row j of its transpose.
  return bounce(outgoing_chain(m), StateVector::one_hot(m.size(), j), 1);
}

StateVector column_sum(const StochasticMatrix& m) {
  return bounce(m, StateVector::uniform(m.size()), 1);
}

StochasticMatrix outgoing_chain(const StochasticMatrix& m) {
  return transpose(to_left_stochastic(m));
}

StateVector multi_bounce(const StochasticMatrix& m, std::size_t token,
                         std::size_t bounces, Direction dir) {
  check_token(m, token);
  const auto start = StateVector::one_hot(m.size(), token);
  if (dir == Direction::kIncoming) return bounce(m, start, bounces);
  return bounce(outgoing_chain(m), start, bounces);
}

StateVector teleported_bounce(const StochasticMatrix& m, std::size_t token,
                              std::size_t bounces, Direction dir, double alpha) {
  check_token(m, token);
  const StochasticMatrix walk = dir == Direction::kIncoming ? m : outgoing_chain(m);
  return bounce(teleport_adjust(walk, alpha), StateVector::one_hot(m.size(), token), bounces);
}

RankResult token_rank(const StochasticMatrix& m, const ChainConfig& cfg,
                      Direction dir, const std::optional<StateVector>& v0) {
  if (dir == Direction::kIncoming) return steady_state(m, cfg, v0);
  return steady_state(outgoing_chain(m), cfg, v0);
}

std::string_view to_string(HeadScheme::Kind k) {
  switch (k) {
    case HeadScheme::Kind::kUniform: return "uniform";
    case HeadScheme::Kind::kLambda2: return "lambda2";
    case HeadScheme::Kind::kExplicit: return "explicit";
  }
  return "uniform";
}

HeadScheme::Kind parse_head_scheme(std::string_view text) {
  if (text == "uniform") return HeadScheme::Kind::kUniform;
  if (text == "lambda2") return HeadScheme::Kind::kLambda2;
  fail(ErrorCode::kInvalidArgument, "unknown head scheme '" + std::string(text) + "'");
}

std::vector<double> head_weights(std::span<const StochasticMatrix> heads,
                                 const HeadScheme& scheme, std::size_t threads) {
  if (heads.empty()) fail(ErrorCode::kEmptyHeadList, "no heads to aggregate");
  const std::size_t n = heads.front().size();
  for (const auto& h : heads) {
    if (h.size() != n) fail(ErrorCode::kDimensionMismatch, "heads differ in size");
  }
  switch (scheme.kind) {
    case HeadScheme::Kind::kUniform:
      return std::vector<double>(heads.size(), 1.0 / static_cast<double>(heads.size()));
    case HeadScheme::Kind::kLambda2:
      return lambda2_weights(heads, scheme.lambda2, threads).weights;
    case HeadScheme::Kind::kExplicit:
      break;
  }
  const auto& w = scheme.weights;
  if (w.size() != heads.size()) {
    fail(ErrorCode::kInvalidWeights, std::to_string(w.size()) + " weights for " +
                                         std::to_string(heads.size()) + " heads");
  }
  double total = 0.0;
  for (double x : w) {
    if (!std::isfinite(x) || x < 0.0) fail(ErrorCode::kInvalidWeights, "negative weight");
    total += x;
  }
  if (std::abs(total - 1.0) > kSumTolerance) {
    fail(ErrorCode::kInvalidWeights, "weights sum to " + std::to_string(total));
  }
  return w;
}

StochasticMatrix aggregate_heads(std::span<const StochasticMatrix> heads,
                                 const HeadScheme& scheme, std::size_t threads) {
  for (const auto& head : heads) {
    if (!head.is_row_stochastic()) {
      fail(ErrorCode::kOrientationMismatch, "heads must be row-stochastic");
    }
  }
  // A lone head carries weight one under every scheme.
  if (heads.size() == 1 && scheme.kind != HeadScheme::Kind::kExplicit) return heads.front();
  const std::vector<double> w = head_weights(heads, scheme, threads);
  if (heads.size() == 1) return heads.front();
  const std::size_t n = heads.front().size();
  std::vector<double> out(n * n, 0.0);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto e = heads[h].entries();
    for (std::size_t k = 0; k < n * n; ++k) out[k] += w[h] * e[k];
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += out[i * n + j];
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= s;
  }
  return StochasticMatrix::from_normalized(n, std::move(out),
                                           Orientation::kRowStochastic);
}

StochasticMatrix mask_columns(const StochasticMatrix& m,
                              std::span<const std::size_t> tokens) {
  if (!m.is_row_stochastic()) {
    fail(ErrorCode::kOrientationMismatch, "mask_columns requires a row-stochastic matrix");
  }
  const std::size_t n = m.size();
  std::vector<char> masked(n, 0);
  std::size_t count = 0;
  for (std::size_t t : tokens) {
    check_token(m, t);
    if (!masked[t]) ++count;
    masked[t] = 1;
  }
  if (count == n) fail(ErrorCode::kAllTokensMasked, "no unmasked token left");

  std::vector<double> out(m.entries().begin(), m.entries().end());
  const double spread = 1.0 / static_cast<double>(n - count);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.data() + i * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (masked[j]) row[j] = 0.0;
      s += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (masked[j]) continue;
      row[j] = s == 0.0 ? spread : row[j] / s;
    }
  }
  return StochasticMatrix::from_normalized(n, std::move(out),
                                           Orientation::kRowStochastic);
}

std::string_view to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::kRandom: return "random";
    case MaskStrategy::kCenterToken: return "center-token";
    case MaskStrategy::kColumnSum: return "column-sum";
    case MaskStrategy::kClsToken: return "cls-token";
    case MaskStrategy::kTokenRank: return "token-rank";
  }
  return "token-rank";
}

MaskStrategy parse_mask_strategy(std::string_view text) {
  for (auto s : {MaskStrategy::kRandom, MaskStrategy::kCenterToken,
                 MaskStrategy::kColumnSum, MaskStrategy::kClsToken,
                 MaskStrategy::kTokenRank}) {
    if (to_string(s) == text) return s;
  }
  fail(ErrorCode::kInvalidArgument, "unknown strategy '" + std::string(text) + "'");
}

std::size_t center_token(const AttentionTensor& tensor) {
  if (!tensor.grid()) fail(ErrorCode::kMissingGrid, "center token needs a grid");
  const Grid g = *tensor.grid();
  const std::size_t cell = (g.height / 2) * g.width + g.width / 2;
  return tensor.spatial_tokens().at(cell);
}

MaskOrder masking_order(const AttentionTensor& tensor, const MaskOrderOptions& opts) {
  if (!(opts.layer_fraction > 0.0 && opts.layer_fraction <= 1.0)) {
    fail(ErrorCode::kInvalidConfig, "layer fraction must lie in (0, 1]");
  }
  const std::vector<std::size_t> maskable = tensor.spatial_tokens();
  MaskOrder out;

  if (opts.strategy == MaskStrategy::kRandom) {
    out.tokens = maskable;
    synth::Rng rng(opts.seed);
    for (std::size_t i = out.tokens.size(); i > 1; --i) {
      std::swap(out.tokens[i - 1], out.tokens[rng.below(i)]);
    }
    return out;
  }

  std::size_t probe = 0;
  if (opts.strategy == MaskStrategy::kCenterToken) {
    probe = center_token(tensor);
  } else if (opts.strategy == MaskStrategy::kClsToken) {
    if (tensor.special_tokens().empty()) {
      fail(ErrorCode::kMissingSpecialTokens, "cls strategy needs a special token");
    }
    probe = tensor.special_tokens().front();
  }
  opts.cfg.validate();

  const auto used = static_cast<std::size_t>(
      std::ceil(opts.layer_fraction * static_cast<double>(tensor.layers())));
  const std::size_t layers = std::clamp<std::size_t>(used, 1, tensor.layers());
  const std::size_t n = tensor.seq_len();

  std::vector<std::vector<double>> layer_scores(layers, std::vector<double>(n, 0.0));
  parallel_for(layers, opts.threads, [&](std::size_t l) {
    const auto heads = tensor.layer(l);
    const std::vector<double> w = head_weights(
        heads, opts.lambda2_weighting ? HeadScheme::by_lambda2() : HeadScheme::uniform());
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const StochasticMatrix& m = heads[h];
      StateVector s = [&] {
        switch (opts.strategy) {
          case MaskStrategy::kCenterToken: return column_select(m, probe);
          case MaskStrategy::kClsToken: return row_select(m, probe);
          case MaskStrategy::kColumnSum: return column_sum(m);
          default: return token_rank(m, opts.cfg, Direction::kIncoming).vector;
        }
      }();
      for (std::size_t t = 0; t < n; ++t) layer_scores[l][t] += w[h] * s[t];
    }
  });

  std::vector<double> scores(n, 0.0);
  for (const auto& ls : layer_scores) {
    for (std::size_t t = 0; t < n; ++t) scores[t] += ls[t] / static_cast<double>(layers);
  }
  std::vector<double> maskable_scores(maskable.size());
  for (std::size_t k = 0; k < maskable.size(); ++k) maskable_scores[k] = scores[maskable[k]];
  for (std::size_t k : rank_order(maskable_scores)) out.tokens.push_back(maskable[k]);
  out.scores = std::move(scores);
  return out;
}

}  // namespace attnchain
