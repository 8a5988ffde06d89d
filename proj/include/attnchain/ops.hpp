#pragma once

// Attention operations expressed as chain transitions: selections, column
// sums, multi-bounce attention, TokenRank, head aggregation and masking.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "attnchain/chain.hpp"
#include "attnchain/spectral.hpp"

namespace attnchain {

struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t cells() const noexcept { return height * width; }
  bool operator==(const Grid&) const = default;
};

// Per-layer, per-head attention chains over one token sequence.
class AttentionTensor {
 public:
  // `layer_ids` defaults to 0..layers-1. Special tokens are sorted on entry.
  AttentionTensor(std::vector<std::vector<StochasticMatrix>> layers,
                  std::vector<std::size_t> special_tokens,
                  std::optional<Grid> grid,
                  std::vector<std::size_t> layer_ids = {});

  std::size_t layers() const noexcept { return layers_.size(); }
  std::size_t heads(std::size_t layer) const { return layers_.at(layer).size(); }
  std::size_t seq_len() const noexcept { return seq_len_; }

  const StochasticMatrix& matrix(std::size_t layer, std::size_t head) const {
    return layers_.at(layer).at(head);
  }
  std::span<const StochasticMatrix> layer(std::size_t layer) const {
    return layers_.at(layer);
  }

  const std::vector<std::size_t>& special_tokens() const noexcept { return special_; }
  const std::optional<Grid>& grid() const noexcept { return grid_; }
  const std::vector<std::size_t>& layer_ids() const noexcept { return layer_ids_; }

  // Position of a layer id within layers(); throws kIndexOutOfRange.
  std::size_t layer_position(std::size_t layer_id) const;
  bool is_special(std::size_t token) const;
  // Non-special tokens in sequence order; these map row-major onto the grid.
  std::vector<std::size_t> spatial_tokens() const;

 private:
  std::vector<std::vector<StochasticMatrix>> layers_;
  std::vector<std::size_t> special_;
  std::optional<Grid> grid_;
  std::vector<std::size_t> layer_ids_;
  std::size_t seq_len_ = 0;
};

enum class Direction { kIncoming, kOutgoing };

std::string_view to_string(Direction d);
// Accepts "incoming" / "outgoing"; throws kInvalidArgument otherwise.
Direction parse_direction(std::string_view text);

StateVector row_select(const StochasticMatrix& m, std::size_t i);
StateVector column_select(const StochasticMatrix& m, std::size_t j);
StateVector column_sum(const StochasticMatrix& m);

// Chain whose forward steps follow attention out of a token:
// transpose(to_left_stochastic(m)).
StochasticMatrix outgoing_chain(const StochasticMatrix& m);

StateVector multi_bounce(const StochasticMatrix& m, std::size_t token,
                         std::size_t bounces, Direction dir);

// Bounces on teleport_adjust(directional chain, alpha); as `bounces` grows
// these converge to token_rank(m, cfg, dir) with cfg.alpha = alpha.
StateVector teleported_bounce(const StochasticMatrix& m, std::size_t token,
                              std::size_t bounces, Direction dir, double alpha);

RankResult token_rank(const StochasticMatrix& m, const ChainConfig& cfg,
                      Direction dir,
                      const std::optional<StateVector>& v0 = std::nullopt);

struct HeadScheme {
  enum class Kind { kUniform, kLambda2, kExplicit };
  Kind kind = Kind::kUniform;
  std::vector<double> weights;  // kExplicit only
  Lambda2Options lambda2;       // kLambda2 only

  static HeadScheme uniform() { return {}; }
  static HeadScheme by_lambda2(Lambda2Options opts = {}) {
    return {Kind::kLambda2, {}, opts};
  }
  static HeadScheme explicit_weights(std::vector<double> w) {
    return {Kind::kExplicit, std::move(w), {}};
  }
};

std::string_view to_string(HeadScheme::Kind k);
// Accepts "uniform" / "lambda2"; throws kInvalidArgument otherwise.
HeadScheme::Kind parse_head_scheme(std::string_view text);

// Weights a scheme assigns to `heads` (uniform, λ2-normalized or explicit).
std::vector<double> head_weights(std::span<const StochasticMatrix> heads,
                                 const HeadScheme& scheme, std::size_t threads = 1);

// Convex combination Σ w_h m_h.
StochasticMatrix aggregate_heads(std::span<const StochasticMatrix> heads,
                                 const HeadScheme& scheme, std::size_t threads = 1);

// Post-softmax equivalent of setting the masked key logits to -inf.
StochasticMatrix mask_columns(const StochasticMatrix& m,
                              std::span<const std::size_t> tokens);

enum class MaskStrategy { kRandom, kCenterToken, kColumnSum, kClsToken, kTokenRank };

std::string_view to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(std::string_view text);

struct MaskOrderOptions {
  MaskStrategy strategy = MaskStrategy::kTokenRank;
  ChainConfig cfg;
  // Uses the first ceil(layer_fraction * layers) layers.
  double layer_fraction = 0.5;
  std::uint64_t seed = 0;
  bool lambda2_weighting = false;
  std::size_t threads = 1;
};

struct MaskOrder {
  std::vector<std::size_t> tokens;  // most important first, specials excluded
  std::vector<double> scores;       // per-token importance; empty for kRandom
};

MaskOrder masking_order(const AttentionTensor& tensor, const MaskOrderOptions& opts);

// Sequence index of grid cell (height/2, width/2).
std::size_t center_token(const AttentionTensor& tensor);

}  // namespace attnchain
