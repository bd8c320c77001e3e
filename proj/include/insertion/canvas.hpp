#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace insertion {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
using Rng = std::mt19937_64;

// Independent stream `stream` of a run seeded with `seed`.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

/// Place `content` into slot `location` (0 = before the first token).
struct InsertionAction {
  TokenId content = 0;
  std::size_t location = 0;

  bool operator==(const InsertionAction&) const = default;
};

/// Partial output hypothesis. A canvas of length T has T+1 slots.
class Canvas {
 public:
  Canvas() = default;
  explicit Canvas(TokenSeq tokens) : tokens_(std::move(tokens)) {}

  const TokenSeq& tokens() const { return tokens_; }
  std::size_t length() const { return tokens_.size(); }
  std::size_t slot_count() const { return tokens_.size() + 1; }
  bool empty() const { return tokens_.empty(); }

  bool operator==(const Canvas&) const = default;

 private:
  TokenSeq tokens_;
};

/// Missing target indices [first, last] owned by one slot. Empty spans have
/// last == first - 1.
struct SlotSpan {
  std::int64_t first = 0;
  std::int64_t last = -1;

  bool empty() const { return first > last; }
  std::size_t length() const { return empty() ? 0 : static_cast<std::size_t>(last - first + 1); }
  bool operator==(const SlotSpan&) const = default;
};

/// A training canvas drawn from a target: the kept target indices (sorted)
/// and the canvas they induce.
struct CanvasSample {
  std::vector<std::size_t> kept_indices;
  Canvas canvas;
};

Canvas apply_insertion(const Canvas& canvas, const InsertionAction& action);

// Locations refer to the pre-insertion canvas; at most one action per slot.
Canvas apply_parallel_insertions(const Canvas& canvas, std::span<const InsertionAction> actions);

// Validates `kept` (strictly increasing, in range) and builds the sample.
CanvasSample make_sample(const TokenSeq& y, std::vector<std::size_t> kept);

// k ~ Uniform{0..|y|}, then a uniform k-subset via shuffling the index list.
CanvasSample sample_subsequence(const TokenSeq& y, Rng& rng);

// Left prefix of length k.
CanvasSample prefix_sample(const TokenSeq& y, std::size_t k);

std::vector<SlotSpan> slot_spans(const TokenSeq& y, const CanvasSample& sample);

bool is_subsequence(std::span<const TokenId> candidate, std::span<const TokenId> reference);

}  // namespace insertion
