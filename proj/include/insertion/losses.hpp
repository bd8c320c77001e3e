#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "insertion/canvas.hpp"
#include "insertion/model.hpp"
#include "insertion/nn/ops.hpp"

namespace insertion {

enum class Order { kLeftToRight, kBinaryTree, kUniform };
enum class Termination { kSlot, kSequence };

std::string to_string(Order o);
std::string to_string(Termination t);
Order parse_order(const std::string& s);
Termination parse_termination(const std::string& s);

struct LossConfig {
  Order order = Order::kBinaryTree;
  double temperature = 1.0;  // binary tree only
  Termination termination = Termination::kSlot;

  void validate() const;
  // +inf for the uniform order: it shares the binary-tree weighting path.
  double weighting_temperature() const;
  bool operator==(const LossConfig&) const = default;
};

/// |(first + last)/2 − i| for i inside the span.
double span_center_distance(const SlotSpan& span, std::int64_t i);

/// Softmax of −d/τ over a nonempty span; τ = +inf gives the uniform limit.
std::vector<double> slot_weights(const SlotSpan& span, double temperature);

enum class TargetKind { kContentSpan, kEndOfSlot, kEndOfSequence };

struct SlotTarget {
  std::size_t location = 0;
  TargetKind kind = TargetKind::kContentSpan;
  SlotSpan span;
  std::vector<double> weights;  // one per span token, or {1} for terminal targets
};

/// Per-slot supervision for one sampled canvas. Under sequence termination
/// empty spans are dropped unless every span is empty.
std::vector<SlotTarget> build_slot_targets(const TokenSeq& y, const CanvasSample& sample,
                                           const LossConfig& config);

/// Read-only view of one canvas's joint log p(c, l) table.
class LogProbTable {
 public:
  LogProbTable(std::span<const double> values, std::size_t vocab)
      : values_(values), vocab_(vocab) {}
  double at(std::size_t l, std::size_t c) const { return values_[l * vocab_ + c]; }
  std::size_t slots() const { return vocab_ ? values_.size() / vocab_ : 0; }
  std::size_t vocab() const { return vocab_; }

 private:
  std::span<const double> values_;
  std::size_t vocab_;
};

double binary_tree_slot_loss(const LogProbTable& logp, const TokenSeq& y, const SlotSpan& span,
                             std::size_t location, double temperature);
double uniform_slot_loss(const LogProbTable& logp, const TokenSeq& y, const SlotSpan& span,
                         std::size_t location);
double full_loss(std::span<const double> slot_losses);

// Loss of one canvas under prebuilt targets (mean of slot losses).
double sample_loss(const LogProbTable& logp, const TokenSeq& y,
                   std::span<const SlotTarget> targets);

/// Weighted entries of a packed joint log-prob matrix whose negative sum is
/// `scale` × the sample loss. `row_offset` is the canvas's first slot row.
std::vector<nn::Pick> target_picks(std::span<const SlotTarget> targets, const TokenSeq& y,
                                   std::size_t row_offset, std::size_t vocab, double scale);

/// −log p(y_{k+1}, k | x, y_1..y_k) with y_{|y|+1} = end-of-sequence. Draws
/// k uniformly from {0..|y|} when not given.
template <typename T>
T left_to_right_loss(const InsertionTransformer<T>& model, const TokenSeq& x, const TokenSeq& y,
                     std::optional<std::size_t> k, Rng& rng);

}  // namespace insertion
