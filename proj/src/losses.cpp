#include "insertion/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "insertion/vocab.hpp"

namespace insertion {

std::string to_string(Order o) {
  switch (o) {
    case Order::kLeftToRight: return "left_to_right";
    case Order::kBinaryTree: return "binary_tree";
    case Order::kUniform: return "uniform";
  }
  return "?";
}

std::string to_string(Termination t) { return t == Termination::kSlot ? "slot" : "sequence"; }

Order parse_order(const std::string& s) {
  if (s == "left_to_right") return Order::kLeftToRight;
  if (s == "binary_tree") return Order::kBinaryTree;
  if (s == "uniform") return Order::kUniform;
  throw std::invalid_argument("unknown loss order '" + s +
                              "' (expected left_to_right|binary_tree|uniform)");
}

Termination parse_termination(const std::string& s) {
  if (s == "slot") return Termination::kSlot;
  if (s == "sequence") return Termination::kSequence;
  throw std::invalid_argument("unknown termination '" + s + "' (expected slot|sequence)");
}

void LossConfig::validate() const {
  if (order == Order::kLeftToRight && termination != Termination::kSequence) {
    throw std::invalid_argument("left_to_right loss requires sequence termination");
  }
  if (order == Order::kBinaryTree && !(temperature > 0)) {
    throw std::invalid_argument("binary_tree temperature must be positive");
  }
}

double LossConfig::weighting_temperature() const {
  return order == Order::kUniform ? std::numeric_limits<double>::infinity() : temperature;
}

double span_center_distance(const SlotSpan& span, std::int64_t i) {
  if (span.empty() || i < span.first || i > span.last) {
    throw std::out_of_range("index " + std::to_string(i) + " outside span [" +
                            std::to_string(span.first) + ", " + std::to_string(span.last) + "]");
  }
  return std::abs(static_cast<double>(span.first + span.last) / 2.0 - static_cast<double>(i));
}

std::vector<double> slot_weights(const SlotSpan& span, double temperature) {
  if (span.empty()) throw std::invalid_argument("slot_weights: empty span");
  if (!(temperature > 0)) throw std::invalid_argument("slot_weights: temperature must be positive");
  std::vector<double> d;
  d.reserve(span.length());
  for (std::int64_t i = span.first; i <= span.last; ++i) d.push_back(span_center_distance(span, i));
  // Shifting by the smallest distance keeps small temperatures from underflowing.
  const double nearest = *std::min_element(d.begin(), d.end());
  std::vector<double> w(d.size());
  double z = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    w[i] = std::exp(-(d[i] - nearest) / temperature);
    z += w[i];
  }
  for (auto& v : w) v /= z;
  return w;
}

std::vector<SlotTarget> build_slot_targets(const TokenSeq& y, const CanvasSample& sample,
                                           const LossConfig& config) {
  config.validate();
  const auto spans = slot_spans(y, sample);
  std::vector<SlotTarget> targets;

  if (config.order == Order::kLeftToRight) {
    const std::size_t k = sample.kept_indices.size();
    for (std::size_t i = 0; i < k; ++i) {
      if (sample.kept_indices[i] != i) {
        throw std::invalid_argument("left_to_right targets need a prefix canvas");
      }
    }
    if (k < y.size()) {
      const auto idx = static_cast<std::int64_t>(k);
      targets.push_back({k, TargetKind::kContentSpan, {idx, idx}, {1.0}});
    } else {
      targets.push_back({k, TargetKind::kEndOfSequence, {0, -1}, {1.0}});
    }
    return targets;
  }

  const bool all_empty =
      std::all_of(spans.begin(), spans.end(), [](const SlotSpan& s) { return s.empty(); });
  const double tau = config.weighting_temperature();
  for (std::size_t l = 0; l < spans.size(); ++l) {
    const auto& span = spans[l];
    if (!span.empty()) {
      targets.push_back({l, TargetKind::kContentSpan, span, slot_weights(span, tau)});
    } else if (config.termination == Termination::kSlot) {
      targets.push_back({l, TargetKind::kEndOfSlot, span, {1.0}});
    } else if (all_empty) {
      targets.push_back({l, TargetKind::kEndOfSequence, span, {1.0}});
    }
  }
  return targets;
}

double binary_tree_slot_loss(const LogProbTable& logp, const TokenSeq& y, const SlotSpan& span,
                             std::size_t location, double temperature) {
  const auto w = slot_weights(span, temperature);
  double loss = 0;
  for (std::int64_t i = span.first; i <= span.last; ++i) {
    loss -= logp.at(location, static_cast<std::size_t>(y[static_cast<std::size_t>(i)])) *
            w[static_cast<std::size_t>(i - span.first)];
  }
  return loss;
}

double uniform_slot_loss(const LogProbTable& logp, const TokenSeq& y, const SlotSpan& span,
                         std::size_t location) {
  if (span.empty()) throw std::invalid_argument("uniform_slot_loss: empty span");
  double total = 0;
  for (std::int64_t i = span.first; i <= span.last; ++i) {
    total -= logp.at(location, static_cast<std::size_t>(y[static_cast<std::size_t>(i)]));
  }
  return total / static_cast<double>(span.length());
}

double full_loss(std::span<const double> slot_losses) {
  if (slot_losses.empty()) throw std::invalid_argument("full_loss: no slot losses");
  double total = 0;
  for (double v : slot_losses) total += v;
  return total / static_cast<double>(slot_losses.size());
}

namespace {

TokenId terminal_token(TargetKind kind) {
  return kind == TargetKind::kEndOfSlot ? special::kEndOfSlot : special::kEndOfSequence;
}

}  // namespace

double sample_loss(const LogProbTable& logp, const TokenSeq& y,
                   std::span<const SlotTarget> targets) {
  std::vector<double> losses;
  losses.reserve(targets.size());
  for (const auto& t : targets) {
    if (t.kind == TargetKind::kContentSpan) {
      double loss = 0;
      for (std::size_t j = 0; j < t.weights.size(); ++j) {
        const auto token = y[static_cast<std::size_t>(t.span.first) + j];
        loss -= t.weights[j] * logp.at(t.location, static_cast<std::size_t>(token));
      }
      losses.push_back(loss);
    } else {
      losses.push_back(-logp.at(t.location, static_cast<std::size_t>(terminal_token(t.kind))));
    }
  }
  return full_loss(losses);
}

std::vector<nn::Pick> target_picks(std::span<const SlotTarget> targets, const TokenSeq& y,
                                   std::size_t row_offset, std::size_t vocab, double scale) {
  if (targets.empty()) throw std::invalid_argument("target_picks: no slot targets");
  const double per_slot = scale / static_cast<double>(targets.size());
  std::vector<nn::Pick> picks;
  for (const auto& t : targets) {
    const std::size_t row = (row_offset + t.location) * vocab;
    if (t.kind == TargetKind::kContentSpan) {
      for (std::size_t j = 0; j < t.weights.size(); ++j) {
        const auto token = y[static_cast<std::size_t>(t.span.first) + j];
        picks.push_back({row + static_cast<std::size_t>(token), per_slot * t.weights[j]});
      }
    } else {
      picks.push_back({row + static_cast<std::size_t>(terminal_token(t.kind)), per_slot});
    }
  }
  return picks;
}

template <typename T>
T left_to_right_loss(const InsertionTransformer<T>& model, const TokenSeq& x, const TokenSeq& y,
                     std::optional<std::size_t> k, Rng& rng) {
  if (!k) k = std::uniform_int_distribution<std::size_t>(0, y.size())(rng);
  if (*k > y.size()) {
    throw std::out_of_range("left_to_right_loss: k = " + std::to_string(*k) +
                            " exceeds target length " + std::to_string(y.size()));
  }
  const LossConfig config{Order::kLeftToRight, 1.0, Termination::kSequence};
  const auto sample = prefix_sample(y, *k);
  const auto targets = build_slot_targets(y, sample, config);
  nn::Tape<T> tape(false);
  auto out = model.forward(tape, std::span<const TokenSeq>(&x, 1),
                           std::span<const Canvas>(&sample.canvas, 1));
  const auto picks = target_picks(targets, y, 0, model.config().vocab_size, 1.0);
  return nn::weighted_nll(tape, out.joint, std::span<const nn::Pick>(picks)).item();
}

template float left_to_right_loss(const InsertionTransformer<float>&, const TokenSeq&,
                                  const TokenSeq&, std::optional<std::size_t>, Rng&);
template double left_to_right_loss(const InsertionTransformer<double>&, const TokenSeq&,
                                   const TokenSeq&, std::optional<std::size_t>, Rng&);

}  // namespace insertion
