// Scripted policies that stand in for a trained model in decoding tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "insertion/canvas.hpp"
#include "insertion/decoding.hpp"
#include "insertion/distribution.hpp"
#include "insertion/vocab.hpp"

namespace testing_support {

using namespace insertion;

inline constexpr double kOff = -8.0;  // logit of every unscripted outcome

/// Joint-head policy with one scripted action per canvas (terminal actions
/// included). Unknown canvases are an error.
class SerialScript : public InsertionPolicy {
 public:
  SerialScript(std::size_t vocab, std::map<TokenSeq, InsertionAction> script)
      : vocab_(vocab), script_(std::move(script)) {}

  ContentLocationDistribution distribution(const TokenSeq&, const Canvas& canvas) override {
    const auto it = script_.find(canvas.tokens());
    if (it == script_.end()) throw std::logic_error("canvas not in script");
    std::vector<double> logits(canvas.slot_count() * vocab_, kOff);
    logits[it->second.location * vocab_ + static_cast<std::size_t>(it->second.content)] = 0.0;
    return ContentLocationDistribution::from_joint_logits(canvas.slot_count(), vocab_, logits);
  }

 private:
  std::size_t vocab_;
  std::map<TokenSeq, InsertionAction> script_;
};

// Factorized distribution whose slot l prefers `choice[l]`.
inline ContentLocationDistribution peaked_conditionals(std::size_t vocab,
                                                       const std::vector<TokenId>& choice) {
  const std::size_t slots = choice.size();
  std::vector<double> loc(slots, -std::log(static_cast<double>(slots)));
  std::vector<double> cond(slots * vocab);
  for (std::size_t l = 0; l < slots; ++l) {
    std::vector<double> row(vocab, kOff);
    row[static_cast<std::size_t>(choice[l])] = 0.0;
    const double z = log_sum_exp(row.data(), row.size());
    for (std::size_t c = 0; c < vocab; ++c) cond[l * vocab + c] = row[c] - z;
  }
  return ContentLocationDistribution::from_factorized(std::move(loc), vocab, std::move(cond));
}

/// Parallel script: per canvas, the actions to take; every other slot
/// predicts end-of-slot.
class ParallelScript : public InsertionPolicy {
 public:
  ParallelScript(std::size_t vocab, std::map<TokenSeq, std::vector<InsertionAction>> script)
      : vocab_(vocab), script_(std::move(script)) {}

  ContentLocationDistribution distribution(const TokenSeq&, const Canvas& canvas) override {
    std::vector<TokenId> choice(canvas.slot_count(), special::kEndOfSlot);
    const auto it = script_.find(canvas.tokens());
    if (it != script_.end()) {
      for (const auto& a : it->second) choice.at(a.location) = a.content;
    }
    return peaked_conditionals(vocab_, choice);
  }

 private:
  std::size_t vocab_;
  std::map<TokenSeq, std::vector<InsertionAction>> script_;
};

/// Balanced-binary-tree oracle for a fixed target: each slot proposes the
/// centre token of the span it owns (left centre for even spans) and
/// end-of-slot for empty spans. Canvases it produced itself keep their
/// alignment to the target; others are aligned by a leftmost match.
class BinaryTreeOracle : public InsertionPolicy {
 public:
  BinaryTreeOracle(std::size_t vocab, TokenSeq target) : vocab_(vocab), target_(std::move(target)) {
    alignments_[{}] = {};
  }

  ContentLocationDistribution distribution(const TokenSeq&, const Canvas& canvas) override {
    std::vector<std::size_t> kept;
    if (const auto it = alignments_.find(canvas.tokens()); it != alignments_.end()) {
      kept = it->second;
    } else {
      std::size_t j = 0;
      for (auto t : canvas.tokens()) {
        while (j < target_.size() && target_[j] != t) ++j;
        if (j == target_.size()) throw std::logic_error("canvas is not a subsequence of the target");
        kept.push_back(j++);
      }
    }
    const auto spans = slot_spans(target_, make_sample(target_, kept));
    std::vector<TokenId> choice;
    auto next = kept;
    for (const auto& s : spans) {
      if (s.empty()) {
        choice.push_back(special::kEndOfSlot);
        continue;
      }
      const auto centre = static_cast<std::size_t>((s.first + s.last) / 2);
      choice.push_back(target_[centre]);
      next.push_back(centre);
    }
    std::sort(next.begin(), next.end());
    TokenSeq next_canvas;
    for (auto i : next) next_canvas.push_back(target_[i]);
    alignments_.emplace(std::move(next_canvas), std::move(next));
    return peaked_conditionals(vocab_, choice);
  }

 private:
  std::size_t vocab_;
  TokenSeq target_;
  std::map<TokenSeq, std::vector<std::size_t>> alignments_;
};

/// Never stops: always inserts `token` at slot 0.
class Babbler : public InsertionPolicy {
 public:
  Babbler(std::size_t vocab, TokenId token) : vocab_(vocab), token_(token) {}
  ContentLocationDistribution distribution(const TokenSeq&, const Canvas& canvas) override {
    std::vector<double> logits(canvas.slot_count() * vocab_, kOff);
    logits[static_cast<std::size_t>(token_)] = 0.0;
    return ContentLocationDistribution::from_joint_logits(canvas.slot_count(), vocab_, logits);
  }

 private:
  std::size_t vocab_;
  TokenId token_;
};

}  // namespace testing_support
