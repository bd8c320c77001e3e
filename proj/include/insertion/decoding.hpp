#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "insertion/canvas.hpp"
#include "insertion/distribution.hpp"
#include "insertion/losses.hpp"
#include "insertion/model.hpp"

namespace insertion {

enum class DecodeMode { kGreedy, kParallel };

std::string to_string(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& s);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::kParallel;
  double eos_penalty = 0.0;  // β
  std::size_t max_output_length = 64;
  std::size_t max_iterations = 0;  // 0 means 2·max_output_length + 8
  Termination termination = Termination::kSlot;

  std::size_t iteration_cap() const;
  void validate() const;
  // Set for parallel decoding of a sequence-finalization model.
  std::optional<std::string> warning() const;
  bool operator==(const DecodeConfig&) const = default;
};

/// Scores used for argmax decisions: terminal tokens lose β.
std::vector<double> apply_eos_penalty(const std::vector<double>& log_probs, std::size_t vocab,
                                      double beta);

struct Finish {
  // The winning terminal action under sequence termination.
  std::optional<InsertionAction> terminal;
};
using GreedyDecision = std::variant<InsertionAction, Finish>;

GreedyDecision greedy_step(const ContentLocationDistribution& dist, Termination termination,
                           double beta);

// One action per slot whose β-adjusted argmax of p(c | l) is not terminal.
std::vector<InsertionAction> parallel_step(const ContentLocationDistribution& dist, double beta);

// ⌊log₂ n⌋ + 1.
std::size_t iteration_lower_bound(std::size_t n);

// lo, lo+step, ..., hi (inclusive up to rounding).
std::vector<double> eos_penalty_grid(double lo = 0.0, double hi = 7.0, double step = 0.5);

struct TraceStep {
  TokenSeq canvas;  // before the step
  std::vector<InsertionAction> actions;
  std::vector<double> log_probs;  // model log-probability of each action
  bool final = false;             // terminal decision, no insertions
  std::optional<InsertionAction> stop;  // greedy terminal action, if any
  double stop_log_prob = 0.0;
};

struct DecodeTrace {
  TokenSeq source;
  DecodeMode mode = DecodeMode::kGreedy;
  std::vector<TraceStep> steps;
  TokenSeq output;
  bool truncated = false;

  std::size_t insertion_iterations() const;
};

// Subsequence chain plus the per-step insertion limits of the trace's mode.
bool trace_is_consistent(const DecodeTrace& trace);

/// Anything that can score (content, location) for a source and canvas.
class InsertionPolicy {
 public:
  virtual ~InsertionPolicy() = default;
  virtual ContentLocationDistribution distribution(const TokenSeq& source,
                                                   const Canvas& canvas) = 0;
};

/// Wraps a model, encoding each new source once.
template <typename T>
class ModelPolicy : public InsertionPolicy {
 public:
  explicit ModelPolicy(const InsertionTransformer<T>& model) : model_(model) {}
  ContentLocationDistribution distribution(const TokenSeq& source, const Canvas& canvas) override;

 private:
  const InsertionTransformer<T>& model_;
  TokenSeq cached_source_;
  std::optional<EncoderMemory<T>> memory_;
};

struct DecodeResult {
  TokenSeq output;
  DecodeTrace trace;
};

DecodeResult greedy_decode(InsertionPolicy& policy, const TokenSeq& source,
                           const DecodeConfig& config);
DecodeResult parallel_decode(InsertionPolicy& policy, const TokenSeq& source,
                             const DecodeConfig& config);
DecodeResult decode(InsertionPolicy& policy, const TokenSeq& source, const DecodeConfig& config);

}  // namespace insertion
