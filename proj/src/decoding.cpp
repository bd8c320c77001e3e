#include "insertion/decoding.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "insertion/vocab.hpp"

namespace insertion {

std::string to_string(DecodeMode m) { return m == DecodeMode::kGreedy ? "greedy" : "parallel"; }

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::kGreedy;
  if (s == "parallel") return DecodeMode::kParallel;
  throw std::invalid_argument("unknown decode mode '" + s + "' (expected greedy|parallel)");
}

std::size_t DecodeConfig::iteration_cap() const {
  return max_iterations ? max_iterations : 2 * max_output_length + 8;
}

void DecodeConfig::validate() const {
  if (!(eos_penalty >= 0) || !std::isfinite(eos_penalty)) {
    throw std::invalid_argument("eos penalty must be finite and nonnegative");
  }
}

std::optional<std::string> DecodeConfig::warning() const {
  if (mode == DecodeMode::kParallel && termination == Termination::kSequence) {
    return "parallel decoding of a sequence-finalization model: end-of-sequence is treated as a "
           "per-slot stop";
  }
  return std::nullopt;
}

std::vector<double> apply_eos_penalty(const std::vector<double>& log_probs, std::size_t vocab,
                                      double beta) {
  if (!(beta >= 0)) throw std::invalid_argument("eos penalty must be nonnegative");
  if (vocab == 0 || log_probs.size() % vocab != 0) {
    throw std::invalid_argument("apply_eos_penalty: table size is not a multiple of the vocab");
  }
  std::vector<double> scores = log_probs;
  for (std::size_t r = 0; r < scores.size(); r += vocab) {
    if (vocab > static_cast<std::size_t>(special::kEndOfSequence)) {
      scores[r + special::kEndOfSequence] -= beta;
    }
    if (vocab > static_cast<std::size_t>(special::kEndOfSlot)) {
      scores[r + special::kEndOfSlot] -= beta;
    }
  }
  return scores;
}

namespace {

struct RowBest {
  TokenId token = -1;
  double score = -std::numeric_limits<double>::infinity();
};

// Strict comparison keeps the lowest token id on ties.
RowBest row_argmax(const std::vector<double>& scores, std::size_t row, std::size_t vocab) {
  RowBest best;
  for (std::size_t c = 0; c < vocab; ++c) {
    const auto id = static_cast<TokenId>(c);
    if (special::is_structural(id)) continue;
    const double s = scores[row * vocab + c];
    if (best.token < 0 || s > best.score) best = {id, s};
  }
  return best;
}

}  // namespace

GreedyDecision greedy_step(const ContentLocationDistribution& dist, Termination termination,
                           double beta) {
  const auto scores = apply_eos_penalty(dist.joint_table(), dist.vocab(), beta);
  std::optional<InsertionAction> best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < dist.slots(); ++l) {
    const auto row = row_argmax(scores, l, dist.vocab());
    if (row.token < 0) continue;
    if (termination == Termination::kSlot && special::is_terminal(row.token)) continue;
    if (!best || row.score > best_score) {
      best = InsertionAction{row.token, l};
      best_score = row.score;
    }
  }
  if (!best) return Finish{};
  if (special::is_terminal(best->content)) return Finish{best};
  return *best;
}

std::vector<InsertionAction> parallel_step(const ContentLocationDistribution& dist, double beta) {
  const auto scores = apply_eos_penalty(dist.conditional_table(), dist.vocab(), beta);
  std::vector<InsertionAction> actions;
  for (std::size_t l = 0; l < dist.slots(); ++l) {
    const auto row = row_argmax(scores, l, dist.vocab());
    if (row.token >= 0 && !special::is_terminal(row.token)) actions.push_back({row.token, l});
  }
  return actions;
}

std::size_t iteration_lower_bound(std::size_t n) {
  if (n < 1) throw std::invalid_argument("iteration_lower_bound needs n >= 1");
  return static_cast<std::size_t>(std::bit_width(n));
}

std::vector<double> eos_penalty_grid(double lo, double hi, double step) {
  if (!(step > 0) || hi < lo) throw std::invalid_argument("eos penalty grid needs lo <= hi, step > 0");
  std::vector<double> grid;
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (std::size_t i = 0; i < count; ++i) grid.push_back(lo + static_cast<double>(i) * step);
  return grid;
}

std::size_t DecodeTrace::insertion_iterations() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.final ? 0 : 1;
  return n;
}

bool trace_is_consistent(const DecodeTrace& trace) {
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& step = trace.steps[i];
    const TokenSeq& next = i + 1 < trace.steps.size() ? trace.steps[i + 1].canvas : trace.output;
    if (step.final) {
      if (!step.actions.empty() || i + 1 != trace.steps.size() || step.canvas != trace.output) {
        return false;
      }
      continue;
    }
    if (step.actions.empty() || step.actions.size() != step.log_probs.size()) return false;
    if (trace.mode == DecodeMode::kGreedy && step.actions.size() != 1) return false;
    if (step.actions.size() > step.canvas.size() + 1) return false;
    try {
      const auto applied =
          apply_parallel_insertions(Canvas(step.canvas), std::span<const InsertionAction>(step.actions));
      if (applied.tokens() != next) return false;
    } catch (const std::exception&) {
      return false;
    }
    if (next.size() <= step.canvas.size() || !is_subsequence(step.canvas, next)) return false;
  }
  return true;
}

template <typename T>
ContentLocationDistribution ModelPolicy<T>::distribution(const TokenSeq& source,
                                                         const Canvas& canvas) {
  if (!memory_ || cached_source_ != source) {
    nn::Tape<T> tape(false);
    memory_ = model_.encode(tape, std::span<const TokenSeq>(&source, 1));
    cached_source_ = source;
  }
  return model_.distribution(*memory_, canvas);
}

template class ModelPolicy<float>;
template class ModelPolicy<double>;

DecodeResult greedy_decode(InsertionPolicy& policy, const TokenSeq& source,
                           const DecodeConfig& config) {
  config.validate();
  DecodeTrace trace;
  trace.source = source;
  trace.mode = DecodeMode::kGreedy;
  Canvas canvas;
  bool finished = false;
  const std::size_t cap = config.iteration_cap();
  while (trace.insertion_iterations() < cap) {
    const auto dist = policy.distribution(source, canvas);
    const auto decision = greedy_step(dist, config.termination, config.eos_penalty);
    if (const auto* fin = std::get_if<Finish>(&decision)) {
      TraceStep step{canvas.tokens(), {}, {}, true, fin->terminal, 0.0};
      if (fin->terminal) {
        step.stop_log_prob = dist.joint(fin->terminal->location,
                                        static_cast<std::size_t>(fin->terminal->content));
      }
      trace.steps.push_back(std::move(step));
      finished = true;
      break;
    }
    if (canvas.length() >= config.max_output_length) break;
    const auto action = std::get<InsertionAction>(decision);
    trace.steps.push_back({canvas.tokens(),
                           {action},
                           {dist.joint(action.location, static_cast<std::size_t>(action.content))},
                           false,
                           std::nullopt,
                           0.0});
    canvas = apply_insertion(canvas, action);
  }
  trace.truncated = !finished;
  trace.output = canvas.tokens();
  return {canvas.tokens(), std::move(trace)};
}

DecodeResult parallel_decode(InsertionPolicy& policy, const TokenSeq& source,
                             const DecodeConfig& config) {
  config.validate();
  DecodeTrace trace;
  trace.source = source;
  trace.mode = DecodeMode::kParallel;
  Canvas canvas;
  bool finished = false;
  const std::size_t cap = config.iteration_cap();
  while (trace.insertion_iterations() < cap) {
    const auto dist = policy.distribution(source, canvas);
    auto actions = parallel_step(dist, config.eos_penalty);
    if (actions.empty()) {
      trace.steps.push_back({canvas.tokens(), {}, {}, true, std::nullopt, 0.0});
      finished = true;
      break;
    }
    if (canvas.length() + actions.size() > config.max_output_length) break;
    std::vector<double> log_probs;
    log_probs.reserve(actions.size());
    for (const auto& a : actions) {
      log_probs.push_back(dist.conditional(a.location, static_cast<std::size_t>(a.content)));
    }
    auto next = apply_parallel_insertions(canvas, std::span<const InsertionAction>(actions));
    trace.steps.push_back({canvas.tokens(), std::move(actions), std::move(log_probs), false,
                           std::nullopt, 0.0});
    canvas = std::move(next);
  }
  trace.truncated = !finished;
  trace.output = canvas.tokens();
  return {canvas.tokens(), std::move(trace)};
}

DecodeResult decode(InsertionPolicy& policy, const TokenSeq& source, const DecodeConfig& config) {
  return config.mode == DecodeMode::kGreedy ? greedy_decode(policy, source, config)
                                            : parallel_decode(policy, source, config);
}

}  // namespace insertion
