#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "insertion/canvas.hpp"
#include "insertion/decoding.hpp"
#include "insertion/vocab.hpp"

namespace insertion {

enum class TaskKind { kCopy, kReverse, kSort, kToyTranslation };

std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

struct TaskSpec {
  TaskKind kind = TaskKind::kCopy;
  std::size_t content_vocab = 32;
  std::size_t min_length = 1;
  std::size_t max_length = 32;
  double swap_probability = 0.15;  // toy_translation only
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

struct Example {
  TokenSeq source;
  TokenSeq target;
  bool operator==(const Example&) const = default;
};

struct Dataset {
  Vocab vocab;
  std::vector<Example> examples;
};

// Reserved ids followed by w0..w{content_vocab-1}.
Vocab task_vocab(const TaskSpec& spec);

/// Toy translation mapping derived from the spec seed: a bijection on
/// content ids plus a fixed set of (a, b) content pairs that swap when
/// adjacent after substitution.
class ToyTranslation {
 public:
  explicit ToyTranslation(const TaskSpec& spec);
  TokenSeq apply(const TokenSeq& source) const;
  TokenId substitute(TokenId id) const;
  bool swaps(TokenId a, TokenId b) const;

 private:
  TokenId first_;
  std::size_t n_;
  std::vector<TokenId> table_;
  std::vector<bool> swaps_;
};

// The target the task assigns to `source`.
TokenSeq task_target(const TaskSpec& spec, const TokenSeq& source);

Example generate_pair(const TaskSpec& spec, Rng& rng);
// Pair `index` of the task, drawn from its own stream.
Example generate_pair(const TaskSpec& spec, std::uint64_t index);
// Pairs first..first+count-1.
Dataset generate_dataset(const TaskSpec& spec, std::uint64_t first, std::size_t count);

/// One pair per line: source and target separated by a tab, tokens by
/// whitespace. With a frozen vocab unknown tokens map to UNK; otherwise
/// new tokens are added.
Dataset read_corpus(std::istream& in, Vocab vocab);
Dataset load_corpus(const std::filesystem::path& path, Vocab vocab);
void write_corpus(std::ostream& out, const Dataset& data);
void save_corpus(const std::filesystem::path& path, const Dataset& data);

std::size_t edit_distance(const TokenSeq& a, const TokenSeq& b);

struct BleuOptions {
  std::size_t max_order = 4;
  bool add_one_smoothing = false;  // applied to orders >= 2
};

// Corpus-level BLEU in [0, 100] with one reference per hypothesis.
double corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                   const BleuOptions& options = {});

struct IterationRow {
  std::size_t length = 0;  // output length n
  std::size_t iterations = 0;
  std::size_t lower_bound = 0;  // ⌊log₂ n⌋ + 1, 0 for empty outputs
  std::size_t upper_bound = 0;  // n
  bool truncated = false;
};

struct EvalReport {
  double eos_penalty = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
  std::size_t truncated = 0;
  double accuracy = 0.0;
  double mean_edit_distance = 0.0;
  double bleu = 0.0;
  double mean_output_length = 0.0;
  double mean_iterations = 0.0;
  double median_iterations = 0.0;
  std::vector<IterationRow> rows;
  std::vector<TokenSeq> hypotheses;

  // Share of decodes with iterations <= lower bound + slack.
  double fraction_within(std::size_t slack) const;
  // Median iteration count over decodes of output length n (NaN if none).
  double median_iterations_at(std::size_t n) const;
};

EvalReport evaluate(InsertionPolicy& policy, const std::vector<Example>& examples,
                    const DecodeConfig& config);

std::string format_report(const EvalReport& report);
std::string format_iteration_table(const EvalReport& report);

}  // namespace insertion
