#include "insertion/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace insertion {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kCopy: return "copy";
    case TaskKind::kReverse: return "reverse";
    case TaskKind::kSort: return "sort";
    case TaskKind::kToyTranslation: return "toy_translation";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "copy") return TaskKind::kCopy;
  if (s == "reverse") return TaskKind::kReverse;
  if (s == "sort") return TaskKind::kSort;
  if (s == "toy_translation") return TaskKind::kToyTranslation;
  throw std::invalid_argument("unknown task '" + s + "' (expected copy|reverse|sort|toy_translation)");
}

void TaskSpec::validate() const {
  if (content_vocab == 0) throw std::invalid_argument("task content vocabulary must be nonempty");
  if (min_length < 1 || max_length < min_length) {
    throw std::invalid_argument("task lengths need 1 <= min_length <= max_length");
  }
  if (!(swap_probability >= 0 && swap_probability <= 1)) {
    throw std::invalid_argument("swap probability must lie in [0, 1]");
  }
}

Vocab task_vocab(const TaskSpec& spec) { return Vocab::numbered(spec.content_vocab); }

namespace {
// Stream ids reserved for spec-level tables, far from any pair index.
constexpr std::uint64_t kTableStream = ~std::uint64_t{0};
}  // namespace

ToyTranslation::ToyTranslation(const TaskSpec& spec)
    : first_(static_cast<TokenId>(special::kCount)), n_(spec.content_vocab) {
  spec.validate();
  auto rng = make_rng(spec.seed, kTableStream);
  table_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) table_[i] = first_ + static_cast<TokenId>(i);
  std::shuffle(table_.begin(), table_.end(), rng);
  std::bernoulli_distribution coin(spec.swap_probability);
  swaps_.resize(n_ * n_);
  for (std::size_t i = 0; i < n_ * n_; ++i) swaps_[i] = coin(rng);
}

TokenId ToyTranslation::substitute(TokenId id) const {
  const auto i = static_cast<std::size_t>(id - first_);
  if (id < first_ || i >= n_) return id;
  return table_[i];
}

bool ToyTranslation::swaps(TokenId a, TokenId b) const {
  if (a < first_ || b < first_) return false;
  const auto i = static_cast<std::size_t>(a - first_), j = static_cast<std::size_t>(b - first_);
  if (i >= n_ || j >= n_) return false;
  return swaps_[i * n_ + j];
}

TokenSeq ToyTranslation::apply(const TokenSeq& source) const {
  TokenSeq y;
  y.reserve(source.size());
  for (auto id : source) y.push_back(substitute(id));
  for (std::size_t i = 0; i + 1 < y.size();) {
    if (swaps(y[i], y[i + 1])) {
      std::swap(y[i], y[i + 1]);
      i += 2;
    } else {
      i += 1;
    }
  }
  return y;
}

TokenSeq task_target(const TaskSpec& spec, const TokenSeq& source) {
  switch (spec.kind) {
    case TaskKind::kCopy: return source;
    case TaskKind::kReverse: return TokenSeq(source.rbegin(), source.rend());
    case TaskKind::kSort: {
      auto y = source;
      std::sort(y.begin(), y.end());
      return y;
    }
    case TaskKind::kToyTranslation: return ToyTranslation(spec).apply(source);
  }
  return source;
}

Example generate_pair(const TaskSpec& spec, Rng& rng) {
  spec.validate();
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_int_distribution<TokenId> token(
      static_cast<TokenId>(special::kCount),
      static_cast<TokenId>(special::kCount + spec.content_vocab - 1));
  Example ex;
  ex.source.resize(length(rng));
  for (auto& t : ex.source) t = token(rng);
  ex.target = task_target(spec, ex.source);
  return ex;
}

Example generate_pair(const TaskSpec& spec, std::uint64_t index) {
  auto rng = make_rng(spec.seed, index);
  return generate_pair(spec, rng);
}

Dataset generate_dataset(const TaskSpec& spec, std::uint64_t first, std::size_t count) {
  spec.validate();
  Dataset data{task_vocab(spec), {}};
  data.vocab.freeze();
  data.examples.reserve(count);
  const std::optional<ToyTranslation> translation =
      spec.kind == TaskKind::kToyTranslation ? std::optional(ToyTranslation(spec)) : std::nullopt;
  for (std::uint64_t i = first; i < first + count; ++i) {
    if (translation) {
      auto rng = make_rng(spec.seed, i);
      auto copy_spec = spec;
      copy_spec.kind = TaskKind::kCopy;
      auto ex = generate_pair(copy_spec, rng);
      ex.target = translation->apply(ex.source);
      data.examples.push_back(std::move(ex));
    } else {
      data.examples.push_back(generate_pair(spec, i));
    }
  }
  return data;
}

Dataset read_corpus(std::istream& in, Vocab vocab) {
  Dataset data{std::move(vocab), {}};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos && line.find('\t') == std::string::npos) {
      continue;  // blank line
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw std::invalid_argument("corpus line " + std::to_string(number) +
                                  ": expected exactly one tab between source and target");
    }
    Example ex;
    auto read_side = [&](std::string_view text, TokenSeq& out) {
      std::istringstream tokens{std::string(text)};
      for (std::string t; tokens >> t;) out.push_back(data.vocab.add_or_lookup(t));
    };
    read_side(std::string_view(line).substr(0, tab), ex.source);
    read_side(std::string_view(line).substr(tab + 1), ex.target);
    data.examples.push_back(std::move(ex));
  }
  if (data.examples.empty()) throw std::invalid_argument("corpus is empty");
  return data;
}

Dataset load_corpus(const std::filesystem::path& path, Vocab vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus " + path.string());
  try {
    return read_corpus(in, std::move(vocab));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_corpus(std::ostream& out, const Dataset& data) {
  for (const auto& ex : data.examples) {
    out << data.vocab.decode(ex.source) << '\t' << data.vocab.decode(ex.target) << '\n';
  }
}

void save_corpus(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus " + path.string());
  write_corpus(out, data);
}

std::size_t edit_distance(const TokenSeq& a, const TokenSeq& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                   const BleuOptions& options) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: " + std::to_string(hypotheses.size()) +
                                " hypotheses but " + std::to_string(references.size()) +
                                " references");
  }
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");
  if (options.max_order == 0) throw std::invalid_argument("corpus_bleu: max_order must be >= 1");

  const std::size_t N = options.max_order;
  std::vector<double> matches(N, 0.0), totals(N, 0.0);
  double hyp_len = 0, ref_len = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= N; ++n) {
      std::map<TokenSeq, std::size_t> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++ref_counts[TokenSeq(r.begin() + i, r.begin() + i + n)];
      std::map<TokenSeq, std::size_t> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hyp_counts[TokenSeq(h.begin() + i, h.begin() + i + n)];
      for (const auto& [gram, count] : hyp_counts) {
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += static_cast<double>(std::min(count, it->second));
      }
      if (h.size() >= n) totals[n - 1] += static_cast<double>(h.size() - n + 1);
    }
  }
  if (hyp_len == 0) return 0.0;

  double log_precision = 0;
  for (std::size_t n = 0; n < N; ++n) {
    double m = matches[n], t = totals[n];
    if (options.add_one_smoothing && n >= 1) {
      m += 1;
      t += 1;
    }
    if (m == 0 || t == 0) return 0.0;
    log_precision += std::log(m / t) / static_cast<double>(N);
  }
  const double brevity = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * brevity * std::exp(log_precision);
}

double EvalReport::fraction_within(std::size_t slack) const {
  if (rows.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& r : rows) ok += !r.truncated && r.iterations <= r.lower_bound + slack ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(rows.size());
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

double EvalReport::median_iterations_at(std::size_t n) const {
  std::vector<double> its;
  for (const auto& r : rows) {
    if (r.length == n) its.push_back(static_cast<double>(r.iterations));
  }
  return median(std::move(its));
}

EvalReport evaluate(InsertionPolicy& policy, const std::vector<Example>& examples,
                    const DecodeConfig& config) {
  if (examples.empty()) throw std::invalid_argument("evaluate: no examples");
  EvalReport report;
  report.eos_penalty = config.eos_penalty;
  report.count = examples.size();
  std::vector<TokenSeq> refs;
  std::vector<double> iterations;
  double edits = 0, out_len = 0;
  for (const auto& ex : examples) {
    auto result = decode(policy, ex.source, config);
    const std::size_t n = result.output.size();
    const std::size_t its = result.trace.insertion_iterations();
    report.rows.push_back({n, its, n ? iteration_lower_bound(n) : 0, n, result.trace.truncated});
    report.correct += result.output == ex.target ? 1 : 0;
    report.truncated += result.trace.truncated ? 1 : 0;
    edits += static_cast<double>(edit_distance(result.output, ex.target));
    out_len += static_cast<double>(n);
    iterations.push_back(static_cast<double>(its));
    refs.push_back(ex.target);
    report.hypotheses.push_back(std::move(result.output));
  }
  const auto count = static_cast<double>(report.count);
  report.accuracy = static_cast<double>(report.correct) / count;
  report.mean_edit_distance = edits / count;
  report.mean_output_length = out_len / count;
  double total_its = 0;
  for (double v : iterations) total_its += v;
  report.mean_iterations = total_its / count;
  report.median_iterations = median(iterations);
  report.bleu = corpus_bleu(report.hypotheses, refs);
  return report;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream out;
  out << std::setprecision(6);
  out << "eos_penalty = " << r.eos_penalty << '\n'
      << "examples = " << r.count << '\n'
      << "sequence_accuracy = " << r.accuracy << '\n'
      << "mean_edit_distance = " << r.mean_edit_distance << '\n'
      << "bleu = " << r.bleu << '\n'
      << "mean_output_length = " << r.mean_output_length << '\n'
      << "mean_iterations = " << r.mean_iterations << '\n'
      << "median_iterations = " << r.median_iterations << '\n'
      << "within_bound_plus_2 = " << r.fraction_within(2) << '\n'
      << "truncated = " << r.truncated << '\n';
  return out.str();
}

std::string format_iteration_table(const EvalReport& r) {
  std::ostringstream out;
  out << "length\titerations\tlower_bound\tupper_bound\ttruncated\n";
  for (const auto& row : r.rows) {
    out << row.length << '\t' << row.iterations << '\t' << row.lower_bound << '\t'
        << row.upper_bound << '\t' << (row.truncated ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace insertion
