#include "insertion/canvas.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace insertion {

Canvas apply_insertion(const Canvas& canvas, const InsertionAction& action) {
  if (action.location > canvas.length()) {
    throw std::out_of_range("insertion location " + std::to_string(action.location) +
                            " outside canvas of length " + std::to_string(canvas.length()));
  }
  TokenSeq out;
  out.reserve(canvas.length() + 1);
  const auto& t = canvas.tokens();
  out.insert(out.end(), t.begin(), t.begin() + static_cast<std::ptrdiff_t>(action.location));
  out.push_back(action.content);
  out.insert(out.end(), t.begin() + static_cast<std::ptrdiff_t>(action.location), t.end());
  return Canvas(std::move(out));
}

Canvas apply_parallel_insertions(const Canvas& canvas, std::span<const InsertionAction> actions) {
  const std::size_t slots = canvas.slot_count();
  std::vector<const InsertionAction*> by_slot(slots, nullptr);
  for (const auto& a : actions) {
    if (a.location >= slots) {
      throw std::out_of_range("insertion location " + std::to_string(a.location) +
                              " outside canvas of length " + std::to_string(canvas.length()));
    }
    if (by_slot[a.location]) {
      throw std::invalid_argument("duplicate insertion location " + std::to_string(a.location));
    }
    by_slot[a.location] = &a;
  }
  TokenSeq out;
  out.reserve(canvas.length() + actions.size());
  const auto& t = canvas.tokens();
  for (std::size_t l = 0; l < slots; ++l) {
    if (by_slot[l]) out.push_back(by_slot[l]->content);
    if (l < t.size()) out.push_back(t[l]);
  }
  return Canvas(std::move(out));
}

CanvasSample make_sample(const TokenSeq& y, std::vector<std::size_t> kept) {
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] >= y.size() || (i > 0 && kept[i] <= kept[i - 1])) {
      throw std::invalid_argument("kept indices must be strictly increasing and below " +
                                  std::to_string(y.size()));
    }
  }
  TokenSeq tokens;
  tokens.reserve(kept.size());
  for (auto i : kept) tokens.push_back(y[i]);
  return CanvasSample{std::move(kept), Canvas(std::move(tokens))};
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

CanvasSample sample_subsequence(const TokenSeq& y, Rng& rng) {
  std::uniform_int_distribution<std::size_t> length(0, y.size());
  const std::size_t k = length(rng);
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return make_sample(y, std::move(order));
}

CanvasSample prefix_sample(const TokenSeq& y, std::size_t k) {
  if (k > y.size()) {
    throw std::out_of_range("prefix length " + std::to_string(k) + " exceeds target length " +
                            std::to_string(y.size()));
  }
  std::vector<std::size_t> kept(k);
  std::iota(kept.begin(), kept.end(), std::size_t{0});
  return make_sample(y, std::move(kept));
}

std::vector<SlotSpan> slot_spans(const TokenSeq& y, const CanvasSample& sample) {
  const auto& kept = sample.kept_indices;
  if (kept.size() != sample.canvas.length()) {
    throw std::invalid_argument("sample canvas length does not match its kept indices");
  }
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] >= y.size() || (i > 0 && kept[i] <= kept[i - 1]) ||
        y[kept[i]] != sample.canvas.tokens()[i]) {
      throw std::invalid_argument("sample is inconsistent with the target sequence");
    }
  }
  std::vector<SlotSpan> spans;
  spans.reserve(kept.size() + 1);
  std::int64_t next_missing = 0;
  for (auto idx : kept) {
    const auto k = static_cast<std::int64_t>(idx);
    spans.push_back({next_missing, k - 1});
    next_missing = k + 1;
  }
  spans.push_back({next_missing, static_cast<std::int64_t>(y.size()) - 1});
  return spans;
}

bool is_subsequence(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  std::size_t i = 0;
  for (std::size_t j = 0; j < reference.size() && i < candidate.size(); ++j) {
    if (candidate[i] == reference[j]) ++i;
  }
  return i == candidate.size();
}

}  // namespace insertion
