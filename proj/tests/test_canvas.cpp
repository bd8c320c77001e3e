#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "insertion/canvas.hpp"
#include "insertion/vocab.hpp"

using namespace insertion;

namespace {

// Word-level helpers over a shared vocabulary.
Vocab& words() {
  static Vocab v = [] {
    Vocab w;
    for (const char* t : {"A", "B", "C", "D", "E", "F", "G", "three", "friends", "ate", "lunch",
                          "together"}) {
      w.add_or_lookup(t);
    }
    return w;
  }();
  return v;
}

TokenSeq seq(const std::string& text) { return words().encode(text); }
TokenId id(const std::string& word) { return words().lookup(word); }

}  // namespace

TEST_CASE("apply_insertion places content between neighbours") {
  CHECK(apply_insertion(Canvas(seq("B D")), {id("C"), 1}).tokens() == seq("B C D"));
  CHECK(apply_insertion(Canvas(), {id("ate"), 0}).tokens() == seq("ate"));
  auto chain = apply_insertion(apply_insertion(Canvas(seq("A")), {id("B"), 1}), {id("C"), 2});
  CHECK(chain.tokens() == seq("A B C"));
}

TEST_CASE("apply_insertion leaves its input alone and rejects bad slots") {
  const Canvas c(seq("B D"));
  auto next = apply_insertion(c, {id("A"), 0});
  CHECK(c.tokens() == seq("B D"));
  CHECK(next.length() == 3);
  CHECK_THROWS_AS(apply_insertion(c, {id("A"), 3}), std::out_of_range);
}

TEST_CASE("parallel insertions use pre-insertion locations") {
  const std::vector<InsertionAction> t1{{id("friends"), 0}, {id("together"), 1}};
  auto c1 = apply_parallel_insertions(Canvas(seq("ate")), t1);
  CHECK(c1.tokens() == seq("friends ate together"));
  const std::vector<InsertionAction> t2{{id("three"), 0}, {id("lunch"), 2}};
  auto c2 = apply_parallel_insertions(c1, t2);
  CHECK(c2.tokens() == seq("three friends ate lunch together"));
  CHECK(apply_parallel_insertions(c2, {}).tokens() == c2.tokens());
}

TEST_CASE("parallel insertions: order independence, single action, errors") {
  const Canvas c(seq("A C E"));
  std::vector<InsertionAction> actions{{id("D"), 2}, {id("B"), 1}, {id("F"), 3}};
  CHECK(apply_parallel_insertions(c, actions).tokens() == seq("A B C D E F"));

  // Equivalent to serial application in descending location order.
  auto serial = apply_insertion(apply_insertion(apply_insertion(c, {id("F"), 3}), {id("D"), 2}),
                                {id("B"), 1});
  CHECK(serial.tokens() == seq("A B C D E F"));

  const std::vector<InsertionAction> one{{id("B"), 1}};
  CHECK(apply_parallel_insertions(c, one) == apply_insertion(c, one[0]));

  const std::vector<InsertionAction> dup{{id("B"), 1}, {id("D"), 1}};
  CHECK_THROWS_AS(apply_parallel_insertions(c, dup), std::invalid_argument);
  const std::vector<InsertionAction> far{{id("B"), 4}};
  CHECK_THROWS_AS(apply_parallel_insertions(c, far), std::out_of_range);
}

TEST_CASE("slot_spans partition the missing indices") {
  const auto y = seq("A B C D E F G");
  auto spans = slot_spans(y, make_sample(y, {3}));
  REQUIRE(spans.size() == 2);
  CHECK(spans[0] == SlotSpan{0, 2});
  CHECK(spans[1] == SlotSpan{4, 6});

  auto full = slot_spans(y, make_sample(y, {0, 1, 2, 3, 4, 5, 6}));
  CHECK(full.size() == 8);
  for (const auto& s : full) CHECK(s.empty());

  auto none = slot_spans(y, make_sample(y, {}));
  REQUIRE(none.size() == 1);
  CHECK(none[0] == SlotSpan{0, 6});

  auto mid = slot_spans(seq("A B C D"), make_sample(seq("A B C D"), {1, 2}));
  REQUIRE(mid.size() == 3);
  CHECK(mid[0] == SlotSpan{0, 0});
  CHECK(mid[1].empty());
  CHECK(mid[1].last == mid[1].first - 1);
  CHECK(mid[2] == SlotSpan{3, 3});
}

TEST_CASE("slot_spans rejects inconsistent samples") {
  const auto y = seq("A B C");
  CanvasSample bad{{0, 2}, Canvas(seq("A B"))};
  CHECK_THROWS(slot_spans(y, bad));
  CHECK_THROWS(make_sample(y, {2, 1}));
  CHECK_THROWS(make_sample(y, {3}));
}

TEST_CASE("splicing spans back into the canvas reproduces the target") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    TokenSeq y(std::uniform_int_distribution<std::size_t>(0, 12)(rng));
    for (auto& t : y) t = std::uniform_int_distribution<TokenId>(6, 17)(rng);
    const auto sample = sample_subsequence(y, rng);
    const auto spans = slot_spans(y, sample);
    REQUIRE(spans.size() == sample.canvas.length() + 1);
    TokenSeq rebuilt;
    for (std::size_t l = 0; l < spans.size(); ++l) {
      for (auto i = spans[l].first; i <= spans[l].last; ++i) rebuilt.push_back(y[static_cast<std::size_t>(i)]);
      if (l < sample.canvas.length()) rebuilt.push_back(sample.canvas.tokens()[l]);
    }
    CHECK(rebuilt == y);
    CHECK(is_subsequence(sample.canvas.tokens(), y));
  }
}

TEST_CASE("sample_subsequence: uniform length, uniform subset") {
  const auto y = seq("A B C D");
  Rng rng(2024);
  const int draws = 100000;
  std::map<std::size_t, int> lengths;
  std::map<std::vector<std::size_t>, int> pairs;
  for (int i = 0; i < draws; ++i) {
    auto s = sample_subsequence(y, rng);
    ++lengths[s.kept_indices.size()];
    if (s.kept_indices.size() == 2) ++pairs[s.kept_indices];
    if (s.kept_indices.empty()) CHECK(s.canvas.empty());
    if (s.kept_indices.size() == 4) CHECK(s.canvas.tokens() == y);
  }
  double chi2 = 0;
  for (std::size_t k = 0; k <= 4; ++k) {
    const double freq = lengths[k] / double(draws);
    CHECK(std::abs(freq - 0.2) < 0.01);
    const double expected = draws / 5.0;
    chi2 += (lengths[k] - expected) * (lengths[k] - expected) / expected;
  }
  CHECK(chi2 < 18.47);  // 4 dof, p = 0.001

  REQUIRE(pairs.size() == 6);
  int total = 0;
  for (auto& [_, n] : pairs) total += n;
  double chi2_pairs = 0;
  for (auto& [_, n] : pairs) {
    const double expected = total / 6.0;
    chi2_pairs += (n - expected) * (n - expected) / expected;
  }
  CHECK(chi2_pairs < 20.52);  // 5 dof, p = 0.001
}

TEST_CASE("prefix_sample keeps the leading tokens") {
  const auto y = seq("A B C D");
  auto s = prefix_sample(y, 2);
  CHECK(s.canvas.tokens() == seq("A B"));
  CHECK(s.kept_indices == std::vector<std::size_t>{0, 1});
  CHECK_THROWS(prefix_sample(y, 5));
}

TEST_CASE("is_subsequence") {
  CHECK(is_subsequence(seq("B D"), seq("A B C D E")));
  CHECK_FALSE(is_subsequence(seq("B A"), seq("A B C D E")));
  CHECK(is_subsequence(TokenSeq{}, seq("A")));
  CHECK(is_subsequence(TokenSeq{}, TokenSeq{}));
  CHECK_FALSE(is_subsequence(seq("A"), TokenSeq{}));
}

TEST_CASE("make_rng streams are reproducible and distinct") {
  auto a = make_rng(5, 1), b = make_rng(5, 1), c = make_rng(5, 2), d = make_rng(6, 1);
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
  CHECK(x != d());
}
