#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "insertion/nn/ops.hpp"

using namespace insertion::nn;
using testing_support::check_gradients;
using testing_support::random_tensor;

namespace {

// Pairs the output with a fixed random weighting so every output entry
// contributes a distinct coefficient to the scalar loss.
Tensor<double> probe(Tape<double>& tape, const Tensor<double>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(out.shape(), rng, -1.0, 1.0, false);
  return sum(tape, mul(tape, out, w));
}

}  // namespace

TEST_CASE("matmul: identity and hand arithmetic") {
  Tape<double> tape;
  auto eye = Tensor<double>::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto a = Tensor<double>::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  auto r = matmul(tape, eye, a);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(r[i] == a[i]);

  auto m = Tensor<double>::matrix(2, 2, {1, 2, 3, 4});
  auto ones = Tensor<double>::matrix(2, 1, {1, 1});
  auto c = matmul(tape, m, ones);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c[0] == 3);
  CHECK(c[1] == 7);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tape<double> tape;
  Tensor<double> a({2, 3}), b({2, 3});
  try {
    matmul(tape, a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("by [2, 3]") != std::string::npos);
  }
}

TEST_CASE("matmul: gradient matches central differences") {
  std::mt19937_64 rng(1);
  auto a = random_tensor({4, 5}, rng);
  auto b = random_tensor({5, 3}, rng);
  auto report = check_gradients({a, b}, [&](Tape<double>& t) {
    return probe(t, matmul(t, a, b), 7);
  });
  CHECK(report.checked == 35);
  CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("softmax: worked values") {
  Tape<double> tape;
  auto u = softmax(tape, Tensor<double>::vector({0, 0, 0}), 0);
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto p = softmax(tape, Tensor<double>::vector({-1, 0, -1}), 0);
  CHECK(p[0] == doctest::Approx(0.21194).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(0.57612).epsilon(1e-5));
  CHECK(p[2] == doctest::Approx(0.21194).epsilon(1e-5));
}

TEST_CASE("softmax: shift invariance, normalization, empty axis") {
  std::mt19937_64 rng(3);
  Tape<double> tape;
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({4, 6}, rng, -5, 5, false);
    Tensor<double> shifted = x.clone();
    for (auto& v : shifted.data()) v += 123.5;
    for (std::size_t axis : {0u, 1u}) {
      auto p = softmax(tape, x, axis);
      auto q = softmax(tape, shifted, axis);
      for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p[i] >= 0.0);
        CHECK(std::abs(p[i] - q[i]) < 1e-12);
      }
    }
    auto rows = softmax(tape, x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 6; ++c) total += rows.at(r, c);
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
  CHECK_THROWS_AS(softmax(tape, Tensor<double>({0}), 0), DimensionError);
  CHECK_THROWS_AS(softmax(tape, Tensor<double>({3, 0}), 1), DimensionError);
  CHECK_THROWS_AS(softmax(tape, Tensor<double>({3}), 1), DimensionError);
}

TEST_CASE("softmax: gradient along both axes") {
  std::mt19937_64 rng(4);
  auto x = random_tensor({3, 4}, rng, -2, 2);
  for (std::size_t axis : {0u, 1u}) {
    auto report = check_gradients({x}, [&](Tape<double>& t) { return probe(t, softmax(t, x, axis), 11); });
    CHECK(report.max_relative_error < 1e-4);
  }
}

TEST_CASE("attention: single position returns its value row") {
  std::mt19937_64 rng(5);
  Tape<double> tape;
  auto q = random_tensor({1, 4}, rng);
  auto k = random_tensor({1, 4}, rng);
  auto v = random_tensor({1, 4}, rng);
  auto out = attention(tape, q, k, v, 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-14));
}

TEST_CASE("attention: zero logits average the value rows") {
  std::mt19937_64 rng(6);
  Tape<double> tape;
  Tensor<double> q({2, 4});  // all zeros, orthogonal to every key
  auto k = random_tensor({3, 4}, rng);
  auto v = random_tensor({3, 4}, rng);
  auto out = attention(tape, q, k, v, 2);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double mean = (v.at(0, c) + v.at(1, c) + v.at(2, c)) / 3.0;
      CHECK(out.at(r, c) == doctest::Approx(mean).epsilon(1e-13));
    }
  }
}

TEST_CASE("attention: gradient on 2 heads, length 3") {
  std::mt19937_64 rng(7);
  auto q = random_tensor({3, 4}, rng);
  auto k = random_tensor({3, 4}, rng);
  auto v = random_tensor({3, 4}, rng);
  auto report = check_gradients({q, k, v}, [&](Tape<double>& t) {
    return probe(t, attention(t, q, k, v, 2), 13);
  });
  CHECK(report.max_relative_error < 1e-5);
}

TEST_CASE("attention: packed segments equal separate calls, masks apply") {
  std::mt19937_64 rng(8);
  Tape<double> tape;
  auto q = random_tensor({5, 4}, rng);
  auto k = random_tensor({4, 4}, rng);
  auto v = random_tensor({4, 4}, rng);
  std::vector<std::size_t> ql = {2, 3}, kl = {1, 3};
  auto packed = attention(tape, q, k, v, 2, Segments::from_lengths(ql), Segments::from_lengths(kl));

  auto rows = [](const Tensor<double>& t, std::size_t b, std::size_t n) {
    Tensor<double> out({n, t.cols()});
    for (std::size_t i = 0; i < n * t.cols(); ++i) out[i] = t[b * t.cols() + i];
    return out;
  };
  auto first = attention(tape, rows(q, 0, 2), rows(k, 0, 1), rows(v, 0, 1), 2);
  auto second = attention(tape, rows(q, 2, 3), rows(k, 1, 3), rows(v, 1, 3), 2);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(packed[i] == doctest::Approx(first[i]));
  for (std::size_t i = 0; i < second.size(); ++i)
    CHECK(packed[first.size() + i] == doctest::Approx(second[i]));

  // Blocking all but key 1 reproduces value row 1 exactly.
  auto k3 = rows(k, 1, 3), v3 = rows(v, 1, 3), q3 = rows(q, 2, 3);
  Tensor<double> mask({3, 3});
  for (std::size_t r = 0; r < 3; ++r) mask.at(r, 1) = 1;
  auto masked = attention(tape, q3, k3, v3, 2, &mask);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) CHECK(masked.at(r, c) == doctest::Approx(v3.at(1, c)));

  Tensor<double> bad({2, 3});
  CHECK_THROWS_AS(attention(tape, q3, k3, v3, 2, &bad), DimensionError);
  CHECK_THROWS_AS(attention(tape, q3, k3, v3, 3), DimensionError);
}

TEST_CASE("attention: segmented gradient with an empty key segment") {
  std::mt19937_64 rng(9);
  auto q = random_tensor({4, 6}, rng);
  auto k = random_tensor({3, 6}, rng);
  auto v = random_tensor({3, 6}, rng);
  std::vector<std::size_t> ql = {1, 3}, kl = {0, 3};
  auto report = check_gradients({q, k, v}, [&](Tape<double>& t) {
    return probe(t, attention(t, q, k, v, 3, Segments::from_lengths(ql), Segments::from_lengths(kl)), 17);
  });
  CHECK(report.max_relative_error < 1e-5);
}

TEST_CASE("backward: sum and square") {
  std::mt19937_64 rng(10);
  auto x = random_tensor({2, 3}, rng);
  {
    Tape<double> tape;
    tape.backward(sum(tape, x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  x.zero_grad();
  {
    Tape<double> tape;
    tape.backward(sum(tape, mul(tape, x, x)));
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x[i]));
  }
}

TEST_CASE("backward: repeated calls accumulate, non-scalar loss rejected") {
  std::mt19937_64 rng(11);
  auto x = random_tensor({3}, rng);
  Tape<double> tape;
  auto y = scale(tape, mul(tape, x, x), 3.0);
  auto loss = sum(tape, y);
  tape.backward(loss);
  tape.backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(12 * x[i]));
  CHECK_THROWS_AS(tape.backward(y), DimensionError);
}

TEST_CASE("elementwise and broadcasting ops: gradients") {
  std::mt19937_64 rng(12);
  auto x = random_tensor({3, 4}, rng);
  auto y = random_tensor({3, 4}, rng);
  auto b = random_tensor({4}, rng);
  auto col = random_tensor({3, 1}, rng);
  auto report = check_gradients({x, y, b, col}, [&](Tape<double>& t) {
    auto z = add(t, mul(t, x, y), scale(t, y, -0.5));
    z = add_bias(t, z, b);
    z = add_column(t, z, col);
    return probe(t, tanh(t, z), 19);
  });
  CHECK(report.max_relative_error < 1e-4);

  // ReLU away from the kink.
  auto away = random_tensor({2, 5}, rng, 0.1, 1.0);
  for (std::size_t i = 0; i < away.size(); i += 2) away[i] = -away[i];
  auto relu_report = check_gradients({away}, [&](Tape<double>& t) { return probe(t, relu(t, away), 23); });
  CHECK(relu_report.max_relative_error < 1e-6);
}

TEST_CASE("layer_norm: normalizes rows and differentiates") {
  std::mt19937_64 rng(13);
  Tape<double> tape;
  auto x = random_tensor({3, 8}, rng, -3, 3);
  Tensor<double> gain({8}), bias({8});
  for (auto& g : gain.data()) g = 1.0;
  auto y = layer_norm(tape, x, gain, bias, 1e-5);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 8; ++c) mean += y.at(r, c);
    mean /= 8;
    for (std::size_t c = 0; c < 8; ++c) var += (y.at(r, c) - mean) * (y.at(r, c) - mean);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var / 8 == doctest::Approx(1.0).epsilon(1e-4));
  }
  auto g = random_tensor({8}, rng);
  auto bb = random_tensor({8}, rng);
  auto report = check_gradients({x, g, bb}, [&](Tape<double>& t) {
    return probe(t, layer_norm(t, x, g, bb, 1e-5), 29);
  });
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("log_softmax: row and segment normalization") {
  std::mt19937_64 rng(14);
  Tape<double> tape;
  auto x = random_tensor({5, 3}, rng, -4, 4);
  std::vector<std::size_t> lengths = {2, 3};
  auto segs = Segments::from_lengths(lengths);
  auto rows = log_softmax(tape, x, segs, Normalize::kRow);
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 3; ++c) total += std::exp(rows.at(r, c));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  auto flat = log_softmax(tape, x, segs, Normalize::kSegment);
  for (std::size_t s = 0; s < 2; ++s) {
    double total = 0;
    for (std::size_t r = segs.begin(s); r < segs.end(s); ++r)
      for (std::size_t c = 0; c < 3; ++c) total += std::exp(flat.at(r, c));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (auto mode : {Normalize::kRow, Normalize::kSegment}) {
    auto report = check_gradients({x}, [&](Tape<double>& t) { return probe(t, log_softmax(t, x, segs, mode), 31); });
    CHECK(report.max_relative_error < 1e-4);
  }
  CHECK_THROWS_AS(log_softmax(tape, x, Segments::single(4), Normalize::kRow), DimensionError);
}

TEST_CASE("gather-style ops: embedding, adjacent pairs, segment max, broadcast") {
  std::mt19937_64 rng(15);
  auto table = random_tensor({6, 3}, rng);
  std::vector<std::int32_t> ids = {4, 0, 4, 2};
  auto report = check_gradients({table}, [&](Tape<double>& t) {
    return probe(t, embedding(t, table, std::span<const std::int32_t>(ids)), 37);
  });
  CHECK(report.max_relative_error < 1e-6);
  Tape<double> tape;
  std::vector<std::int32_t> bad = {6};
  CHECK_THROWS_AS(embedding(tape, table, std::span<const std::int32_t>(bad)), DimensionError);

  auto x = random_tensor({5, 2}, rng);
  std::vector<std::size_t> lengths = {2, 3};
  auto segs = Segments::from_lengths(lengths);
  auto pairs = adjacent_pairs(tape, x, segs);
  CHECK(pairs.shape() == Shape{3, 4});
  CHECK(pairs.at(0, 0) == x.at(0, 0));
  CHECK(pairs.at(0, 3) == x.at(1, 1));
  CHECK(pairs.at(2, 0) == x.at(3, 0));
  CHECK(pairs.at(2, 2) == x.at(4, 0));
  auto pair_report = check_gradients({x}, [&](Tape<double>& t) { return probe(t, adjacent_pairs(t, x, segs), 41); });
  CHECK(pair_report.max_relative_error < 1e-6);

  auto h = Tensor<double>::matrix(2, 2, {1, -2, 0, 3}, true);
  auto pooled = segment_max(tape, h, Segments::single(2));
  CHECK(pooled[0] == 1);
  CHECK(pooled[1] == 3);
  auto max_report = check_gradients({x}, [&](Tape<double>& t) { return probe(t, segment_max(t, x, segs), 43); });
  CHECK(max_report.max_relative_error < 1e-6);

  auto per_seg = random_tensor({2, 2}, rng);
  auto bc = broadcast_segments(tape, per_seg, segs);
  CHECK(bc.at(4, 1) == per_seg.at(1, 1));
  auto bc_report = check_gradients({per_seg}, [&](Tape<double>& t) {
    return probe(t, broadcast_segments(t, per_seg, segs), 47);
  });
  CHECK(bc_report.max_relative_error < 1e-6);
}

TEST_CASE("log_mixture and weighted_nll") {
  std::mt19937_64 rng(16);
  auto a = random_tensor({3, 4}, rng, -3, 0);
  auto b = random_tensor({3, 4}, rng, -3, 0);
  auto w = random_tensor({3, 2}, rng, -2, 0);
  Tape<double> tape;
  auto mix = log_mixture(tape, {a, b}, w);
  const double expect = std::log(std::exp(w.at(1, 0) + a.at(1, 2)) + std::exp(w.at(1, 1) + b.at(1, 2)));
  CHECK(mix.at(1, 2) == doctest::Approx(expect).epsilon(1e-13));
  auto report = check_gradients({a, b, w}, [&](Tape<double>& t) { return probe(t, log_mixture(t, {a, b}, w), 53); });
  CHECK(report.max_relative_error < 1e-4);

  std::vector<Pick> picks = {{1, 0.25}, {7, 0.75}, {1, 1.0}};
  auto nll = weighted_nll(tape, a, std::span<const Pick>(picks));
  CHECK(nll.item() == doctest::Approx(-(1.25 * a[1] + 0.75 * a[7])));
  auto nll_report = check_gradients({a}, [&](Tape<double>& t) { return weighted_nll(t, a, std::span<const Pick>(picks)); });
  CHECK(nll_report.max_relative_error < 1e-6);
}

TEST_CASE("finite outputs on inputs up to 1e3; non-finite input is an error") {
  std::mt19937_64 rng(17);
  Tape<double> tape;
  auto x = random_tensor({4, 8}, rng, -1e3, 1e3, false);
  Tensor<double> gain({8}), bias({8});
  for (auto& g : gain.data()) g = 1.0;
  auto segs = Segments::from_lengths(std::vector<std::size_t>{1, 3});
  CHECK_NOTHROW(softmax(tape, x, 1));
  CHECK_NOTHROW(log_softmax(tape, x, segs, Normalize::kSegment));
  CHECK_NOTHROW(layer_norm(tape, x, gain, bias));
  CHECK_NOTHROW(attention(tape, x, x, x, 2));
  CHECK_NOTHROW(tanh(tape, x));
  x[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(softmax(tape, x, 1), NumericError);
}
