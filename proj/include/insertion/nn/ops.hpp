#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "insertion/nn/tensor.hpp"

namespace insertion::nn {

/// Row partition of a packed matrix: segment s covers rows
/// [offsets[s], offsets[s+1]). Several variable-length sequences share one
/// matrix this way, with no padding.
class Segments {
 public:
  Segments() : offsets_{0} {}
  static Segments from_lengths(std::span<const std::size_t> lengths);
  static Segments single(std::size_t length);

  std::size_t count() const { return offsets_.size() - 1; }
  std::size_t total() const { return offsets_.back(); }
  std::size_t begin(std::size_t s) const { return offsets_[s]; }
  std::size_t end(std::size_t s) const { return offsets_[s + 1]; }
  std::size_t length(std::size_t s) const { return end(s) - begin(s); }
  void push(std::size_t length) { offsets_.push_back(total() + length); }
  const std::vector<std::size_t>& offsets() const { return offsets_; }

  bool operator==(const Segments&) const = default;

 private:
  std::vector<std::size_t> offsets_;
};

/// (flat index, weight) entry for weighted negative log-likelihood.
struct Pick {
  std::size_t index;
  double weight;
};

enum class Normalize {
  kRow,      // each row is its own distribution
  kSegment,  // all entries of a segment form one distribution
};

template <typename T> Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor);
// x (N×C) + bias (C) broadcast over rows.
template <typename T> Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias);
// x (N×C) + col (N×1) broadcast over columns.
template <typename T> Tensor<T> add_column(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& col);
template <typename T> Tensor<T> relu(Tape<T>& tape, const Tensor<T>& a);
template <typename T> Tensor<T> tanh(Tape<T>& tape, const Tensor<T>& a);
template <typename T> Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a);

// Numerically stable softmax along `axis` of a rank-1 or rank-2 tensor.
template <typename T> Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& v, std::size_t axis);

template <typename T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x, const Segments& segments,
                      Normalize mode);

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5));

// Rows of `table` selected by ids.
template <typename T>
Tensor<T> embedding(Tape<T>& tape, const Tensor<T>& table, std::span<const std::int32_t> ids);

/// Multi-head scaled dot-product attention over packed segments. Query
/// segment s attends to key segment s only. `mask`, when given, is a
/// (total queries × total keys) 0/1 tensor; zero entries are blocked. A query
/// row with nothing to attend to yields zeros.
template <typename T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t num_heads, const Segments& q_segments,
                    const Segments& k_segments, const Tensor<T>* mask = nullptr);

// Single-segment convenience form.
template <typename T>
Tensor<T> attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    std::size_t num_heads, const Tensor<T>* mask = nullptr);

// For each segment of length m > 0, emits m-1 rows [x_p ; x_{p+1}] (2C wide).
template <typename T>
Tensor<T> adjacent_pairs(Tape<T>& tape, const Tensor<T>& x, const Segments& segments);

// Elementwise max over the rows of each segment: S×C.
template <typename T>
Tensor<T> segment_max(Tape<T>& tape, const Tensor<T>& x, const Segments& segments);

// Repeats row s of x (S×C) over every row of segment s: N×C.
template <typename T>
Tensor<T> broadcast_segments(Tape<T>& tape, const Tensor<T>& x, const Segments& segments);

// log Σ_k exp(log_weights[:,k] + components[k]) elementwise; every component
// is N×C and log_weights is N×K.
template <typename T>
Tensor<T> log_mixture(Tape<T>& tape, const std::vector<Tensor<T>>& components,
                      const Tensor<T>& log_weights);

// −Σ weight·x[index], a scalar.
template <typename T>
Tensor<T> weighted_nll(Tape<T>& tape, const Tensor<T>& log_probs, std::span<const Pick> picks);

}  // namespace insertion::nn
