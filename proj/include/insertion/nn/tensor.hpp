#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace insertion::nn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Raised when operand shapes do not fit an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major tensor handle. Copies share storage, so a handle captured
/// by a backward closure sees gradients written later.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<T> values,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<T> values,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  // Rank-1 tensors are viewed as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T& operator[](std::size_t i) { return node_->value[i]; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }
  T& at(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Allocates a zero accumulator on first access. Handles share one node,
  // so gradient access does not depend on handle constness.
  std::span<T> grad() const;
  std::span<const T> grad_view() const { return node_->grad; }
  void zero_grad() const;
  void drop_grad() const { node_->grad.clear(); }

  // Deep copy detached from any graph.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

/// Computation record: the reverse-mode closures of every differentiable op
/// evaluated against it, in evaluation (topological) order.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  void record(Tensor<T> output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs every closure in reverse. Leaf
  // gradients accumulate across calls; intermediate gradients are reset.
  void backward(Tensor<T> loss);

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    Tensor<T> output;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Entry> entries_;
};

// Finite checks on forward outputs; on by default.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

}  // namespace insertion::nn
