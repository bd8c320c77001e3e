#include "insertion/nn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace insertion::nn {

namespace {
std::atomic<bool> g_finite_checks{true};
}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value.assign(shape_size(shape), T(0));
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::size_t rows, std::size_t cols,
                            std::initializer_list<T> values, bool requires_grad) {
  return Tensor({rows, cols}, std::vector<T>(values), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values, bool requires_grad) {
  return Tensor({values.size()}, std::vector<T>(values), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  const auto& s = node_->shape;
  if (s.size() == 2) return s[0];
  if (s.size() == 1) return 1;
  if (s.empty()) return 1;
  throw DimensionError("rows() on rank-" + std::to_string(s.size()) + " tensor");
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  const auto& s = node_->shape;
  if (s.size() == 2) return s[1];
  if (s.size() == 1) return s[0];
  if (s.empty()) return 1;
  throw DimensionError("cols() on rank-" + std::to_string(s.size()) + " tensor");
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  if (node_->grad.size() != node_->value.size()) {
    node_->grad.assign(node_->value.size(), T(0));
  }
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(node_->shape, node_->value, node_->requires_grad);
}

template <typename T>
void Tape<T>::record(Tensor<T> output, std::function<void()> backward) {
  entries_.push_back({std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(Tensor<T> loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " +
                         (loss.defined() ? shape_string(loss.shape()) : std::string("<null>")));
  }
  for (auto& e : entries_) {
    if (e.output.has_grad()) e.output.zero_grad();
  }
  loss.grad()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace insertion::nn
