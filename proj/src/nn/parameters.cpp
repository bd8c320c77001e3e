#include "insertion/nn/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace insertion::nn {

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  Tensor<T> t(std::move(shape), /*requires_grad=*/true);
  entries_.push_back({std::move(name), t});
  return t;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
void glorot_uniform(Tensor<T>& t, Rng& rng) {
  const double fan_in = static_cast<double>(t.rows());
  const double fan_out = static_cast<double>(t.cols());
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void normal_fill(Tensor<T>& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void constant_fill(Tensor<T>& t, T value) {
  std::fill(t.data().begin(), t.data().end(), value);
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void glorot_uniform(Tensor<float>&, Rng&);
template void glorot_uniform(Tensor<double>&, Rng&);
template void normal_fill(Tensor<float>&, double, Rng&);
template void normal_fill(Tensor<double>&, double, Rng&);
template void constant_fill(Tensor<float>&, float);
template void constant_fill(Tensor<double>&, double);

}  // namespace insertion::nn
