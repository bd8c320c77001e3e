#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "insertion/nn/tensor.hpp"

namespace insertion::nn {

using Rng = std::mt19937_64;

/// Named, ordered collection of trainable tensors.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  Tensor<T> add(std::string name, Shape shape);
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)) taken from the matrix shape.
template <typename T>
void glorot_uniform(Tensor<T>& t, Rng& rng);

template <typename T>
void normal_fill(Tensor<T>& t, double stddev, Rng& rng);

template <typename T>
void constant_fill(Tensor<T>& t, T value);

}  // namespace insertion::nn
