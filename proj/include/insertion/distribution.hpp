#pragma once

#include <cstddef>
#include <vector>

namespace insertion {

/// Log-probabilities over (location l ∈ [0, T], content c). Both the joint
/// table and the per-slot conditionals are always populated; `factorized`
/// records which form the model normalized directly.
class ContentLocationDistribution {
 public:
  ContentLocationDistribution() = default;

  // Joint log p(c, l) for slots×vocab entries (one normalization overall).
  static ContentLocationDistribution from_joint(std::size_t slots, std::size_t vocab,
                                                std::vector<double> joint_log_probs);
  // log p(l) (slots) and log p(c | l) (slots×vocab).
  static ContentLocationDistribution from_factorized(std::vector<double> location_log_probs,
                                                     std::size_t vocab,
                                                     std::vector<double> conditional_log_probs);
  // Uniform-free helper for scripted policies: joint log-probs from raw scores.
  static ContentLocationDistribution from_joint_logits(std::size_t slots, std::size_t vocab,
                                                       const std::vector<double>& logits);

  std::size_t slots() const { return slots_; }
  std::size_t vocab() const { return vocab_; }
  bool factorized() const { return factorized_; }

  double joint(std::size_t l, std::size_t c) const { return joint_[l * vocab_ + c]; }
  double location(std::size_t l) const { return location_[l]; }
  double conditional(std::size_t l, std::size_t c) const { return conditional_[l * vocab_ + c]; }

  const std::vector<double>& joint_table() const { return joint_; }
  const std::vector<double>& conditional_table() const { return conditional_; }
  const std::vector<double>& location_table() const { return location_; }

 private:
  std::size_t slots_ = 0;
  std::size_t vocab_ = 0;
  bool factorized_ = false;
  std::vector<double> joint_;
  std::vector<double> location_;
  std::vector<double> conditional_;
};

double log_sum_exp(const double* values, std::size_t n);

}  // namespace insertion
