#include "insertion/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace insertion {

double log_sum_exp(const double* values, std::size_t n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, values[i]);
  if (mx == -std::numeric_limits<double>::infinity()) return mx;
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(values[i] - mx);
  return mx + std::log(z);
}

ContentLocationDistribution ContentLocationDistribution::from_joint(
    std::size_t slots, std::size_t vocab, std::vector<double> joint_log_probs) {
  if (joint_log_probs.size() != slots * vocab) {
    throw std::invalid_argument("joint table size does not match slots x vocab");
  }
  ContentLocationDistribution d;
  d.slots_ = slots;
  d.vocab_ = vocab;
  d.factorized_ = false;
  d.joint_ = std::move(joint_log_probs);
  d.location_.resize(slots);
  d.conditional_.resize(slots * vocab);
  for (std::size_t l = 0; l < slots; ++l) {
    const double* row = d.joint_.data() + l * vocab;
    d.location_[l] = log_sum_exp(row, vocab);
    for (std::size_t c = 0; c < vocab; ++c) d.conditional_[l * vocab + c] = row[c] - d.location_[l];
  }
  return d;
}

ContentLocationDistribution ContentLocationDistribution::from_factorized(
    std::vector<double> location_log_probs, std::size_t vocab,
    std::vector<double> conditional_log_probs) {
  const std::size_t slots = location_log_probs.size();
  if (conditional_log_probs.size() != slots * vocab) {
    throw std::invalid_argument("conditional table size does not match slots x vocab");
  }
  ContentLocationDistribution d;
  d.slots_ = slots;
  d.vocab_ = vocab;
  d.factorized_ = true;
  d.location_ = std::move(location_log_probs);
  d.conditional_ = std::move(conditional_log_probs);
  d.joint_.resize(slots * vocab);
  for (std::size_t l = 0; l < slots; ++l)
    for (std::size_t c = 0; c < vocab; ++c)
      d.joint_[l * vocab + c] = d.location_[l] + d.conditional_[l * vocab + c];
  return d;
}

ContentLocationDistribution ContentLocationDistribution::from_joint_logits(
    std::size_t slots, std::size_t vocab, const std::vector<double>& logits) {
  if (logits.size() != slots * vocab) {
    throw std::invalid_argument("logit table size does not match slots x vocab");
  }
  const double lz = log_sum_exp(logits.data(), logits.size());
  std::vector<double> joint(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) joint[i] = logits[i] - lz;
  return from_joint(slots, vocab, std::move(joint));
}

}  // namespace insertion
