// Central finite-difference oracle shared by the gradient tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "insertion/nn/ops.hpp"

namespace testing_support {

using insertion::nn::Tape;
using insertion::nn::Tensor;

inline Tensor<double> random_tensor(insertion::nn::Shape shape, std::mt19937_64& rng,
                                    double lo = -1.0, double hi = 1.0, bool grad = true) {
  Tensor<double> t(std::move(shape), grad);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

struct GradReport {
  double max_relative_error = 0;
  std::size_t checked = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps entries whose
// true gradient is ~0 from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradReport check_gradients(std::vector<Tensor<double>> inputs,
                                  const std::function<Tensor<double>(Tape<double>&)>& loss_fn,
                                  double eps = 1e-6, double floor = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  Tape<double> tape;
  auto loss = loss_fn(tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  auto evaluate = [&]() {
    Tape<double> quiet(false);
    return loss_fn(quiet).item();
  };
  GradReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = evaluate();
      data[i] = saved - eps;
      const double down = evaluate();
      data[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      report.max_relative_error =
          std::max(report.max_relative_error, relative_error(analytic[k][i], numeric, floor));
      ++report.checked;
    }
  }
  return report;
}

}  // namespace testing_support
