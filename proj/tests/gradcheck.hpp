#pragma once

// Central finite-difference oracle for the autodiff engine. The oracle only
// ever calls the forward pass (under NoGradGuard); backward() is what gets
// checked.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lifelong/ops.hpp"

namespace lifelong::testing {

template <typename T>
BasicTensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> values(element_count(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>(std::move(shape), std::move(values), requires_grad);
}

struct GradCheckResult {
  double worst_relative = 0.0;  // max over elements of |ad - fd| / (|fd| + 1e-8)
  double norm_relative = 0.0;   // ||ad - fd|| / ||fd||
  std::size_t elements = 0;
};

/// Projects f(inputs) onto fixed random weights so every output element
/// contributes, then compares autodiff against central differences.
template <typename T>
GradCheckResult check_gradients(const std::function<BasicTensor<T>(std::vector<BasicTensor<T>>&)>& f,
                                std::vector<BasicTensor<T>> inputs, double h, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  BasicTensor<T> weights;
  {
    NoGradGuard guard;
    auto probe = f(inputs);
    weights = random_tensor<T>(probe.shape(), rng, -1.0, 1.0, false);
  }
  auto objective = [&](std::vector<BasicTensor<T>>& in) { return sum(mul(f(in), weights)); };

  for (auto& t : inputs) t.zero_grad();
  backward(objective(inputs));

  GradCheckResult result;
  double diff_sq = 0.0, ref_sq = 0.0;
  NoGradGuard guard;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<T> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const T original = t.values()[i];
      t.values()[i] = static_cast<T>(original + h);
      const double up = objective(inputs).item();
      t.values()[i] = static_cast<T>(original - h);
      const double down = objective(inputs).item();
      t.values()[i] = original;
      const double fd = (up - down) / (2.0 * h);
      const double ad = analytic[i];
      result.worst_relative = std::max(result.worst_relative, std::abs(ad - fd) / (std::abs(fd) + 1e-8));
      diff_sq += (ad - fd) * (ad - fd);
      ref_sq += fd * fd;
      ++result.elements;
    }
  }
  result.norm_relative = std::sqrt(diff_sq) / std::max(std::sqrt(ref_sq), 1e-30);
  return result;
}

}  // namespace lifelong::testing
