#pragma once

// One gradient-check case per differentiable op. Shared by the unit suite
// and the acceptance suite.

#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace lifelong::testing {

template <typename T>
struct OpCase {
  std::string name;
  std::function<BasicTensor<T>(std::vector<BasicTensor<T>>&)> f;
  std::vector<BasicTensor<T>> inputs;
};

template <typename T>
std::vector<OpCase<T>> op_gradient_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor<T>(std::move(s), rng, lo, hi); };
  std::vector<OpCase<T>> cases;
  using V = std::vector<BasicTensor<T>>;

  cases.push_back({"matmul", [](V& in) { return matmul(in[0], in[1]); }, {r({2, 3, 4}), r({4, 5})}});
  cases.push_back({"matmul_transposed", [](V& in) { return matmul(in[0], in[1], true); }, {r({3, 4}), r({6, 4})}});
  cases.push_back({"bmm", [](V& in) { return bmm(in[0], in[1]); }, {r({2, 3, 4}), r({2, 4, 3})}});
  cases.push_back({"bmm_transposed", [](V& in) { return bmm(in[0], in[1], true); }, {r({2, 3, 4}), r({2, 5, 4})}});
  cases.push_back({"add", [](V& in) { return add(in[0], in[1]); }, {r({3, 4}), r({3, 4})}});
  cases.push_back({"mul", [](V& in) { return mul(in[0], in[1]); }, {r({3, 4}), r({3, 4})}});
  cases.push_back({"mul_self", [](V& in) { return mul(in[0], in[0]); }, {r({5})}});
  cases.push_back({"scale", [](V& in) { return scale(in[0], T(-1.7)); }, {r({4, 2})}});
  cases.push_back({"add_bias", [](V& in) { return add_bias(in[0], in[1]); }, {r({2, 3, 4}), r({4})}});
  cases.push_back({"gelu", [](V& in) { return gelu(in[0]); }, {r({3, 5}, -3.0, 3.0)}});
  cases.push_back({"softmax", [](V& in) { return softmax(in[0]); }, {r({3, 6}, -2.0, 2.0)}});
  cases.push_back({"softmax_causal", [](V& in) { return softmax(in[0], AttentionMask::causal); },
                   {r({2, 4, 4}, -2.0, 2.0)}});
  cases.push_back({"layer_norm", [](V& in) { return layer_norm(in[0], in[1], in[2]); },
                   {r({3, 6}, -2.0, 2.0), r({6}, 0.5, 1.5), r({6})}});
  cases.push_back({"embedding", [](V& in) {
                     static const std::vector<std::int32_t> ids{2, 0, 2, 1, 3, 2};
                     return embedding(in[0], ids, Shape{2, 3});
                   },
                   {r({4, 3})}});
  cases.push_back({"cross_entropy", [](V& in) {
                     static const std::vector<std::int32_t> targets{1, kIgnoreTarget, 4, 0};
                     return cross_entropy(in[0], targets);
                   },
                   {r({2, 2, 5}, -2.0, 2.0)}});
  cases.push_back({"transpose", [](V& in) { return transpose(in[0], 0, 2); }, {r({2, 3, 4})}});
  cases.push_back({"reshape", [](V& in) { return reshape(in[0], Shape{6, 2}); }, {r({3, 4})}});
  cases.push_back({"sum", [](V& in) { return sum(in[0]); }, {r({3, 3})}});
  cases.push_back({"mean", [](V& in) { return mean(in[0]); }, {r({3, 3})}});
  cases.push_back({"dropout", [](V& in) {
                     std::mt19937_64 mask_rng(99);
                     return dropout(in[0], 0.3, mask_rng);
                   },
                   {r({4, 5})}});
  cases.push_back({"prepend_rows", [](V& in) {
                     std::vector<BasicTensor<T>> rows{in[1], in[2], in[1]};
                     return prepend_rows(in[0], std::span<const BasicTensor<T>>(rows));
                   },
                   {r({3, 2, 4}), r({4}), r({4})}});
  return cases;
}

}  // namespace lifelong::testing
