#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A BasicTensor is a shared handle onto a contiguous row-major buffer. Ops
// that see at least one input with requires_grad (and grad mode enabled)
// attach an OpRecord to their output; records carry a monotonically
// increasing sequence number, so sorting the reachable records by it
// descending yields an exact reverse topological order for backward().

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lifelong/errors.hpp"

namespace lifelong {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

enum class OpKind : std::uint8_t {
  matmul,
  bmm,
  add,
  mul,
  scale,
  add_bias,
  gelu,
  softmax,
  layer_norm,
  embedding,
  cross_entropy,
  transpose,
  reshape,
  sum,
  mean,
  dropout,
  prepend_rows,
};

constexpr std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::bmm: return "bmm";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_bias: return "add_bias";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax: return "softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::embedding: return "embedding";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::transpose: return "transpose";
    case OpKind::reshape: return "reshape";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::dropout: return "dropout";
    case OpKind::prepend_rows: return "prepend_rows";
  }
  return "unknown";
}

template <typename T>
struct OpRecord;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<OpRecord<T>> producer;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// One node of the compute graph: op kind, inputs, and the closure that
/// pushes the output gradient into the inputs. The closure receives the
/// output storage (values and grad) instead of owning it.
template <typename T>
struct OpRecord {
  OpKind kind;
  std::uint64_t order;
  std::vector<std::shared_ptr<TensorStorage<T>>> inputs;
  std::function<void(const TensorStorage<T>&)> backward;
};

namespace detail {

inline thread_local bool grad_mode = true;
inline thread_local std::uint64_t op_sequence = 0;

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

/// Disables graph recording for its lifetime (evaluation, weight surgery).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, bool requires_grad = false)
      : s_(std::make_shared<TensorStorage<T>>()) {
    s_->data.assign(element_count(shape), T(0));
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }

  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<TensorStorage<T>>()) {
    if (values.size() != element_count(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + to_string(shape));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(values);
    s_->requires_grad = requires_grad;
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t size(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> values() { return s_->data; }
  std::span<const T> values() const { return s_->data; }

  bool has_grad() const { return !s_->grad.empty() || s_->data.empty(); }
  std::span<T> grad() { return s_->ensure_grad(); }
  std::span<const T> grad() const { return s_->ensure_grad(); }
  void zero_grad() { s_->grad.clear(); }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool value) { s_->requires_grad = value; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor of shape " + to_string(shape()) +
                       " is not a scalar");
    }
    return s_->data[0];
  }

  /// Deep copy of values and the requires_grad flag, detached from any graph.
  BasicTensor clone() const {
    BasicTensor out(s_->shape, s_->data, s_->requires_grad);
    return out;
  }

  const OpRecord<T>* producer() const { return s_->producer.get(); }
  const std::shared_ptr<TensorStorage<T>>& storage() const { return s_; }
  bool same_storage(const BasicTensor& other) const { return s_ == other.s_; }

  static BasicTensor wrap(std::shared_ptr<TensorStorage<T>> storage) {
    BasicTensor t;
    t.s_ = std::move(storage);
    return t;
  }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

using Tensor = BasicTensor<float>;

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!grad_mode) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void attach(BasicTensor<T>& out, OpKind kind,
            std::vector<std::shared_ptr<TensorStorage<T>>> inputs,
            std::function<void(const TensorStorage<T>&)> backward) {
  auto record = std::make_shared<OpRecord<T>>();
  record->kind = kind;
  record->order = ++op_sequence;
  record->inputs = std::move(inputs);
  record->backward = std::move(backward);
  out.storage()->requires_grad = true;
  out.storage()->producer = std::move(record);
}

// Gradient buffer of an input, or nullptr when it does not take part in
// differentiation.
template <typename T>
T* grad_target(const std::shared_ptr<TensorStorage<T>>& s) {
  if (!s->requires_grad) return nullptr;
  return s->ensure_grad().data();
}

}  // namespace detail

/// Accumulates d(loss)/d(x) into every requires_grad tensor reachable from
/// `loss`. Leaf gradients add across repeated uses and repeated calls.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  const auto& root = loss.storage();
  if (!root->producer && !root->requires_grad) {
    throw InvalidArgument("backward: loss is not connected to any tensor requiring grad");
  }

  std::vector<TensorStorage<T>*> outputs;
  std::unordered_set<const TensorStorage<T>*> seen;
  std::vector<TensorStorage<T>*> stack{root.get()};
  while (!stack.empty()) {
    TensorStorage<T>* node = stack.back();
    stack.pop_back();
    if (!seen.insert(node).second) continue;
    if (!node->producer) continue;
    outputs.push_back(node);
    for (const auto& input : node->producer->inputs) stack.push_back(input.get());
  }
  std::sort(outputs.begin(), outputs.end(), [](const auto* a, const auto* b) {
    return a->producer->order > b->producer->order;
  });

  root->ensure_grad()[0] += T(1);
  for (TensorStorage<T>* node : outputs) {
    if (node->grad.empty()) continue;
    node->producer->backward(*node);
  }
}

}  // namespace lifelong
