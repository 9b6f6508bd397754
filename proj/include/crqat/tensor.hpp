/**
 * Copyright 2026 The crqat Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef CRQAT_TENSOR_HPP_
#define CRQAT_TENSOR_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crqat/errors.hpp"

namespace crqat {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Thread-local switch for graph recording.
class GradMode {
 public:
  static bool enabled() noexcept { return flag(); }
  static void set_enabled(bool on) noexcept { flag() = on; }

 private:
  static bool& flag() noexcept {
    thread_local bool on = true;
    return on;
  }
};

/// Disables graph recording for its lifetime. Used for teacher forwards
/// and evaluation.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class BasicTensor;

namespace detail {

template <class T>
struct TensorImpl;

template <class T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

/// One recorded operation of the compute graph. `order` is a global
/// creation counter, which is a valid topological index because a node is
/// always created after all of its inputs.
template <class T>
struct Node {
  using Backward = std::function<void(std::span<const T> out_grad, std::span<const ImplPtr<T>> inputs)>;

  std::uint64_t order = 0;
  const char* op = "";
  std::vector<ImplPtr<T>> inputs;
  std::weak_ptr<TensorImpl<T>> output;
  Backward backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  bool needs_grad() const noexcept { return requires_grad || node != nullptr; }

  /// Grad buffer, allocated with zeros on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T{0});
    return grad;
  }
};

inline std::uint64_t next_node_order() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace detail

/// Dense row-major tensor with an optional gradient buffer.
///
/// A tensor is a shared handle: copies alias the same storage, as in most
/// autodiff frameworks. `clone()` makes a detached deep copy.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (crqat::numel(shape) != data.size())
      throw DimensionError("tensor shape " + to_string(shape) + " holds " + std::to_string(crqat::numel(shape)) +
                           " values but " + std::to_string(data.size()) + " were given");
    for (auto extent : shape)
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(const Shape& shape, bool requires_grad = false) {
    return BasicTensor(shape, std::vector<T>(crqat::numel(shape), T{0}), requires_grad);
  }
  static BasicTensor full(const Shape& shape, T value, bool requires_grad = false) {
    return BasicTensor(shape, std::vector<T>(crqat::numel(shape), value), requires_grad);
  }
  static BasicTensor scalar(T value, bool requires_grad = false) { return BasicTensor({1}, {value}, requires_grad); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  T operator[](std::size_t i) const { return impl_->data[i]; }
  T item() const {
    if (numel() != 1) throw UsageError("item() on a tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }

  bool has_grad() const noexcept { return impl_ && impl_->grad.size() == impl_->data.size(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }
  bool is_leaf() const noexcept { return impl_->node == nullptr; }
  const char* op_name() const { return impl_->node ? impl_->node->op : "leaf"; }

  /// Deep copy without graph history or gradient.
  BasicTensor clone() const {
    BasicTensor out(impl_->shape, impl_->data, false);
    return out;
  }

  /// Same storage semantics as clone(); named for intent at call sites.
  BasicTensor detach() const { return clone(); }

  const detail::ImplPtr<T>& impl() const { return impl_; }

 private:
  detail::ImplPtr<T> impl_;
};

using Tensor = BasicTensor<float>;
using DTensor = BasicTensor<double>;

namespace detail {

/// Builds the output of an op and, when recording, attaches its node.
template <class T, class F>
BasicTensor<T> record(const char* op, Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                      F&& backward) {
  if (!all_finite<T>(data)) throw NumericError(std::string("non-finite value produced by ") + op);
  BasicTensor<T> out(std::move(shape), std::move(data));
  const bool track = GradMode::enabled() &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const BasicTensor<T>& t) { return t.defined() && t.impl()->needs_grad(); });
  if (track) {
    auto node = std::make_shared<Node<T>>();
    node->order = next_node_order();
    node->op = op;
    for (auto& in : inputs) node->inputs.push_back(in.impl());
    node->output = out.impl();
    node->backward = std::forward<F>(backward);
    out.impl()->node = std::move(node);
  }
  return out;
}

template <class T>
bool wants_grad(const ImplPtr<T>& p) {
  return p && p->needs_grad();
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss.
///
/// Leaf gradients accumulate across calls until zero_grad(); intermediate
/// gradients are reset at the start of every sweep. Each node is visited
/// once, in reverse creation order.
template <class T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() needs a scalar loss, got shape " + (loss.defined() ? to_string(loss.shape()) : "[]"));
  const auto& root = loss.impl();
  if (!root->needs_grad()) throw UsageError("backward() on a tensor that is not part of a recorded graph");

  std::vector<detail::Node<T>*> nodes;
  std::vector<detail::TensorImpl<T>*> leaves;
  std::unordered_set<const void*> seen;
  std::vector<detail::TensorImpl<T>*> stack{root.get()};
  while (!stack.empty()) {
    auto* t = stack.back();
    stack.pop_back();
    if (!seen.insert(t).second) continue;
    if (!t->node) {
      if (t->requires_grad) leaves.push_back(t);
      continue;
    }
    t->grad.assign(t->data.size(), T{0});
    nodes.push_back(t->node.get());
    for (auto& in : t->node->inputs)
      if (in && in->needs_grad()) stack.push_back(in.get());
  }
  std::sort(nodes.begin(), nodes.end(), [](auto* a, auto* b) { return a->order > b->order; });

  root->grad_buffer()[0] += T{1};
  for (auto* node : nodes) {
    auto out = node->output.lock();
    node->backward(std::span<const T>(out->grad), std::span<const detail::ImplPtr<T>>(node->inputs));
  }
  for (auto* leaf : leaves)
    if (!detail::all_finite<T>(leaf->grad)) throw NumericError("non-finite gradient reached a leaf tensor");
}

}  // namespace crqat

#endif  // CRQAT_TENSOR_HPP_
