// sebn/tensor.hpp

// Copyright 2026  sebn project

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SEBN_TENSOR_HPP_
#define SEBN_TENSOR_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "sebn/rng.hpp"

namespace sebn {

[[noreturn]] inline void contract_violation(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void check_contract(bool ok, const std::string& msg) {
  if (!ok) contract_violation(msg);
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

namespace detail {

template <class S>
struct TensorImpl;

/// One node of the reverse-mode graph. `fn` receives the gradient of the
/// node's output and pointers to accumulation buffers for each input
/// (nullptr when that input is not grad-connected).
template <class S>
struct GradNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<S>>> inputs;
  std::function<void(const std::vector<S>& out_grad,
                     const std::vector<std::vector<S>*>& in_grads)>
      fn;
};

template <class S>
struct TensorImpl {
  std::vector<int> shape;
  std::vector<S> data;
  std::vector<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradNode<S>> grad_fn;

  long numel() const {
    long n = 1;
    for (const int d : shape) n *= d;
    return n;
  }
};

// Thread-local switch disabling graph construction (forward-only regions).
inline thread_local int grad_disabled_depth = 0;

}  // namespace detail

inline bool grad_enabled() { return detail::grad_disabled_depth == 0; }

/// RAII scope during which ops do not record backward nodes.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::grad_disabled_depth; }
  ~NoGradGuard() { --detail::grad_disabled_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense n-dimensional array with a flat row-major buffer and an optional
/// gradient slot. Copies are shallow handles sharing the same storage.
template <class S>
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl<S>>()) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static Tensor ones(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), S(1), requires_grad);
  }

  static Tensor filled(std::vector<int> shape, S value,
                       bool requires_grad = false) {
    Tensor t;
    validate_shape(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<size_t>(t.impl_->numel()), value);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_data(std::vector<int> shape, std::vector<S> data,
                          bool requires_grad = false) {
    Tensor t;
    validate_shape(shape);
    t.impl_->shape = std::move(shape);
    long n = t.impl_->numel();
    check_contract(static_cast<long>(data.size()) == n,
                   "tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(t.impl_->shape));
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  /// Uniform in [lo, hi) from the given stream.
  static Tensor uniform(std::vector<int> shape, Rng& rng, S lo, S hi,
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.impl_->data) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor randn(std::vector<int> shape, Rng& rng, S stddev = S(1),
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.impl_->data) v = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  const std::vector<int>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  long numel() const { return impl_->numel(); }
  bool defined() const { return !impl_->shape.empty() || !impl_->data.empty(); }

  S* data() { return impl_->data.data(); }
  const S* data() const { return impl_->data.data(); }
  std::vector<S>& vec() { return impl_->data; }
  const std::vector<S>& vec() const { return impl_->data; }

  S& at(std::initializer_list<int> idx) { return impl_->data[offset(idx)]; }
  S at(std::initializer_list<int> idx) const { return impl_->data[offset(idx)]; }

  S value() const {
    check_contract(numel() == 1, "tensor: value() requires a scalar tensor");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }

  /// Gradient buffer, allocated (zero) on first access.
  std::vector<S>& grad() {
    if (impl_->grad.empty())
      impl_->grad.assign(static_cast<size_t>(numel()), S(0));
    return impl_->grad;
  }
  const std::vector<S>& grad() const {
    check_contract(has_grad(), "tensor: gradient has not been populated");
    return impl_->grad;
  }

  void zero_grad() { impl_->grad.clear(); }

  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  bool grad_connected() const {
    return impl_->requires_grad || impl_->grad_fn != nullptr;
  }

  /// Deep copy of values; the copy is a detached leaf.
  Tensor clone() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  bool all_finite() const {
    for (const S v : impl_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::shared_ptr<detail::TensorImpl<S>> impl_;

 private:
  static void validate_shape(const std::vector<int>& shape) {
    for (const int d : shape)
      check_contract(d > 0, "tensor: shape extents must be positive, got " +
                                shape_str(shape));
  }

  size_t offset(std::initializer_list<int> idx) const {
    check_contract(static_cast<int>(idx.size()) == rank(),
                   "tensor: index rank mismatch");
    size_t off = 0;
    int i = 0;
    for (const int v : idx) {
      const int extent = impl_->shape[static_cast<size_t>(i)];
      check_contract(v >= 0 && v < extent, "tensor: index out of range");
      off = off * static_cast<size_t>(extent) + static_cast<size_t>(v);
      ++i;
    }
    return off;
  }
};

namespace detail {

/// Builds an op output, attaching a backward node when any input is
/// grad-connected and grad mode is on.
template <class S>
Tensor<S> make_op(const char* op, std::vector<int> out_shape,
                  std::vector<S> out_data, std::vector<Tensor<S>> inputs,
                  std::function<void(const std::vector<S>&,
                                     const std::vector<std::vector<S>*>&)>
                      backward) {
  Tensor<S> out = Tensor<S>::from_data(std::move(out_shape), std::move(out_data));
  if (!grad_enabled()) return out;
  bool connected = false;
  for (const auto& in : inputs) connected = connected || in.grad_connected();
  if (!connected) return out;
  auto node = std::make_shared<GradNode<S>>();
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (auto& in : inputs) node->inputs.push_back(in.impl_);
  node->fn = std::move(backward);
  out.impl_->grad_fn = std::move(node);
  return out;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Each graph node is visited exactly
/// once; gradients accumulate additively into every tensor that has
/// requires_grad set. Calling backward again without zero_grad adds on top.
template <class S>
void backward(const Tensor<S>& loss) {
  check_contract(loss.numel() == 1, "backward: loss must be a scalar tensor");
  using Impl = detail::TensorImpl<S>;

  // Post-order DFS; reversed it yields outputs-before-inputs.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, size_t>> stack;
  stack.emplace_back(loss.impl_.get(), 0);
  visited.insert(loss.impl_.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (node->grad_fn && next_child < node->grad_fn->inputs.size()) {
      Impl* child = node->grad_fn->inputs[next_child].get();
      ++next_child;
      if ((child->grad_fn || child->requires_grad) && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<Impl*, std::vector<S>> flowing;
  flowing[loss.impl_.get()] = {S(1)};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    auto git = flowing.find(node);
    if (git == flowing.end() || !node->grad_fn) continue;
    auto& gn = *node->grad_fn;
    std::vector<std::vector<S>*> in_grads(gn.inputs.size(), nullptr);
    for (size_t i = 0; i < gn.inputs.size(); ++i) {
      Impl* in = gn.inputs[i].get();
      if (!in->requires_grad && !in->grad_fn) continue;
      auto [slot, inserted] = flowing.try_emplace(in);
      if (inserted) slot->second.assign(static_cast<size_t>(in->numel()), S(0));
      in_grads[i] = &slot->second;
    }
    gn.fn(git->second, in_grads);
  }

  for (auto& [impl, g] : flowing) {
    if (!impl->requires_grad) continue;
    if (impl->grad.empty()) impl->grad.assign(g.size(), S(0));
    for (size_t i = 0; i < g.size(); ++i) impl->grad[i] += g[i];
  }
}

}  // namespace sebn

#endif  // SEBN_TENSOR_HPP_
