// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "volo/tensor.hpp"

namespace volo {

/// A trainable tensor plus its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  // written by Tape::backward through const layer references
  mutable Tensor<T> grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() const {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T{0});
  }
};

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t extent(std::size_t axis) const { return value().extent(axis); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record. Nodes are appended in evaluation order, so walking
/// the node list backwards is a valid reverse topological order.
template <class T>
class Tape {
 public:
  /// Receives the gradient flowing into a node's output together with the
  /// output value, and accumulates into its inputs via grad_buffer().
  using BackwardFn =
      std::function<void(Tape&, const Tensor<T>& grad, const Tensor<T>& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var<T> constant(Tensor<T> value) { return push(std::move(value), false); }

  /// Differentiable input whose gradient can be read back with grad().
  Var<T> input(Tensor<T> value) {
    return push(std::move(value), grad_enabled_);
  }

  /// With gradients disabled nothing is differentiable and no closures are
  /// kept; used for inference.
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

  /// Differentiable view of a parameter. The value is referenced, not
  /// copied; backward() adds into param.grad.
  Var<T> param(const Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    n.requires_grad = p.requires_grad && grad_enabled_;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Records the output of a primitive. The output needs a gradient only if
  /// some input does; otherwise the backward closure is dropped.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_)
      for (const auto& v : inputs) needs = needs || requires_grad(v);
    Var<T> out = push(std::move(value), needs);
    if (needs) nodes_.back().backward = std::move(backward);
    return out;
  }

  const Tensor<T>& value(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id());
    return n.external ? *n.external : n.value;
  }

  bool requires_grad(const Var<T>& v) const {
    return nodes_.at(v.id()).requires_grad;
  }

  /// Gradient accumulator of a node, zero-initialized on first use.
  Tensor<T>& grad_buffer(const Var<T>& v) {
    Node& n = nodes_.at(v.id());
    if (n.grad.shape() != value(v).shape()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
  }

  /// Gradient of the last backward() w.r.t. v; zeros if v did not contribute.
  Tensor<T> grad(const Var<T>& v) {
    Node& n = nodes_.at(v.id());
    if (n.grad.shape() != value(v).shape()) return Tensor<T>(value(v).shape());
    return n.grad;
  }

  void backward(const Var<T>& loss) {
    if (value(loss).size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " +
                          to_string(value(loss).shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_buffer(loss)[0] = T{1};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) {
        // closures only touch the buffers of their inputs, never their own
        Tensor<T> g = std::move(n.grad);
        n.backward(*this, g, n.value);
        n.grad = std::move(g);
      } else if (n.param) {
        const Parameter<T>& p = *n.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
        for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
      }
    }
  }

  MAddCounter& counter() noexcept { return counter_; }
  const MAddCounter& counter() const noexcept { return counter_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Parameter<T>* param = nullptr;
  };

  Var<T> push(Tensor<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable addresses: value() references outlive later records
  MAddCounter counter_;
  bool grad_enabled_ = true;
};

}  // namespace volo
