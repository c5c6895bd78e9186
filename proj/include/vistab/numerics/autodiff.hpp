#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vistab/numerics/tensor.hpp"

namespace vistab {

/// A named learnable tensor with its accumulated gradient.
template <std::floating_point T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<T> value)
      : name_(std::move(name)), value_(std::move(value)), grad_(value_.shape()) {}

  const std::string& name() const { return name_; }
  Tensor<T>& value() { return value_; }
  const Tensor<T>& value() const { return value_; }
  Tensor<T>& grad() { return grad_; }
  const Tensor<T>& grad() const { return grad_; }

  void zero_grad() {
    if (grad_.shape() != value_.shape()) grad_ = Tensor<T>(value_.shape());
    grad_.fill(T(0));
  }

 private:
  std::string name_;
  Tensor<T> value_;
  Tensor<T> grad_;
};

template <std::floating_point T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamically recorded computation graph for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the append order is already a
/// topological order and `backward` simply walks it in reverse, visiting each
/// node once. A tape is single-use per loss evaluation and confined to one
/// thread; parameter gradients are accumulated into `Parameter::grad`.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf that requires gradients but is not bound to a parameter.
  Var<T> input(Tensor<T> value) { return push(std::move(value), true, nullptr, {}); }

  /// Leaf bound to a parameter. Repeated calls for the same parameter return
  /// the same node, so gradients of shared weights sum naturally.
  Var<T> param(Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return {this, it->second};
    auto v = push(p.value(), !frozen_, frozen_ ? nullptr : &p, {});
    bound_.emplace(&p, v.id());
    return v;
  }

  /// Records a derived node. The backward function is dropped when no parent
  /// requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward) {
    return record(std::move(value), std::vector<Var<T>>(parents), std::move(backward));
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn backward) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || nodes_[p.id()].needs_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var<T> v) const { return nodes_[v.id()].needs_grad; }

  /// Gradient buffer of a node, allocated lazily.
  Tensor<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.shape() != n.value.shape() || n.grad.size() != n.value.size())
      n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }
  Tensor<T>& grad(Var<T> v) { return grad(v.id()); }

  /// Adds `g` into the gradient of `target` if it requires one.
  void accumulate(Var<T> target, const Tensor<T>& g) {
    if (!nodes_[target.id()].needs_grad) return;
    grad(target.id()) += g;
  }

  /// Backpropagates from a scalar root. May be called once per tape.
  void backward(Var<T> root) {
    if (root.value().size() != 1) throw DimensionError("backward: root must be scalar");
    grad(root.id()).fill(T(1));
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.needs_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) n.param->grad() += n.grad;
    }
  }

  /// While frozen, `param` returns constants: no gradient reaches parameters.
  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool needs, Parameter<T>* param, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, needs, param, std::move(backward)});
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> bound_;
  bool frozen_ = false;
};

}  // namespace vistab
