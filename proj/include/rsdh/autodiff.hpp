#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rsdh/tensor.hpp"

namespace rsdh {

template <std::floating_point T>
class Tape;

/// One recorded value. Nodes without a tape are constants and never receive
/// gradients.
template <std::floating_point T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  Tape<T>* tape = nullptr;
  std::size_t seq = 0;
  std::string name;

  bool tracked() const noexcept { return tape != nullptr; }

  /// Gradient accumulator, zero-initialized on first access.
  Tensor<T>& grad_buffer() {
    if (!grad_ready) {
      grad = Tensor<T>::zeros(value.shape());
      grad_ready = true;
    }
    return grad;
  }
};

/// Handle to a value that may participate in reverse-mode differentiation.
template <std::floating_point T>
class Var {
 public:
  Var() : node_(std::make_shared<Node<T>>()) {}
  Var(Tensor<T> value) : node_(std::make_shared<Node<T>>()) { node_->value = std::move(value); }  // NOLINT
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const noexcept { return node_->value; }
  const Shape& shape() const noexcept { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool tracked() const noexcept { return node_->tracked(); }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Gradients of the tape's leaves after a backward pass.
template <std::floating_point T>
class GradMap {
 public:
  bool contains(const Var<T>& v) const { return grads_.count(v.node().get()) != 0; }
  const Tensor<T>& at(const Var<T>& v) const {
    auto it = grads_.find(v.node().get());
    if (it == grads_.end()) throw std::out_of_range("GradMap: variable is not a tracked leaf");
    return it->second;
  }
  const Tensor<T>& by_name(const std::string& name) const {
    auto it = named_.find(name);
    if (it == named_.end()) throw std::out_of_range("GradMap: no leaf named '" + name + "'");
    return grads_.at(it->second);
  }
  std::size_t size() const noexcept { return grads_.size(); }

  void insert(const Node<T>* node, Tensor<T> grad) {
    if (!node->name.empty()) named_[node->name] = node;
    grads_[node] = std::move(grad);
  }

 private:
  std::unordered_map<const Node<T>*, Tensor<T>> grads_;
  std::unordered_map<std::string, const Node<T>*> named_;
};

/// Ordered record of every operation that touched a tracked value.
/// Single-owner; Vars recorded on a tape must not outlive it.
template <std::floating_point T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable input.
  Var<T> leaf(Tensor<T> value, std::string name = {}) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->name = std::move(name);
    push(node);
    leaves_.push_back(node);
    return Var<T>(node);
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  void clear() {
    nodes_.clear();
    leaves_.clear();
  }

  void push(const std::shared_ptr<Node<T>>& node) {
    node->tape = this;
    node->seq = nodes_.size();
    nodes_.push_back(node);
  }

  const std::vector<std::shared_ptr<Node<T>>>& nodes() const noexcept { return nodes_; }
  const std::vector<std::shared_ptr<Node<T>>>& leaves() const noexcept { return leaves_; }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  std::vector<std::shared_ptr<Node<T>>> leaves_;
};

/// Creates the result of an operation. When any input is tracked the result
/// is recorded on that input's tape with `backward_fn`; otherwise it is a
/// constant and `backward_fn` is dropped.
template <std::floating_point T>
Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward_fn) {
  Tape<T>* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.tracked()) continue;
    if (tape && tape != in.node()->tape) throw std::logic_error("record: inputs belong to different tapes");
    tape = in.node()->tape;
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (!tape) return Var<T>(node);
  node->inputs.reserve(inputs.size());
  for (auto& in : inputs) node->inputs.push_back(in.node());
  node->backward_fn = std::move(backward_fn);
  tape->push(node);
  return Var<T>(node);
}

/// Reverse pass from a scalar loss. Visits recorded nodes in exact reverse
/// recording order and returns the gradient of every leaf on the tape (zero
/// for leaves the loss does not depend on).
template <std::floating_point T>
GradMap<T> backward(Tape<T>& tape, const Var<T>& loss) {
  if (tape.empty()) throw std::logic_error("backward: tape is empty");
  if (loss.value().numel() != 1) {
    throw DimensionError("backward", -1, "loss must be scalar, got shape " + shape_to_string(loss.shape()));
  }
  if (loss.tracked() && loss.node()->tape != &tape) throw std::logic_error("backward: loss recorded on another tape");

  for (const auto& n : tape.nodes()) n->grad_ready = false;

  if (loss.tracked()) {
    loss.node()->grad_buffer().fill(T(1));
    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
      Node<T>& n = **it;
      if (n.grad_ready && n.backward_fn) {
        n.backward_fn(n);
        // Interior gradients are consumed exactly once.
        n.grad = Tensor<T>();
        n.grad_ready = false;
      }
    }
  }

  GradMap<T> out;
  for (const auto& leaf : tape.leaves()) {
    out.insert(leaf.get(), leaf->grad_ready ? leaf->grad : Tensor<T>::zeros(leaf->value.shape()));
  }
  return out;
}

}  // namespace rsdh
