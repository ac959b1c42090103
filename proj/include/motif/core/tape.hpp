#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "motif/core/tensor.hpp"

namespace motif {

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid until the tape is reset.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& val() const { return tape->value(id); }
  const Shape& shape() const { return val().shape(); }
  long numel() const { return val().numel(); }
  T item() const { return val()[0]; }
};

/// Trainable tensor with persistent gradient storage.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor<T>::zeros(value.shape());
  }
  void zero_grad() { grad.set_zero(); }
};

/// Reverse-mode tape. Nodes are recorded in execution order; backward walks
/// them in reverse. One tape per training step; reset() reclaims storage.
template <class T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily
    bool requires_grad = false;
    std::function<void()> backward;  // may be empty (leaves)
    Tensor<T>* param_grad = nullptr;
  };

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> param(Parameter<T>& p) {
    Var<T> v = leaf(p.value, true);
    nodes_.back().param_grad = &p.grad;
    return v;
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> record(Tensor<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_backward(int id, std::function<void()> fn) {
    nodes_[static_cast<size_t>(id)].backward = std::move(fn);
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  /// Gradient of a node, allocating zeros on first touch.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
    return n.grad;
  }
  bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

  void backward(Var<T> loss) {
    if (loss.val().numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    grad(loss.id)[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward();
      if (n.param_grad) n.param_grad->arr() += n.grad.arr();
    }
  }

  void reset() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace motif
