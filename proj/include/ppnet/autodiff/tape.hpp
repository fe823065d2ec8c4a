#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ppnet/error.hpp"

namespace ppnet::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape);

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Shape& shape() const { return tape->shape(*this); }
  std::span<const T> value() const { return tape->value(*this); }
  std::size_t rows() const { return shape().front(); }
  std::size_t cols() const { return shape().size() > 1 ? shape()[1] : 1; }
};

/// Linear record of executed ops. backward() walks the record in exact
/// reverse order; gradients accumulate additively at fan-out.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Shape shape, std::vector<T> values) { return push(std::move(shape), std::move(values), false, {}); }
  Var<T> parameter(Shape shape, std::vector<T> values) { return push(std::move(shape), std::move(values), true, {}); }

  Var<T> push(Shape shape, std::vector<T> values, bool requires_grad, BackwardFn backward) {
    if (values.size() != numel(shape))
      fail(ErrorKind::Argument, "tape: value count " + std::to_string(values.size()) + " does not match shape " +
                                    to_string(shape));
    nodes_.push_back(Node{std::move(shape), std::move(values), {}, requires_grad, std::move(backward)});
    return Var<T>{this, nodes_.size() - 1};
  }

  const Shape& shape(Var<T> v) const { return nodes_[v.id].shape; }
  std::span<const T> value(Var<T> v) const { return nodes_[v.id].value; }
  std::span<const T> value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer, zero-allocated on first access.
  std::span<T> grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }
  std::span<T> grad(Var<T> v) { return grad(v.id); }
  bool has_grad(Var<T> v) const { return !nodes_[v.id].grad.empty(); }

  /// Seeds d(output)/d(output) = 1 for a scalar output and back-propagates.
  void backward(Var<T> output) {
    if (nodes_[output.id].value.size() != 1) fail(ErrorKind::Argument, "backward needs a scalar output");
    grad(output)[0] = T(1);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this, i);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad.clear();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

}  // namespace ppnet::ad
