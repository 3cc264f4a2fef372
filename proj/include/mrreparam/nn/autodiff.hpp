#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

#include "mrreparam/tensor.hpp"

namespace mrreparam::nn {

/// Trainable tensor with its gradient and Adam moments.
template <typename T>
struct Parameter {
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> adam_m;
  BasicTensor<T> adam_v;
  std::int64_t step_count = 0;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(BasicTensor<T> v)
      : value(std::move(v)), grad(value.shape()), adam_m(value.shape()), adam_v(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

/// Linear record of a forward computation. `backward` replays it in reverse,
/// accumulating vector-Jacobian products into inputs and finally into the
/// gradients of trainable Parameters. Frozen Parameters enter as constants.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var<T> self, const BasicTensor<T>& grad)>;

  /// A tape built with `record_gradients = false` treats every Parameter as a constant.
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}

  Var<T> constant(BasicTensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  Var<T> parameter(Parameter<T>& p) {
    const bool live = record_gradients_ && p.trainable;
    return push(p.value, live, live ? &p : nullptr, {});
  }

  /// Appends an op result. `fn` receives the node itself and its gradient and
  /// must `accumulate` into each input; it is dropped when no input needs one.
  Var<T> record(BasicTensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  void accumulate(Var<T> v, const BasicTensor<T>& g) {
    Node& node = nodes_[v.id];
    if (!node.requires_grad) return;
    if (g.shape() != node.value.shape()) {
      throw InvalidArgument("gradient shape " + shape_str(g.shape()) + " does not match value " +
                            shape_str(node.value.shape()));
    }
    if (node.grad.empty()) {
      node.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
  }

  void backward(Var<T> loss) {
    if (nodes_[loss.id].value.size() != 1) {
      throw InvalidArgument("backward needs a scalar loss, got shape " +
                            shape_str(nodes_[loss.id].value.shape()));
    }
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = BasicTensor<T>(nodes_[loss.id].value.shape(), T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.grad.empty()) continue;
      if (node.param) {
        auto& pg = node.param->grad;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += node.grad[k];
      } else if (node.backward) {
        node.backward(*this, Var<T>{this, i}, node.grad);
      }
      node.grad = BasicTensor<T>();
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> push(BasicTensor<T> value, bool requires_grad, Parameter<T>* param, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), BasicTensor<T>(), requires_grad, param, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool record_gradients_ = true;
};

}  // namespace mrreparam::nn
