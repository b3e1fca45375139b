#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <vector>

#include "xpl/nn/tensor.hpp"

namespace xpl::nn {

class Tape;

// Handle to a value recorded on a Tape. Valid only while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recorder. Nodes are appended in evaluation order, so reverse
// insertion order is a valid topological order for backpropagation.
//
// A tape constructed with record_gradients = false only evaluates values;
// it is what inference paths use.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  // Trainable params feed their gradient into Param::grad on backward;
  // frozen params behave as constants. The param must outlive the tape.
  Var parameter(Param& param);
  Var parameter(const Param& param);

  // Accumulates d(loss)/d(param) into every reachable trainable Param::grad.
  // Repeated calls accumulate again.
  void backward(Var loss);

  // Op-authoring interface.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  const Tensor& value(std::size_t id) const;
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient accumulator of a node, allocated on first use; nullptr when
  // the node does not need a gradient.
  Tensor* grad_sink(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    Param* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  bool recording_;
  std::vector<Node> nodes_;
};

}  // namespace xpl::nn
