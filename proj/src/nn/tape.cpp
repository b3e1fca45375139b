#include "xpl/nn/tape.hpp"

#include "xpl/core/error.hpp"

namespace xpl::nn {

const Tensor& Var::value() const {
  require(tape_ != nullptr, ErrorCode::kInvalidState, "use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  return push(std::move(node));
}

Var Tape::parameter(Param& param) {
  if (!param.trainable || param.buffer || !recording_) return parameter(std::as_const(param));
  Node node;
  node.external = &param.value;
  node.param = &param;
  node.requires_grad = true;
  return push(std::move(node));
}

Var Tape::parameter(const Param& param) {
  Node node;
  node.external = &param.value;
  return push(std::move(node));
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  Node node;
  node.owned = std::move(value);
  if (recording_) {
    for (const Var& p : parents) {
      require(p.tape() == this, ErrorCode::kInvalidArgument, "operands recorded on different tapes");
      if (nodes_[p.id()].requires_grad) node.requires_grad = true;
    }
    if (node.requires_grad) node.backward = std::move(fn);
  }
  return push(std::move(node));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.external ? *node.external : node.owned;
}

Tensor* Tape::grad_sink(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (node.grad.shape() != value(id).shape()) node.grad = Tensor(value(id).shape());
  return &node.grad;
}

void Tape::backward(Var loss) {
  require(recording_, ErrorCode::kInvalidState, "backward on a tape that does not record gradients");
  require(!nodes_.empty(), ErrorCode::kInvalidState, "backward called before any forward pass");
  require(loss.tape() == this && loss.id() < nodes_.size(), ErrorCode::kInvalidState,
          "loss was not recorded on this tape");
  require(value(loss.id()).size() == 1, ErrorCode::kInvalidArgument, "backward needs a scalar loss");

  for (Node& node : nodes_) node.grad = Tensor();
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad = Tensor(value(loss.id()).shape(), 1.0);

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.param != nullptr) {
      Param& p = *node.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
      for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += node.grad[k];
    } else if (node.backward) {
      node.backward(*this, i);
    }
  }
}

}  // namespace xpl::nn
