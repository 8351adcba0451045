#include "selfmon/tape.hpp"

#include "selfmon/errors.hpp"

namespace selfmon::num {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw ContractError("item() on non-scalar " + shape_string(v.shape()));
  return v[0];
}

void Tape::bind(const ParameterSet* params) {
  params_ = params;
  param_nodes_.assign(params ? params->size() : 0, -1);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.alias = &value;
  return push(std::move(n));
}

Var Tape::param(std::size_t index) {
  if (!params_) throw ContractError("tape has no bound parameter set");
  if (index >= params_->size()) throw ContractError("parameter index out of range");
  if (param_nodes_[index] >= 0) return Var(this, static_cast<std::uint32_t>(param_nodes_[index]));
  const Parameter& p = (*params_)[index];
  Node n;
  n.alias = &p.tensor;
  n.needs_grad = p.trainable;
  n.param_index = static_cast<std::int32_t>(index);
  Var v = push(std::move(n));
  param_nodes_[index] = static_cast<std::int32_t>(v.id());
  return v;
}

Var Tape::record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ContractError("node input precedes creation");
    n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  return n.alias ? *n.alias : n.owned;
}

Tensor* Tape::grad_target(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (!n.grad_live) {
    n.grad = Tensor::zeros_like(value(id));
    n.grad_live = true;
  }
  return &n.grad;
}

const Tensor& Tape::grad(std::uint32_t id) const { return nodes_[id].grad; }

void Tape::backward(Var root) {
  if (root.tape() != this) throw ContractError("backward root belongs to another tape");
  if (root.size() != 1)
    throw ContractError("backward root must be scalar, got " + shape_string(root.shape()));
  for (auto& n : nodes_) {
    n.grad_live = false;
    n.grad = Tensor();
  }
  Tensor* g = grad_target(root.id());
  if (!g) return;
  (*g)[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_live && n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
  }
}

Tensor Tape::gradient(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad_live) return n.grad;
  return Tensor::zeros_like(value(v.id()));
}

GradientSet Tape::parameter_gradients() const {
  if (!params_) throw ContractError("tape has no bound parameter set");
  GradientSet out = zero_gradients(*params_);
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
    const auto id = param_nodes_[i];
    if (id >= 0 && nodes_[id].grad_live) out[i] = nodes_[id].grad;
  }
  return out;
}

}  // namespace selfmon::num
