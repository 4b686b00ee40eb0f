#include "capt/tape.hpp"

#include "capt/error.hpp"

namespace capt {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Tensor* GradSink::grad(std::size_t k) {
  const std::size_t id = inputs_.at(k);
  if (!tape_.nodes_[id].requires_grad) return nullptr;
  Tensor& g = tape_.grads_[id];
  if (g.empty()) g = Tensor(tape_.value(id).shape());
  return &g;
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const std::string& name, const Tensor& value) {
  if (differentiated_) throw ContractError("tape already differentiated");
  if (auto it = params_.find(name); it != params_.end()) {
    if (nodes_[it->second].external != &value) {
      throw ContractError("parameter '" + name + "' registered twice with different storage");
    }
    return Var(this, it->second);
  }
  Node n;
  n.external = &value;
  n.requires_grad = true;
  n.param_name = name;
  nodes_.push_back(std::move(n));
  params_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (differentiated_) throw ContractError("tape already differentiated");
  Node n;
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractError("operation mixes Vars from different tapes");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) {
  if (differentiated_) throw ContractError("backward may be called only once per tape");
  if (&loss.tape() != this) throw ContractError("loss was not produced on this tape");
  if (!loss.value().is_scalar()) {
    throw ContractError("backward requires a scalar loss, got " + shape_string(loss.value().shape()));
  }
  differentiated_ = true;

  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id()] = Tensor::scalar(1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || grads_[id].empty()) continue;
    if (n.backward) {
      GradSink sink(*this, n.inputs);
      n.backward(grads_[id], sink);
    }
    if (n.param_name.empty()) grads_[id] = Tensor();
  }

  Gradients out;
  for (const auto& [name, id] : params_) {
    out.emplace(name, grads_[id].empty() ? Tensor(value(id).shape()) : std::move(grads_[id]));
  }
  grads_.clear();
  return out;
}

}  // namespace capt
