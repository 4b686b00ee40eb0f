#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "capt/tensor.hpp"

namespace capt {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradient of the loss per registered parameter name.
using Gradients = std::map<std::string, Tensor>;

/// Lets a backward function reach the gradient buffers of its inputs.
class GradSink {
 public:
  // Returns nullptr when input k does not need a gradient.
  Tensor* grad(std::size_t k);

 private:
  friend class Tape;
  GradSink(Tape& tape, const std::vector<std::size_t>& inputs) : tape_(tape), inputs_(inputs) {}
  Tape& tape_;
  const std::vector<std::size_t>& inputs_;
};

using BackwardFn = std::function<void(const Tensor& out_grad, GradSink& sink)>;

/// Reverse-mode recording of executed operations.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order. A tape may be differentiated exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf that receives a gradient. `value` is referenced, not copied, and must
  // outlive the tape. Registering the same name twice returns the same Var.
  Var parameter(const std::string& name, const Tensor& value);

  // For op implementations. `inputs` must already live on this tape.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  Gradients backward(Var loss);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool differentiated() const { return differentiated_; }

 private:
  friend class GradSink;

  struct Node {
    const Tensor* external = nullptr;
    Tensor owned;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;
  };

  std::deque<Node> nodes_;
  std::vector<Tensor> grads_;
  std::unordered_map<std::string, std::size_t> params_;
  bool differentiated_ = false;
};

}  // namespace capt
