#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/tensor.hpp"

namespace xview {

// A trainable tensor with its gradient and Adam moments; all four share a shape.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;

  explicit Parameter(Tensor v)
      : value(std::move(v)), grad(value.shape()), adam_m(value.shape()), adam_v(value.shape()) {}
};

// Named parameters of one model component plus the optimizer step counter.
// std::map keeps iteration order (and thus every derived file) deterministic.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor value) {
    auto [it, inserted] = params_.try_emplace(name, std::move(value));
    if (!inserted) throw StateError("parameter '" + name + "' already exists");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Parameter& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("unknown parameter '" + name + "'");
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(0.0);
  }

  // Drops optimizer moments and the step counter; values are kept.
  void reset_optimizer() {
    for (auto& [_, p] : params_) {
      p.adam_m.fill(0.0);
      p.adam_v.fill(0.0);
    }
    step_count_ = 0;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.begin(); }
  auto end() const noexcept { return params_.end(); }

  std::uint64_t step_count() const noexcept { return step_count_; }
  void increment_step() noexcept { ++step_count_; }

 private:
  std::map<std::string, Parameter> params_;
  std::uint64_t step_count_ = 0;
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Tape;

// Receives d(loss)/d(output) and accumulates into the inputs' gradient slots.
using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

// Records a forward computation as a flat list of nodes (already in
// topological order) and replays it backwards.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Input that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  // Leaf whose gradient can be read back with grad() after backward().
  Var variable(Tensor value) { return push(std::move(value), true, nullptr); }

  // Leaf bound to a parameter: backward() adds into param.grad.
  Var parameter(Parameter& param) {
    Var v = push(param.value, true, nullptr);
    nodes_[v.id].param = &param;
    return v;
  }

  // Records an op. The node needs a gradient when any input does.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || requires_grad(in);
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || requires_grad(in);
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient slot for an input during backward; nullptr if it needs no gradient.
  Tensor* grad_slot(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (!n.grad) n.grad.emplace(n.value.shape(), 0.0);
    return &*n.grad;
  }

  // Gradient of the last backward() w.r.t. a variable/parameter leaf.
  const Tensor& grad(Var v) const {
    const Node& n = node(v);
    if (!n.grad) throw StateError("no gradient recorded for node " + std::to_string(v.id));
    return *n.grad;
  }

  // Reverse pass from a scalar loss. Parameter gradients are accumulated, not
  // overwritten; node-local gradients are recomputed from scratch each call.
  void backward(Var loss, double seed_grad = 1.0) {
    if (nodes_.empty()) throw StateError("reverse pass requested before any forward pass");
    if (loss.id >= nodes_.size()) throw StateError("reverse pass on a node that is not on this tape");
    if (nodes_[loss.id].value.size() != 1) {
      throw StateError("reverse pass requires a scalar loss, got shape " +
                       shape_str(nodes_[loss.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad.emplace(Shape{1}, seed_grad);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.grad) continue;
      // Callbacks only touch slots of earlier nodes, so *n.grad stays valid.
      if (n.backward) n.backward(*this, *n.grad);
      if (n.param) n.param->grad += *n.grad;
    }
  }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
    std::optional<Tensor> grad;
  };

  Var push(Tensor value, bool needs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw StateError("invalid tape node " + std::to_string(v.id));
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw StateError("invalid tape node " + std::to_string(v.id));
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

}  // namespace xview
