#include "nacl/tape.hpp"

#include <memory>

#include "nacl/error.hpp"

namespace nacl {

namespace {

void accumulate(std::optional<Tensor>& slot, Tensor g) {
  if (!slot) {
    slot = std::move(g);
    return;
  }
  if (slot->shape() != g.shape()) {
    throw ShapeError("backward: gradient shape " + shape_str(g.shape()) +
                     " does not match " + shape_str(slot->shape()));
  }
  auto& dst = slot->mutable_values();
  const auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

Tensor Tape::leaf(const Tensor& value) {
  Node n;
  n.op = "leaf";
  n.value = value.detach();
  nodes_.push_back(std::move(n));
  Tensor out = value.detach();
  out.tape_ = this;
  out.node_ = nodes_.size() - 1;
  return out;
}

const std::vector<std::size_t>& Tape::parents(std::size_t node) const {
  return nodes_.at(node).parents;
}

Tensor Tape::apply(std::string op, std::initializer_list<const Tensor*> inputs,
                   ForwardFn forward, VjpFn vjp) {
  return apply(std::move(op), std::vector<const Tensor*>(inputs), std::move(forward),
               std::move(vjp));
}

Tensor Tape::apply(std::string op, const std::vector<const Tensor*>& inputs,
                   ForwardFn forward, VjpFn vjp) {
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->tracked()) continue;
    if (tape && tape != in->tape()) {
      throw Error(op + ": operands recorded on different tapes");
    }
    tape = in->tape();
  }
  Tensor value = forward(inputs);
  if (!tape) return value;
  return tape->record(std::move(op), inputs, std::move(value), std::move(forward),
                      std::move(vjp));
}

Tensor Tape::record(std::string op, const std::vector<const Tensor*>& inputs,
                    Tensor value, ForwardFn forward, VjpFn vjp) {
  Node n;
  n.op = std::move(op);
  n.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    Input slot;
    if (in->tracked()) {
      slot.node = in->node();
      n.parents.push_back(in->node());
    } else {
      slot.constant = *in;
    }
    n.inputs.push_back(std::move(slot));
  }
  n.value = value.detach();
  n.forward = std::move(forward);
  n.vjp = std::move(vjp);
  nodes_.push_back(std::move(n));
  value.tape_ = this;
  value.node_ = nodes_.size() - 1;
  return value;
}

Gradients Tape::backward(const Tensor& root) const {
  if (!root.tracked()) {
    throw Error("backward: root is not recorded on a tape");
  }
  if (root.tape() != this) {
    throw Error("backward: root belongs to a different tape");
  }
  if (root.rank() != 0) {
    throw ShapeError("backward: root must be a scalar, got shape " + shape_str(root.shape()));
  }

  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  out.grads_[root.node()] = Tensor::scalar(1.0);

  std::vector<const Tensor*> in_values;
  // std::vector<bool> has no contiguous storage to hand out as a span.
  std::unique_ptr<bool[]> needs;
  std::size_t needs_capacity = 0;
  for (std::size_t k = root.node() + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    if (!out.grads_[k] || !n.vjp) continue;
    if (needs_capacity < n.inputs.size()) {
      needs_capacity = n.inputs.size();
      needs = std::make_unique<bool[]>(needs_capacity);
    }
    in_values.clear();
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const Input& in = n.inputs[i];
      in_values.push_back(in.node ? &nodes_[*in.node].value : &in.constant);
      needs[i] = in.node.has_value();
    }
    std::vector<std::optional<Tensor>> in_grads(n.inputs.size());
    n.vjp(in_values, n.value, *out.grads_[k],
          std::span<const bool>(needs.get(), n.inputs.size()), in_grads);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (!n.inputs[i].node || !in_grads[i]) continue;
      accumulate(out.grads_[*n.inputs[i].node], std::move(*in_grads[i]));
    }
  }
  return out;
}

std::vector<Tensor> Tape::replay() const {
  std::vector<Tensor> values;
  values.reserve(nodes_.size());
  std::vector<const Tensor*> in_values;
  for (const Node& n : nodes_) {
    if (!n.forward) {
      values.push_back(n.value);
      continue;
    }
    in_values.clear();
    for (const Input& in : n.inputs) {
      in_values.push_back(in.node ? &values[*in.node] : &in.constant);
    }
    values.push_back(n.forward(in_values).detach());
  }
  return values;
}

Tensor Gradients::grad(const Tensor& t) const {
  if (t.tracked() && t.tape() == tape_ && t.node() < grads_.size() && grads_[t.node()]) {
    return *grads_[t.node()];
  }
  return Tensor::zeros(t.shape());
}

bool Gradients::has(const Tensor& t) const {
  return t.tracked() && t.tape() == tape_ && t.node() < grads_.size() &&
         grads_[t.node()].has_value();
}

}  // namespace nacl
