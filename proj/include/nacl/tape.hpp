#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nacl/tensor.hpp"

namespace nacl {

// Recomputes an operation's output from its input values.
using ForwardFn = std::function<Tensor(std::span<const Tensor* const> inputs)>;

// Vector-Jacobian product. Fills input_grads[i] for every i with needs[i] set;
// entries left unset are treated as zero.
using VjpFn = std::function<void(std::span<const Tensor* const> inputs,
                                 const Tensor& output, const Tensor& output_grad,
                                 std::span<const bool> needs,
                                 std::span<std::optional<Tensor>> input_grads)>;

class Gradients;

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so a
// node's parents always precede it. A tape is not thread-safe; use one tape
// per thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a differentiable leaf and returns its tracked handle.
  Tensor leaf(const Tensor& value);

  // Evaluates `forward` on the inputs and, when any input is tracked, records
  // the result. Untracked inputs are stored as constants for replay.
  static Tensor apply(std::string op, std::initializer_list<const Tensor*> inputs,
                      ForwardFn forward, VjpFn vjp);
  static Tensor apply(std::string op, const std::vector<const Tensor*>& inputs,
                      ForwardFn forward, VjpFn vjp);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op(std::size_t node) const { return nodes_.at(node).op; }
  const std::vector<std::size_t>& parents(std::size_t node) const;
  const Tensor& value(std::size_t node) const { return nodes_.at(node).value; }

  // Gradients of a tracked rank-0 root with respect to every node.
  Gradients backward(const Tensor& root) const;

  // Recomputes every non-leaf node from the stored leaves and constants.
  std::vector<Tensor> replay() const;

 private:
  struct Input {
    std::optional<std::size_t> node;
    Tensor constant;
  };
  struct Node {
    std::string op;
    std::vector<Input> inputs;
    std::vector<std::size_t> parents;
    Tensor value;
    ForwardFn forward;
    VjpFn vjp;
  };

  Tensor record(std::string op, const std::vector<const Tensor*>& inputs,
                Tensor value, ForwardFn forward, VjpFn vjp);

  std::vector<Node> nodes_;
};

// Result of Tape::backward. Lookups for tensors that the root does not depend
// on yield zeros of the tensor's shape.
class Gradients {
 public:
  Tensor grad(const Tensor& t) const;
  bool has(const Tensor& t) const;
  // Gradient stored for a tape node, if the root depends on it.
  const std::optional<Tensor>& node_grad(std::size_t node) const { return grads_.at(node); }

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::optional<Tensor>> grads_;
};

}  // namespace nacl
