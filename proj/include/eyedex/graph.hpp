#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "eyedex/ops.hpp"
#include "eyedex/tensor.hpp"

namespace eyedex {

/// Handle to a value recorded in a Graph.
struct Var {
  std::uint64_t graph_id = 0;
  std::size_t index = 0;
};

/// Tape for reverse-mode differentiation.
///
/// Every operation appends a node, so recording order is a topological
/// order and backward() walks it in exact reverse. A node requires a
/// gradient when any of its inputs does; leaves opt in through
/// Tensor::requires_grad or the `requires_grad` argument of leaf().
///
/// Gradients are kept for every node that requires one, so intermediate
/// activations (e.g. feature maps for Grad-CAM) can be queried after a
/// backward pass seeded from any scalar node.
class Graph {
 public:
  // Receives the upstream gradient and a per-input "needs gradient" mask;
  // returns one tensor per input (empty where not needed).
  using BackwardFn =
      std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

  Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Tensor value);
  Var leaf(Tensor value, bool requires_grad);

  // Generic node; `backward` may be empty for non-differentiable outputs.
  Var record(std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  // Gradient accumulated by the last backward(); empty when none reached v.
  const Tensor& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and propagates. Gradients from an earlier
  // backward() are cleared first.
  void backward(Var root);

  Var conv2d(Var input, Var weight, Var bias, const ConvSpec& spec);
  Var maxpool2d(Var input);
  Var global_avg_pool(Var input);
  Var dense(Var input, Var weight, Var bias);
  Var relu(Var input);
  Var softmax(Var input);
  // Running statistics in `state` are updated in train mode when
  // `update_running` is set.
  Var batchnorm(Var input, Var gamma, Var beta, ops::BatchNormState& state, Mode mode,
                bool update_running = true);
  Var dropout(Var input, double rate, Mode mode, Rng& rng);

  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var sum(Var input);
  // Scalar element at `flat_index`.
  Var pick(Var input, std::size_t flat_index);

 private:
  struct Node {
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor grad;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::uint64_t id_;
  std::vector<Node> nodes_;
};

}  // namespace eyedex
