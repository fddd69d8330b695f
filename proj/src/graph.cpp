#include "eyedex/graph.hpp"

#include <atomic>
#include <memory>
#include <string>

namespace eyedex {
namespace {

std::uint64_t next_graph_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

}  // namespace

Graph::Graph() : id_(next_graph_id()) {}

Var Graph::leaf(Tensor value) {
  const bool rg = value.requires_grad();
  return leaf(std::move(value), rg);
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  if (!value.defined()) {
    throw GraphError("cannot record an empty tensor");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {id_, nodes_.size() - 1};
}

Var Graph::record(std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  bool rg = false;
  for (const Var& in : inputs) {
    rg = rg || node(in).requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.requires_grad = rg && static_cast<bool>(backward);
  if (n.requires_grad) {
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {id_, nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph_id != id_ || v.index >= nodes_.size()) {
    throw GraphError("variable does not belong to this graph (backward before forward?)");
  }
  return nodes_[v.index];
}

Graph::Node& Graph::node(Var v) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(v));
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }
const Tensor& Graph::grad(Var v) const { return node(v).grad; }

void Graph::backward(Var root) {
  if (nodes_.empty()) {
    throw GraphError("backward called before any forward operation was recorded");
  }
  Node& r = node(root);
  if (r.value.numel() != 1) {
    throw GraphError("backward seed must be a scalar, got shape " + to_string(r.value.shape()));
  }
  if (!r.requires_grad) {
    throw GraphError("backward seed does not depend on any tensor that requires a gradient");
  }
  for (Node& n : nodes_) {
    n.grad = Tensor{};
  }
  r.grad = Tensor::full(r.value.shape(), 1.0, r.value.dtype());

  for (std::size_t i = root.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad.defined() || !n.backward) {
      continue;
    }
    std::vector<bool> needs(n.inputs.size());
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      needs[k] = nodes_[n.inputs[k].index].requires_grad;
    }
    std::vector<Tensor> input_grads = n.backward(n.grad, needs);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!needs[k] || k >= input_grads.size() || !input_grads[k].defined()) {
        continue;
      }
      Node& target = nodes_[n.inputs[k].index];
      if (input_grads[k].shape() != target.value.shape()) {
        throw GraphError("gradient shape " + to_string(input_grads[k].shape()) +
                         " does not match value shape " + to_string(target.value.shape()));
      }
      if (target.grad.defined()) {
        ops::accumulate(target.grad, input_grads[k]);
      } else {
        target.grad = std::move(input_grads[k]);
      }
    }
  }
}

Var Graph::conv2d(Var input, Var weight, Var bias, const ConvSpec& spec) {
  const Tensor x = value(input);
  const Tensor w = value(weight);
  Tensor y = ops::conv2d(x, w, value(bias), spec);
  return record({input, weight, bias}, std::move(y),
                [x, w, spec](const Tensor& gy, const std::vector<bool>& needs) {
                  auto g = ops::conv2d_backward(x, w, gy, spec, needs[0], needs[1] || needs[2]);
                  return std::vector<Tensor>{g.input, g.weight, g.bias};
                });
}

Var Graph::maxpool2d(Var input) {
  const Shape in_shape = value(input).shape();
  auto result = ops::maxpool2d(value(input));
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(result.argmax));
  return record({input}, std::move(result.output),
                [in_shape, argmax](const Tensor& gy, const std::vector<bool>&) {
                  return std::vector<Tensor>{ops::maxpool2d_backward(in_shape, *argmax, gy)};
                });
}

Var Graph::global_avg_pool(Var input) {
  const Shape in_shape = value(input).shape();
  return record({input}, ops::global_avg_pool(value(input)),
                [in_shape](const Tensor& gy, const std::vector<bool>&) {
                  return std::vector<Tensor>{ops::global_avg_pool_backward(in_shape, gy)};
                });
}

Var Graph::dense(Var input, Var weight, Var bias) {
  const Tensor x = value(input);
  const Tensor w = value(weight);
  Tensor y = ops::dense(x, w, value(bias));
  return record({input, weight, bias}, std::move(y),
                [x, w](const Tensor& gy, const std::vector<bool>& needs) {
                  auto g = ops::dense_backward(x, w, gy, needs[0], needs[1] || needs[2]);
                  return std::vector<Tensor>{g.input, g.weight, g.bias};
                });
}

Var Graph::relu(Var input) {
  Tensor y = ops::relu(value(input));
  const Tensor out = y;
  return record({input}, std::move(y), [out](const Tensor& gy, const std::vector<bool>&) {
    return std::vector<Tensor>{ops::relu_backward(out, gy)};
  });
}

Var Graph::softmax(Var input) {
  Tensor y = ops::softmax(value(input));
  const Tensor out = y;
  return record({input}, std::move(y), [out](const Tensor& gy, const std::vector<bool>&) {
    return std::vector<Tensor>{ops::softmax_backward(out, gy)};
  });
}

Var Graph::batchnorm(Var input, Var gamma, Var beta, ops::BatchNormState& state, Mode mode,
                     bool update_running) {
  const Tensor g = value(gamma);
  auto result = std::make_shared<ops::BatchNormResult>(
      ops::batchnorm(value(input), g, value(beta), state, mode, update_running));
  Tensor y = result->output;
  return record({input, gamma, beta}, std::move(y),
                [result, g, mode](const Tensor& gy, const std::vector<bool>&) {
                  auto grads = ops::batchnorm_backward(*result, g, gy, mode);
                  return std::vector<Tensor>{grads.input, grads.gamma, grads.beta};
                });
}

Var Graph::dropout(Var input, double rate, Mode mode, Rng& rng) {
  auto result = ops::dropout(value(input), rate, mode, rng);
  const Tensor mask = result.mask;
  return record({input}, std::move(result.output),
                [mask](const Tensor& gy, const std::vector<bool>&) {
                  return std::vector<Tensor>{ops::dropout_backward(mask, gy)};
                });
}

Var Graph::add(Var a, Var b) {
  return record({a, b}, ops::add(value(a), value(b)),
                [](const Tensor& gy, const std::vector<bool>&) {
                  return std::vector<Tensor>{gy, gy};
                });
}

Var Graph::mul(Var a, Var b) {
  const Tensor av = value(a);
  const Tensor bv = value(b);
  return record({a, b}, ops::mul(av, bv),
                [av, bv](const Tensor& gy, const std::vector<bool>& needs) {
                  return std::vector<Tensor>{needs[0] ? ops::mul(gy, bv) : Tensor{},
                                             needs[1] ? ops::mul(gy, av) : Tensor{}};
                });
}

Var Graph::sum(Var input) {
  const Tensor& x = value(input);
  const Shape shape = x.shape();
  const DType dtype = x.dtype();
  return record({input}, Tensor::scalar(ops::sum(x), dtype),
                [shape, dtype](const Tensor& gy, const std::vector<bool>&) {
                  return std::vector<Tensor>{Tensor::full(shape, gy.item(), dtype)};
                });
}

Var Graph::pick(Var input, std::size_t flat_index) {
  const Tensor& x = value(input);
  if (flat_index >= x.numel()) {
    throw DimensionError("pick: index " + std::to_string(flat_index) + " out of range for shape " +
                         to_string(x.shape()));
  }
  const Shape shape = x.shape();
  const DType dtype = x.dtype();
  return record({input}, Tensor::scalar(x.at(flat_index), dtype),
                [shape, dtype, flat_index](const Tensor& gy, const std::vector<bool>&) {
                  Tensor g(shape, dtype);
                  visit_dtype(dtype, [&](auto tag) {
                    using T = decltype(tag);
                    g.mutable_data<T>()[flat_index] = static_cast<T>(gy.item());
                  });
                  return std::vector<Tensor>{g};
                });
}

}  // namespace eyedex
