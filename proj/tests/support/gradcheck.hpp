#pragma once

// Finite-difference checks for graph ops: the objective is sum(op(x) * R)
// with a fixed random R, differentiated analytically through Graph and
// numerically by central differences on re-run forwards.

#include <functional>
#include <vector>

#include "eyedex/graph.hpp"
#include "oracles.hpp"

namespace oracle {

using OpBuilder = std::function<eyedex::Var(eyedex::Graph&, const std::vector<eyedex::Var>&)>;

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline GradCheck check_op_gradient(const OpBuilder& build, const std::vector<Tensor>& inputs,
                                   std::uint64_t seed = 7, double h = 1e-5) {
  using eyedex::Graph;
  using eyedex::Var;
  Tensor weights;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& t : inputs) {
      vars.push_back(g.leaf(t, false));
    }
    const Tensor& out = g.value(build(g, vars));
    eyedex::Rng rng(seed);
    weights = random_tensor(out.shape(), rng, -1.0, 1.0, out.dtype());
  }
  auto objective = [&](const std::vector<Tensor>& values, bool with_grad, Graph& g,
                       std::vector<Var>& vars) {
    vars.clear();
    for (const auto& t : values) {
      vars.push_back(g.leaf(t, with_grad));
    }
    const Var out = build(g, vars);
    const Var r = g.leaf(weights, false);
    return g.sum(g.mul(out, r));
  };

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    const Var loss = objective(inputs, true, g, vars);
    g.backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor& gr = g.grad(vars[i]);
      analytic.push_back(gr.defined() ? gr.to_vector()
                                      : std::vector<double>(inputs[i].numel(), 0.0));
    }
  }

  GradCheck result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const std::vector<double>& flat) {
      std::vector<Tensor> values = inputs;
      values[i] = Tensor::from_values(inputs[i].shape(), flat, inputs[i].dtype());
      Graph g;
      std::vector<Var> vars;
      return g.value(objective(values, false, g, vars)).item();
    };
    const auto numeric = numeric_gradient(f, inputs[i].to_vector(), h);
    result.max_rel_error =
        std::max(result.max_rel_error, max_relative_error(analytic[i], numeric));
    result.checked += numeric.size();
  }
  return result;
}

// Uniform values with |v| in [lo, hi] and random sign, keeping inputs away
// from the ReLU kink.
inline Tensor away_from_zero(const Shape& shape, eyedex::Rng& rng, double lo = 0.1,
                             double hi = 1.0) {
  std::vector<double> v(eyedex::numel(shape));
  for (double& x : v) {
    x = eyedex::uniform(rng, lo, hi) * (eyedex::uniform01(rng) < 0.5 ? -1.0 : 1.0);
  }
  return Tensor::from_values(shape, v, DType::f64);
}

}  // namespace oracle
