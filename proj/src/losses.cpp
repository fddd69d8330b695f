#include "eyedex/losses.hpp"

#include <algorithm>
#include <cmath>

namespace eyedex {
namespace {

struct Rows {
  std::size_t batch;
  std::size_t classes;
};

Rows check_inputs(const Tensor& probs, const Tensor& onehot, const Tensor* weights) {
  if (probs.rank() != 2) {
    throw DimensionError("loss expects probs [B,K], got " + to_string(probs.shape()));
  }
  if (onehot.shape() != probs.shape()) {
    throw DimensionError("targets " + to_string(onehot.shape()) + " do not match probs " +
                         to_string(probs.shape()));
  }
  if (weights != nullptr && (weights->rank() != 1 || weights->dim(0) != probs.dim(0))) {
    throw DimensionError("sample weights must be [B] with B=" + std::to_string(probs.dim(0)) +
                         ", got " + to_string(weights->shape()));
  }
  return {probs.dim(0), probs.dim(1)};
}

std::vector<std::size_t> true_classes(const Tensor& onehot, Rows r) {
  const auto y = onehot.to_vector();
  std::vector<std::size_t> out(r.batch);
  for (std::size_t b = 0; b < r.batch; ++b) {
    const auto row = y.begin() + static_cast<std::ptrdiff_t>(b * r.classes);
    out[b] = static_cast<std::size_t>(
        std::max_element(row, row + static_cast<std::ptrdiff_t>(r.classes)) - row);
  }
  return out;
}

std::vector<double> sample_weights(const Tensor& weights) {
  auto w = weights.to_vector();
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError("sample weights must be finite and non-negative");
    }
    total += v;
  }
  if (total == 0.0) {
    throw ConfigError("sample weights are all zero");
  }
  return w;
}

double weighted_mean(const std::vector<double>& losses, const std::vector<double>& w) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t b = 0; b < losses.size(); ++b) {
    num += w[b] * losses[b];
    den += w[b];
  }
  return num / den;
}

double true_prob(const Tensor& probs, Rows r, std::size_t b, std::size_t k) {
  return probs.at(b * r.classes + k);
}

// d loss_b / d p_t for the focal form; gamma = 0, alpha = 1 is plain CE.
double loss_derivative(double p, double gamma, double alpha) {
  if (p < kProbFloor) {
    return 0.0;
  }
  const double q = 1.0 - p;
  double d = -std::pow(q, gamma) / p;
  if (gamma != 0.0 && q > 0.0) {
    d += gamma * std::pow(q, gamma - 1.0) * std::log(p);
  }
  return alpha * d;
}

Var record_loss(Graph& graph, Var probs, const Tensor& onehot, const Tensor& weights,
                double gamma, double alpha, bool focal) {
  const Tensor& p = graph.value(probs);
  const Rows r = check_inputs(p, onehot, &weights);
  const auto labels = true_classes(onehot, r);
  const auto w = sample_weights(weights);
  const double value = focal ? focal_loss(p, onehot, gamma, alpha, weights)
                             : categorical_crossentropy(p, onehot, weights);
  double w_total = 0.0;
  for (double v : w) {
    w_total += v;
  }
  std::vector<double> dp(r.batch);
  for (std::size_t b = 0; b < r.batch; ++b) {
    const double pt = true_prob(p, r, b, labels[b]);
    dp[b] = (w[b] / w_total) *
            (focal ? loss_derivative(pt, gamma, alpha) : loss_derivative(pt, 0.0, 1.0));
  }
  const Shape shape = p.shape();
  const DType dtype = p.dtype();
  return graph.record({probs}, Tensor::scalar(value, dtype),
                      [shape, dtype, labels, dp, r](const Tensor& gy, const std::vector<bool>&) {
                        Tensor g(shape, dtype);
                        const double seed = gy.item();
                        visit_dtype(dtype, [&](auto tag) {
                          using T = decltype(tag);
                          auto out = g.mutable_data<T>();
                          for (std::size_t b = 0; b < r.batch; ++b) {
                            out[b * r.classes + labels[b]] = static_cast<T>(seed * dp[b]);
                          }
                        });
                        return std::vector<Tensor>{g};
                      });
}

bool l2_weight(const Model& model, const std::string& name) {
  if (!name.ends_with(".weight")) {
    return false;
  }
  const auto* dn = std::get_if<DenseLayer>(&model.layers().at(model.param_layer(name)));
  return dn != nullptr && dn->l2;
}

}  // namespace

std::string to_string(LossKind kind) { return kind == LossKind::ce ? "ce" : "focal"; }

LossKind parse_loss_kind(const std::string& name) {
  if (name == "ce") {
    return LossKind::ce;
  }
  if (name == "focal") {
    return LossKind::focal;
  }
  throw ConfigError("unknown loss '" + name + "' (expected ce or focal)");
}

std::vector<double> per_sample_losses(const Tensor& probs, const Tensor& onehot,
                                      const LossSpec& spec) {
  const Rows r = check_inputs(probs, onehot, nullptr);
  if (spec.kind == LossKind::focal && !(spec.gamma >= 0.0)) {
    throw ConfigError("focal gamma must be >= 0");
  }
  const auto labels = true_classes(onehot, r);
  std::vector<double> out(r.batch);
  for (std::size_t b = 0; b < r.batch; ++b) {
    const double pt = true_prob(probs, r, b, labels[b]);
    const double nll = -std::log(std::max(pt, kProbFloor));
    out[b] = spec.kind == LossKind::ce ? nll : spec.alpha * std::pow(1.0 - pt, spec.gamma) * nll;
  }
  return out;
}

double categorical_crossentropy(const Tensor& probs, const Tensor& onehot, const Tensor& weights) {
  check_inputs(probs, onehot, &weights);
  return weighted_mean(per_sample_losses(probs, onehot, {LossKind::ce, 0.0, 1.0}),
                       sample_weights(weights));
}

double focal_loss(const Tensor& probs, const Tensor& onehot, double gamma, double alpha,
                  const Tensor& weights) {
  check_inputs(probs, onehot, &weights);
  return weighted_mean(per_sample_losses(probs, onehot, {LossKind::focal, gamma, alpha}),
                       sample_weights(weights));
}

Var categorical_crossentropy(Graph& graph, Var probs, const Tensor& onehot,
                             const Tensor& weights) {
  return record_loss(graph, probs, onehot, weights, 0.0, 1.0, false);
}

Var focal_loss(Graph& graph, Var probs, const Tensor& onehot, double gamma, double alpha,
               const Tensor& weights) {
  if (!(gamma >= 0.0)) {
    throw ConfigError("focal gamma must be >= 0");
  }
  return record_loss(graph, probs, onehot, weights, gamma, alpha, true);
}

Var data_loss(Graph& graph, Var probs, const Tensor& onehot, const Tensor& weights,
              const LossSpec& spec) {
  if (spec.kind == LossKind::ce) {
    return categorical_crossentropy(graph, probs, onehot, weights);
  }
  return focal_loss(graph, probs, onehot, spec.gamma, spec.alpha, weights);
}

double l2_penalty(const Model& model, double lambda) {
  if (!(lambda >= 0.0)) {
    throw ConfigError("l2 lambda must be >= 0");
  }
  double total = 0.0;
  for (const auto& name : model.param_names()) {
    if (!l2_weight(model, name)) {
      continue;
    }
    for (double v : model.param(name).to_vector()) {
      total += v * v;
    }
  }
  return lambda * total;
}

Var l2_penalty(Graph& graph, const ForwardPass& pass, const Model& model, double lambda) {
  if (!(lambda >= 0.0)) {
    throw ConfigError("l2 lambda must be >= 0");
  }
  std::vector<Var> inputs;
  double total = 0.0;
  for (const auto& [name, var] : pass.params) {
    if (!l2_weight(model, name)) {
      continue;
    }
    inputs.push_back(var);
    for (double v : graph.value(var).to_vector()) {
      total += v * v;
    }
  }
  if (inputs.empty()) {
    throw ConfigError("model has no L2-regularized weights");
  }
  std::vector<Tensor> values;
  for (Var v : inputs) {
    values.push_back(graph.value(v));
  }
  return graph.record(inputs, Tensor::scalar(lambda * total, model.dtype()),
                      [values, lambda](const Tensor& gy, const std::vector<bool>& needs) {
                        std::vector<Tensor> grads(values.size());
                        for (std::size_t i = 0; i < values.size(); ++i) {
                          if (needs[i]) {
                            grads[i] = ops::scale(values[i], 2.0 * lambda * gy.item());
                          }
                        }
                        return grads;
                      });
}

}  // namespace eyedex
