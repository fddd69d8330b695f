#pragma once

#include <string>
#include <vector>

#include "eyedex/graph.hpp"
#include "eyedex/model.hpp"

namespace eyedex {

enum class LossKind { ce, focal };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct LossSpec {
  LossKind kind = LossKind::focal;
  double gamma = 2.0;
  double alpha = 1.0;
};

// Probabilities below this are clamped before taking the log.
inline constexpr double kProbFloor = 1e-12;

// Unreduced per-sample losses for probs [B,K] against one-hot targets [B,K].
std::vector<double> per_sample_losses(const Tensor& probs, const Tensor& onehot,
                                      const LossSpec& spec);

// Weighted mean (sum_b w_b * loss_b) / (sum_b w_b).
double categorical_crossentropy(const Tensor& probs, const Tensor& onehot, const Tensor& weights);
double focal_loss(const Tensor& probs, const Tensor& onehot, double gamma, double alpha,
                  const Tensor& weights);

// Differentiable versions recorded on `graph`; the result is a scalar node.
Var categorical_crossentropy(Graph& graph, Var probs, const Tensor& onehot,
                             const Tensor& weights);
Var focal_loss(Graph& graph, Var probs, const Tensor& onehot, double gamma, double alpha,
               const Tensor& weights);
Var data_loss(Graph& graph, Var probs, const Tensor& onehot, const Tensor& weights,
              const LossSpec& spec);

// lambda * sum of squared entries of every L2-flagged dense weight matrix.
double l2_penalty(const Model& model, double lambda);
// Same penalty over the parameter leaves of a recorded forward pass.
Var l2_penalty(Graph& graph, const ForwardPass& pass, const Model& model, double lambda);

}  // namespace eyedex
