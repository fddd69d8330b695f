#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "eyedex/graph.hpp"
#include "eyedex/ops.hpp"
#include "eyedex/tensor.hpp"

namespace eyedex {

enum class Variant { vgg16, vgg19, vgg_nano };

std::string to_string(Variant variant);
Variant parse_variant(const std::string& name);

/// Classification head appended to the convolutional base.
struct HeadConfig {
  std::size_t dense_units = 256;
  double dropout_rate = 0.3;
  double l2_lambda = 1e-4;

  void validate() const;
};

// Conv layers carry a fused ReLU, so a conv layer's output is the rectified
// feature map.
struct ConvLayer {
  ConvSpec spec;
};
struct MaxPoolLayer {};
struct GlobalAvgPoolLayer {};
struct BatchNormLayer {
  std::size_t channels = 0;
  double momentum = 0.01;
  double epsilon = 1e-3;
};
struct DenseLayer {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  bool relu = false;
  bool l2 = false;  // weight matrix contributes to the L2 penalty
};
struct DropoutLayer {
  double rate = 0.0;
};
struct SoftmaxLayer {};

using Layer = std::variant<ConvLayer, MaxPoolLayer, GlobalAvgPoolLayer, BatchNormLayer, DenseLayer,
                           DropoutLayer, SoftmaxLayer>;

std::string kind_name(const Layer& layer);
bool is_parameterized(const Layer& layer);

struct ModelSpec {
  Variant variant = Variant::vgg_nano;
  std::size_t num_classes = 2;
  std::size_t input_size = 32;
  HeadConfig head;
  std::vector<std::string> class_names;
};

struct ForwardOptions {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // required for dropout in train mode
  bool param_grads = false;
  bool input_requires_grad = false;
  // Layer name (e.g. "3.conv") whose output is returned in ForwardPass::captured.
  std::optional<std::string> capture_layer;
  // Re-roots the captured activation as a gradient-tracking leaf so that
  // backward() yields gradients with respect to it.
  bool capture_requires_grad = false;
};

struct ForwardPass {
  Var input;
  Var logits;  // pre-softmax class scores
  Var probs;
  std::optional<Var> captured;
  // Parameter leaves recorded in the graph, in layer order.
  std::vector<std::pair<std::string, Var>> params;
};

/// Ordered layer stack with named parameters and per-layer trainability.
///
/// Parameter names follow "<layer index>.<kind>.<role>", e.g.
/// "0.conv.weight" or "19.batchnorm.running_var".
class Model {
 public:
  Model(ModelSpec spec, std::vector<Layer> layers, DType dtype);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<Layer>& layers() const { return layers_; }
  DType dtype() const { return dtype_; }
  std::string layer_name(std::size_t index) const;
  std::size_t num_classes() const { return spec_.num_classes; }
  const std::vector<std::string>& class_names() const { return spec_.class_names; }
  void set_class_names(std::vector<std::string> names);

  const std::vector<std::string>& param_names() const { return param_order_; }
  const Tensor& param(const std::string& name) const;
  void set_param(const std::string& name, Tensor value);
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  // Index of the layer owning a parameter name.
  std::size_t param_layer(const std::string& name) const;

  bool layer_trainable(std::size_t index) const { return trainable_.at(index); }
  void set_layer_trainable(std::size_t index, bool trainable);
  std::vector<std::size_t> parameterized_layers() const;
  // Names of parameters that receive optimizer updates (excludes running stats).
  std::vector<std::string> trainable_params() const;
  std::size_t count_params(bool conv_only = false) const;

  const std::string& gradcam_layer() const { return gradcam_layer_; }
  void set_gradcam_layer(const std::string& name);

  // Converts every parameter to `dtype`.
  Model astype(DType dtype) const;

  // Records a forward pass. In train mode trainable batch-norm layers update
  // their running statistics; frozen batch-norm layers always run on running
  // statistics.
  ForwardPass forward(Graph& graph, const Tensor& images, const ForwardOptions& options = {});

  // Eval-mode softmax output [N, K].
  Tensor predict(const Tensor& images) const;
  // Eval-mode pre-softmax scores [N, K].
  Tensor logits(const Tensor& images) const;

 private:
  void register_params();

  ModelSpec spec_;
  std::vector<Layer> layers_;
  DType dtype_;
  std::vector<bool> trainable_;
  std::map<std::string, Tensor> params_;
  std::vector<std::string> param_order_;
  std::string gradcam_layer_;
};

// He-uniform conv/dense weights (limit sqrt(6 / fan_in)), zero biases,
// gamma = 1, beta = 0, running mean 0, running variance 1. Head order:
// GAP -> BatchNorm -> Dense(units, relu, L2) -> Dropout -> Dense(K, L2) -> softmax.
Model build_vgg(Variant variant, std::size_t num_classes, const HeadConfig& head,
                std::size_t input_size, DType dtype = DType::f32, std::uint64_t seed = 0);

// Conv channel plan of the convolutional base: one entry per block, listing
// the filter count of each conv layer; a 2x2 max-pool closes every block.
std::vector<std::vector<std::size_t>> conv_blocks(Variant variant);

/// Marks exactly the last `last_n` parameterized layers (conv, batchnorm,
/// dense; counted from the output) trainable and freezes the rest. Values
/// above the parameterized-layer count are clamped with a warning. Returns
/// the names of the unfrozen layers, input to output.
std::vector<std::string> set_trainable(Model& model, std::size_t last_n);

struct GateVerdict {
  bool healthy = false;
  std::size_t class_index = 0;
  std::string class_name;
  double confidence = 0.0;
};

// Healthy-vs-disease decision on one softmax row. Ties resolve to the lowest
// class index. Requires exactly one class named "Healthy".
GateVerdict anomaly_gate(const std::vector<double>& probs,
                         const std::vector<std::string>& class_names);

}  // namespace eyedex
