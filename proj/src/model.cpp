#include "eyedex/model.hpp"

#include <algorithm>
#include <cmath>

#include "eyedex/log.hpp"

namespace eyedex {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::vgg16:
      return "vgg16";
    case Variant::vgg19:
      return "vgg19";
    case Variant::vgg_nano:
      return "vgg_nano";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "vgg16") {
    return Variant::vgg16;
  }
  if (name == "vgg19") {
    return Variant::vgg19;
  }
  if (name == "vgg_nano") {
    return Variant::vgg_nano;
  }
  throw ConfigError("unknown model variant '" + name + "' (expected vgg16, vgg19, vgg_nano)");
}

void HeadConfig::validate() const {
  if (dense_units == 0) {
    throw ConfigError("head dense_units must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("head dropout_rate must be in [0, 1)");
  }
  if (!(l2_lambda >= 0.0)) {
    throw ConfigError("head l2_lambda must be >= 0");
  }
}

std::string kind_name(const Layer& layer) {
  struct {
    std::string operator()(const ConvLayer&) const { return "conv"; }
    std::string operator()(const MaxPoolLayer&) const { return "maxpool"; }
    std::string operator()(const GlobalAvgPoolLayer&) const { return "global_avg_pool"; }
    std::string operator()(const BatchNormLayer&) const { return "batchnorm"; }
    std::string operator()(const DenseLayer&) const { return "dense"; }
    std::string operator()(const DropoutLayer&) const { return "dropout"; }
    std::string operator()(const SoftmaxLayer&) const { return "softmax"; }
  } visitor;
  return std::visit(visitor, layer);
}

bool is_parameterized(const Layer& layer) {
  return std::holds_alternative<ConvLayer>(layer) || std::holds_alternative<BatchNormLayer>(layer) ||
         std::holds_alternative<DenseLayer>(layer);
}

Model::Model(ModelSpec spec, std::vector<Layer> layers, DType dtype)
    : spec_(std::move(spec)), layers_(std::move(layers)), dtype_(dtype) {
  if (layers_.empty() || !std::holds_alternative<SoftmaxLayer>(layers_.back())) {
    throw ConfigError("model must end with a softmax layer");
  }
  if (spec_.class_names.empty()) {
    for (std::size_t k = 0; k < spec_.num_classes; ++k) {
      spec_.class_names.push_back("class_" + std::to_string(k));
    }
  }
  if (spec_.class_names.size() != spec_.num_classes) {
    throw ConfigError("expected " + std::to_string(spec_.num_classes) + " class names, got " +
                      std::to_string(spec_.class_names.size()));
  }
  trainable_.assign(layers_.size(), true);
  register_params();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (std::holds_alternative<ConvLayer>(layers_[i])) {
      gradcam_layer_ = layer_name(i);
      break;
    }
  }
}

void Model::register_params() {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = layer_name(i) + ".";
    auto add = [&](const std::string& role, Shape shape, double fill) {
      params_[prefix + role] = Tensor::full(std::move(shape), fill, dtype_);
      param_order_.push_back(prefix + role);
    };
    if (const auto* conv = std::get_if<ConvLayer>(&layers_[i])) {
      const ConvSpec& s = conv->spec;
      add("weight", {s.out_channels, s.in_channels, s.kernel_h, s.kernel_w}, 0.0);
      add("bias", {s.out_channels}, 0.0);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layers_[i])) {
      add("gamma", {bn->channels}, 1.0);
      add("beta", {bn->channels}, 0.0);
      add("running_mean", {bn->channels}, 0.0);
      add("running_var", {bn->channels}, 1.0);
    } else if (const auto* dn = std::get_if<DenseLayer>(&layers_[i])) {
      add("weight", {dn->in_features, dn->out_features}, 0.0);
      add("bias", {dn->out_features}, 0.0);
    }
  }
}

std::string Model::layer_name(std::size_t index) const {
  return std::to_string(index) + "." + kind_name(layers_.at(index));
}

void Model::set_class_names(std::vector<std::string> names) {
  if (names.size() != spec_.num_classes) {
    throw ConfigError("expected " + std::to_string(spec_.num_classes) + " class names, got " +
                      std::to_string(names.size()));
  }
  spec_.class_names = std::move(names);
}

const Tensor& Model::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw ConfigError("model has no parameter '" + name + "'");
  }
  return it->second;
}

void Model::set_param(const std::string& name, Tensor value) {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw ConfigError("model has no parameter '" + name + "'");
  }
  if (value.shape() != it->second.shape()) {
    throw DimensionError("parameter '" + name + "' has shape " + to_string(it->second.shape()) +
                         ", got " + to_string(value.shape()));
  }
  it->second = value.astype(dtype_).set_requires_grad(false);
}

std::size_t Model::param_layer(const std::string& name) const {
  return static_cast<std::size_t>(std::stoul(name.substr(0, name.find('.'))));
}

void Model::set_layer_trainable(std::size_t index, bool trainable) {
  trainable_.at(index) = trainable;
}

std::vector<std::size_t> Model::parameterized_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (is_parameterized(layers_[i])) {
      out.push_back(i);
    }
  }
  return out;
}

std::vector<std::string> Model::trainable_params() const {
  std::vector<std::string> out;
  for (const auto& name : param_order_) {
    if (!trainable_[param_layer(name)]) {
      continue;
    }
    if (name.ends_with(".running_mean") || name.ends_with(".running_var")) {
      continue;
    }
    out.push_back(name);
  }
  return out;
}

std::size_t Model::count_params(bool conv_only) const {
  std::size_t total = 0;
  for (const auto& name : param_order_) {
    if (conv_only && !std::holds_alternative<ConvLayer>(layers_[param_layer(name)])) {
      continue;
    }
    total += params_.at(name).numel();
  }
  return total;
}

void Model::set_gradcam_layer(const std::string& name) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layer_name(i) == name) {
      if (!std::holds_alternative<ConvLayer>(layers_[i])) {
        throw ConfigError("Grad-CAM layer '" + name + "' is not a convolutional layer");
      }
      gradcam_layer_ = name;
      return;
    }
  }
  throw ConfigError("model has no layer named '" + name + "'");
}

Model Model::astype(DType dtype) const {
  Model out = *this;
  out.dtype_ = dtype;
  for (auto& [name, value] : out.params_) {
    value = value.astype(dtype);
  }
  return out;
}

ForwardPass Model::forward(Graph& graph, const Tensor& images, const ForwardOptions& options) {
  if (images.rank() != 4 || images.dim(1) != 3) {
    throw DimensionError("model input must be [N,3,H,W], got " + to_string(images.shape()));
  }
  if (images.dtype() != dtype_) {
    throw ConfigError("model is " + to_string(dtype_) + " but input is " +
                      to_string(images.dtype()));
  }
  ForwardPass pass;
  pass.input = graph.leaf(images, options.input_requires_grad);
  Var x = pass.input;

  auto param_var = [&](std::size_t layer, const std::string& role) {
    const std::string name = layer_name(layer) + "." + role;
    Var v = graph.leaf(params_.at(name), options.param_grads && trainable_[layer]);
    pass.params.emplace_back(name, v);
    return v;
  };

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
      Var w = param_var(i, "weight");
      Var b = param_var(i, "bias");
      x = graph.relu(graph.conv2d(x, w, b, conv->spec));
    } else if (std::holds_alternative<MaxPoolLayer>(layer)) {
      x = graph.maxpool2d(x);
    } else if (std::holds_alternative<GlobalAvgPoolLayer>(layer)) {
      x = graph.global_avg_pool(x);
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      Var gamma = param_var(i, "gamma");
      Var beta = param_var(i, "beta");
      const std::string prefix = layer_name(i) + ".";
      ops::BatchNormState state{params_.at(prefix + "running_mean"),
                                params_.at(prefix + "running_var"), bn->momentum, bn->epsilon};
      const Mode bn_mode = options.mode == Mode::train && trainable_[i] ? Mode::train : Mode::eval;
      x = graph.batchnorm(x, gamma, beta, state, bn_mode);
      if (bn_mode == Mode::train) {
        params_[prefix + "running_mean"] = state.running_mean;
        params_[prefix + "running_var"] = state.running_var;
      }
    } else if (const auto* dn = std::get_if<DenseLayer>(&layer)) {
      Var w = param_var(i, "weight");
      Var b = param_var(i, "bias");
      x = graph.dense(x, w, b);
      if (dn->relu) {
        x = graph.relu(x);
      }
    } else if (const auto* dr = std::get_if<DropoutLayer>(&layer)) {
      if (options.mode == Mode::train && dr->rate > 0.0) {
        if (options.rng == nullptr) {
          throw ConfigError("train-mode forward with dropout requires an rng");
        }
        x = graph.dropout(x, dr->rate, Mode::train, *options.rng);
      }
    } else if (std::holds_alternative<SoftmaxLayer>(layer)) {
      pass.logits = x;
      x = graph.softmax(x);
      pass.probs = x;
    }
    if (options.capture_layer && *options.capture_layer == layer_name(i)) {
      if (options.capture_requires_grad) {
        x = graph.leaf(graph.value(x), true);
      }
      pass.captured = x;
    }
  }
  if (options.capture_layer && !pass.captured) {
    throw ConfigError("model has no layer named '" + *options.capture_layer + "'");
  }
  return pass;
}

Tensor Model::predict(const Tensor& images) const {
  Model view = *this;
  Graph graph;
  return graph.value(view.forward(graph, images).probs);
}

Tensor Model::logits(const Tensor& images) const {
  Model view = *this;
  Graph graph;
  return graph.value(view.forward(graph, images).logits);
}

std::vector<std::vector<std::size_t>> conv_blocks(Variant variant) {
  switch (variant) {
    case Variant::vgg16:
      return {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
    case Variant::vgg19:
      return {{64, 64}, {128, 128}, {256, 256, 256, 256}, {512, 512, 512, 512},
              {512, 512, 512, 512}};
    case Variant::vgg_nano:
      return {{8}, {16}};
  }
  return {};
}

Model build_vgg(Variant variant, std::size_t num_classes, const HeadConfig& head,
                std::size_t input_size, DType dtype, std::uint64_t seed) {
  head.validate();
  if (num_classes < 1) {
    throw ConfigError("num_classes must be positive");
  }
  const auto blocks = conv_blocks(variant);
  const std::size_t reduction = std::size_t{1} << blocks.size();
  if (variant == Variant::vgg_nano) {
    if (input_size < 32 || input_size % reduction != 0) {
      throw DimensionError("vgg_nano input size must be >= 32 and divisible by " +
                           std::to_string(reduction) + ", got " + std::to_string(input_size));
    }
  } else if (input_size < reduction || input_size % reduction != 0) {
    throw DimensionError(to_string(variant) + " input size must be divisible by " +
                         std::to_string(reduction) + ", got " + std::to_string(input_size));
  }

  std::vector<Layer> layers;
  std::size_t channels = 3;
  for (const auto& block : blocks) {
    for (std::size_t filters : block) {
      layers.emplace_back(ConvLayer{ConvSpec{channels, filters, 3, 3, 1, 1}});
      channels = filters;
    }
    layers.emplace_back(MaxPoolLayer{});
  }
  layers.emplace_back(GlobalAvgPoolLayer{});
  layers.emplace_back(BatchNormLayer{channels});
  layers.emplace_back(DenseLayer{channels, head.dense_units, true, true});
  layers.emplace_back(DropoutLayer{head.dropout_rate});
  layers.emplace_back(DenseLayer{head.dense_units, num_classes, false, true});
  layers.emplace_back(SoftmaxLayer{});

  ModelSpec spec{variant, num_classes, input_size, head, {}};
  Model model(std::move(spec), std::move(layers), dtype);

  Rng rng(seed);
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    std::size_t fan_in = 0;
    if (const auto* conv = std::get_if<ConvLayer>(&model.layers()[i])) {
      fan_in = conv->spec.in_channels * conv->spec.kernel_h * conv->spec.kernel_w;
    } else if (const auto* dn = std::get_if<DenseLayer>(&model.layers()[i])) {
      fan_in = dn->in_features;
    } else {
      continue;
    }
    const std::string name = model.layer_name(i) + ".weight";
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w = model.param(name);
    visit_dtype(dtype, [&](auto tag) {
      using T = decltype(tag);
      for (T& v : w.mutable_data<T>()) {
        v = static_cast<T>(uniform(rng, -limit, limit));
      }
    });
    model.set_param(name, std::move(w));
  }
  return model;
}

std::vector<std::string> set_trainable(Model& model, std::size_t last_n) {
  const auto parameterized = model.parameterized_layers();
  if (last_n > parameterized.size()) {
    log::warn("set_trainable: last_n=" + std::to_string(last_n) + " exceeds the " +
              std::to_string(parameterized.size()) +
              " parameterized layers; unfreezing all of them");
    last_n = parameterized.size();
  }
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    model.set_layer_trainable(i, !is_parameterized(model.layers()[i]));
  }
  std::vector<std::string> unfrozen;
  for (std::size_t k = parameterized.size() - last_n; k < parameterized.size(); ++k) {
    model.set_layer_trainable(parameterized[k], true);
    unfrozen.push_back(model.layer_name(parameterized[k]));
  }
  return unfrozen;
}

GateVerdict anomaly_gate(const std::vector<double>& probs,
                         const std::vector<std::string>& class_names) {
  if (probs.size() != class_names.size() || probs.empty()) {
    throw DimensionError("anomaly_gate: " + std::to_string(probs.size()) + " probabilities for " +
                         std::to_string(class_names.size()) + " class names");
  }
  const auto healthy_count = std::count(class_names.begin(), class_names.end(), "Healthy");
  if (healthy_count != 1) {
    throw ConfigError("anomaly_gate requires exactly one class named 'Healthy', found " +
                      std::to_string(healthy_count));
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (probs[k] > probs[best]) {
      best = k;
    }
  }
  GateVerdict verdict;
  verdict.class_index = best;
  verdict.class_name = class_names[best];
  verdict.confidence = probs[best];
  verdict.healthy = class_names[best] == "Healthy";
  return verdict;
}

}  // namespace eyedex
