#include "eyedex/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "eyedex/checkpoint.hpp"
#include "eyedex/log.hpp"

namespace eyedex {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (epochs == 0) {
    throw ConfigError("epochs must be positive");
  }
  if (batch_size == 0) {
    throw ConfigError("batch_size must be positive");
  }
  if (!(lr_min > 0.0 && lr0 > lr_min)) {
    throw ConfigError("learning rates must satisfy lr0 > lr_min > 0");
  }
  if (es_patience < 1 || plateau_patience < 1) {
    throw ConfigError("patience values must be >= 1");
  }
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
    throw ConfigError("plateau_factor must be in (0, 1)");
  }
  if (!(min_delta >= 0.0)) {
    throw ConfigError("min_delta must be >= 0");
  }
  if (!(focal_gamma >= 0.0)) {
    throw ConfigError("focal_gamma must be >= 0");
  }
  if (!(focal_alpha > 0.0)) {
    throw ConfigError("focal_alpha must be > 0");
  }
  if (!(l2_lambda >= 0.0)) {
    throw ConfigError("l2_lambda must be >= 0");
  }
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr0", lr0},
          {"es_patience", es_patience},
          {"plateau_factor", plateau_factor},
          {"plateau_patience", plateau_patience},
          {"lr_min", lr_min},
          {"min_delta", min_delta},
          {"loss", to_string(loss)},
          {"focal_gamma", focal_gamma},
          {"focal_alpha", focal_alpha},
          {"use_class_weights", use_class_weights},
          {"l2_lambda", l2_lambda},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr0 = j.value("lr0", c.lr0);
  c.es_patience = j.value("es_patience", c.es_patience);
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.min_delta = j.value("min_delta", c.min_delta);
  c.loss = parse_loss_kind(j.value("loss", to_string(c.loss)));
  c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
  c.focal_alpha = j.value("focal_alpha", c.focal_alpha);
  c.use_class_weights = j.value("use_class_weights", c.use_class_weights);
  c.l2_lambda = j.value("l2_lambda", c.l2_lambda);
  c.seed = j.value("seed", c.seed);
  return c;
}

void Adam::check(const std::map<std::string, Tensor>& grads) const {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      throw NumericError("non-finite gradient for tensor '" + name + "'");
    }
  }
}

Tensor Adam::update(const std::string& name, const Tensor& param, const Tensor& grad,
                    double lr) {
  if (param.shape() != grad.shape()) {
    throw DimensionError("gradient for '" + name + "' has shape " + to_string(grad.shape()) +
                         ", parameter is " + to_string(param.shape()));
  }
  const std::size_t n = param.numel();
  auto& m = m_[name];
  auto& v = v_[name];
  if (m.empty()) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  Tensor out = param;
  visit_dtype(param.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto p = out.mutable_data<T>();
    auto g = grad.astype(param.dtype()).template data<T>();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) -
                            lr * m_hat / (std::sqrt(v_hat) + config_.epsilon));
    }
  });
  return out;
}

void Adam::step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
                double lr) {
  check(grads);
  ++t_;
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) {
      throw ConfigError("gradient for unknown tensor '" + name + "'");
    }
    it->second = update(name, it->second, g, lr);
  }
}

void Adam::step(Model& model, const std::map<std::string, Tensor>& grads, double lr) {
  check(grads);
  ++t_;
  for (const auto& [name, g] : grads) {
    model.set_param(name, update(name, model.param(name), g, lr));
  }
}

PlateauScheduler::PlateauScheduler(double lr0, double factor, std::size_t patience,
                                   double lr_min, double min_delta)
    : lr_(lr0),
      factor_(factor),
      patience_(patience),
      lr_min_(lr_min),
      min_delta_(min_delta),
      best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::on_epoch_end(double val_loss) {
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    wait_ = 0;
    return lr_;
  }
  ++wait_;
  if (wait_ >= patience_) {
    lr_ = std::max(lr_ * factor_, lr_min_);
    wait_ = 0;
  }
  return lr_;
}

EarlyStopper::EarlyStopper(std::size_t patience, double min_delta)
    : patience_(patience), min_delta_(min_delta), best_(std::numeric_limits<double>::infinity()) {}

EarlyStopper::Decision EarlyStopper::on_epoch_end(double val_loss) {
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    wait_ = 0;
    return Decision::proceed;
  }
  ++wait_;
  return wait_ >= patience_ ? Decision::stop : Decision::proceed;
}

json EpochRecord::to_json() const {
  return {{"epoch", epoch},         {"lr", lr},           {"train_loss", train_loss},
          {"train_acc", train_acc}, {"val_loss", val_loss}, {"val_acc", val_acc},
          {"seconds", seconds}};
}

EpochRecord EpochRecord::from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.lr = j.at("lr").get<double>();
  r.train_loss = j.at("train_loss").get<double>();
  r.train_acc = j.at("train_acc").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.val_acc = j.at("val_acc").get<double>();
  r.seconds = j.at("seconds").get<double>();
  return r;
}

TrainState::TrainState(const TrainConfig& config)
    : plateau(config.lr0, config.plateau_factor, config.plateau_patience, config.lr_min,
              config.min_delta),
      stopper(config.es_patience, config.min_delta),
      lr(config.lr0),
      best_val_loss(std::numeric_limits<double>::infinity()) {}

namespace {

std::size_t argmax_row(const std::vector<double>& values, std::size_t row, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (values[row * k + j] > values[row * k + best]) {
      best = j;
    }
  }
  return best;
}

}  // namespace

EvalResult evaluate_split(const Model& model, BatchLoader& loader, const LossSpec& loss,
                          double l2_lambda) {
  EvalResult result;
  loader.start_epoch(0);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  while (auto batch = loader.next()) {
    const Tensor probs = model.predict(batch->images);
    const auto losses = per_sample_losses(probs, batch->onehot, loss);
    const auto p = probs.to_vector();
    const std::size_t k = probs.dim(1);
    for (std::size_t b = 0; b < losses.size(); ++b) {
      loss_sum += losses[b];
      const std::size_t pred = argmax_row(p, b, k);
      result.predictions.push_back(pred);
      result.labels.push_back(batch->labels[b]);
      correct += pred == batch->labels[b] ? 1 : 0;
    }
  }
  result.skipped = loader.skipped();
  const std::size_t n = result.labels.size();
  if (n == 0) {
    throw ConfigError("evaluation split produced no decodable samples");
  }
  result.loss = loss_sum / static_cast<double>(n) + l2_penalty(model, l2_lambda);
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

FitResult fit(Model& model, const Manifest& manifest, const TrainConfig& config,
              const FitOptions& options) {
  config.validate();
  if (options.checkpoint_path.empty()) {
    throw ConfigError("fit needs a checkpoint path");
  }
  if (model.trainable_params().empty()) {
    throw ConfigError("model has no trainable parameters; nothing to optimize");
  }
  if (manifest.class_names.size() != model.num_classes()) {
    throw ConfigError("manifest has " + std::to_string(manifest.class_names.size()) +
                      " classes, model expects " + std::to_string(model.num_classes()));
  }
  if (manifest.split_size(Split::train) == 0) {
    throw ConfigError("train split is empty");
  }
  if (manifest.split_size(Split::val) == 0) {
    throw ConfigError("validation split is empty");
  }

  LoaderOptions train_opts;
  train_opts.batch_size = config.batch_size;
  train_opts.input_size = model.spec().input_size;
  train_opts.seed = config.seed;
  train_opts.dtype = model.dtype();
  train_opts.augment = options.augment;
  if (config.use_class_weights) {
    train_opts.class_weights =
        class_weights(manifest.split_counts(Split::train), manifest.class_names);
  }
  LoaderOptions val_opts = train_opts;
  val_opts.augment.reset();
  val_opts.class_weights.clear();
  BatchLoader train_loader(manifest, Split::train, train_opts);
  BatchLoader val_loader(manifest, Split::val, val_opts);

  const LossSpec loss_spec = config.loss_spec();
  FitResult result{TrainState(config), options.checkpoint_path};
  TrainState& state = result.state;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    state.epoch = epoch;
    train_loader.start_epoch(epoch);
    Rng dropout_rng(derive_seed(config.seed, epoch));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    while (auto batch = train_loader.next()) {
      Graph graph;
      ForwardOptions fwd;
      fwd.mode = Mode::train;
      fwd.rng = &dropout_rng;
      fwd.param_grads = true;
      const ForwardPass pass = model.forward(graph, batch->images, fwd);
      Var loss = data_loss(graph, pass.probs, batch->onehot, batch->weights, loss_spec);
      if (config.l2_lambda > 0.0) {
        loss = graph.add(loss, l2_penalty(graph, pass, model, config.l2_lambda));
      }
      const double loss_value = graph.value(loss).item();
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      graph.backward(loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, var] : pass.params) {
        if (graph.requires_grad(var) && graph.grad(var).defined()) {
          grads.emplace(name, graph.grad(var));
        }
      }
      state.optimizer.step(model, grads, state.lr);

      const auto probs = graph.value(pass.probs).to_vector();
      const std::size_t k = model.num_classes();
      for (std::size_t b = 0; b < batch->labels.size(); ++b) {
        correct += argmax_row(probs, b, k) == batch->labels[b] ? 1 : 0;
      }
      const std::size_t b = batch->labels.size();
      loss_sum += loss_value * static_cast<double>(b);
      seen += b;
    }
    if (seen == 0) {
      throw ConfigError("train split produced no decodable samples");
    }

    const EvalResult val = evaluate_split(model, val_loader, loss_spec, config.l2_lambda);
    const double val_loss =
        options.val_loss_hook ? options.val_loss_hook(epoch, val.loss) : val.loss;
    if (!std::isfinite(val_loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }

    EpochRecord record;
    record.epoch = epoch;
    record.lr = state.lr;
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    record.val_loss = val_loss;
    record.val_acc = val.accuracy;

    if (val_loss < state.best_val_loss) {
      state.best_val_loss = val_loss;
      state.best_epoch = epoch;
      CheckpointMetadata meta;
      meta.epoch = epoch;
      meta.val_metric = val_loss;
      meta.extra = options.checkpoint_extra;
      meta.extra["train_config"] = config.to_json();
      save_checkpoint(model, meta, options.checkpoint_path);
    }
    state.lr = state.plateau.on_epoch_end(val_loss);
    const bool stop = state.stopper.on_epoch_end(val_loss) == EarlyStopper::Decision::stop;

    if (options.record_seconds) {
      record.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    state.history.push_back(record);
    if (options.on_epoch) {
      options.on_epoch(record);
    }
    if (stop) {
      state.stopped_early = true;
      log::info("early stopping after epoch " + std::to_string(epoch) + "; best epoch " +
                std::to_string(state.best_epoch));
      break;
    }
  }
  load_weights_into(model, options.checkpoint_path);
  return result;
}

}  // namespace eyedex
