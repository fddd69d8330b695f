#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "eyedex/augment.hpp"
#include "eyedex/data.hpp"
#include "eyedex/losses.hpp"
#include "eyedex/model.hpp"

namespace eyedex {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr0 = 1e-4;
  std::size_t es_patience = 7;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 3;
  double lr_min = 1e-8;
  // Absolute improvement a validation loss must show to reset the patience
  // counters of both callbacks.
  double min_delta = 1e-4;
  LossKind loss = LossKind::focal;
  double focal_gamma = 2.0;
  double focal_alpha = 1.0;
  bool use_class_weights = true;
  double l2_lambda = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
  LossSpec loss_spec() const { return {loss, focal_gamma, focal_alpha}; }
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// Adam with bias correction; moments are kept in double precision per
/// parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // One update of every tensor named in `grads`. All gradients are checked
  // before anything is modified; a non-finite gradient raises NumericError
  // naming the tensor.
  void step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads,
            double lr);
  void step(Model& model, const std::map<std::string, Tensor>& grads, double lr);

  std::size_t steps() const { return t_; }
  const std::vector<double>& first_moment(const std::string& name) const { return m_.at(name); }
  const std::vector<double>& second_moment(const std::string& name) const { return v_.at(name); }

 private:
  void check(const std::map<std::string, Tensor>& grads) const;
  Tensor update(const std::string& name, const Tensor& param, const Tensor& grad, double lr);

  AdamConfig config_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

/// Halves (by `factor`) the learning rate once the validation loss has gone
/// `patience` epochs without improving by more than `min_delta`; never drops
/// below `lr_min`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, double factor, std::size_t patience, double lr_min,
                   double min_delta);

  double on_epoch_end(double val_loss);
  double lr() const { return lr_; }
  std::size_t wait() const { return wait_; }
  double best() const { return best_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double lr_min_;
  double min_delta_;
  double best_;
  std::size_t wait_ = 0;
};

/// Stops after `patience` consecutive epochs without a validation-loss
/// improvement larger than `min_delta`.
class EarlyStopper {
 public:
  enum class Decision { proceed, stop };

  EarlyStopper(std::size_t patience, double min_delta);

  Decision on_epoch_end(double val_loss);
  std::size_t wait() const { return wait_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_;
  std::size_t wait_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

struct TrainState {
  Adam optimizer;
  PlateauScheduler plateau;
  EarlyStopper stopper;
  double lr;
  std::size_t epoch = 0;
  double best_val_loss;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::vector<EpochRecord> history;

  explicit TrainState(const TrainConfig& config);
};

struct EvalResult {
  double loss = 0.0;  // mean unweighted data loss + L2 penalty
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
  std::vector<std::size_t> labels;
  std::size_t skipped = 0;
};

// Eval-mode pass over a loader's split.
EvalResult evaluate_split(const Model& model, BatchLoader& loader, const LossSpec& loss,
                          double l2_lambda);

struct FitOptions {
  std::filesystem::path checkpoint_path;
  std::optional<AugmentParams> augment = AugmentParams{};
  std::function<void(const EpochRecord&)> on_epoch;
  bool record_seconds = true;
  // When set, its return value replaces the measured validation loss for
  // history, checkpointing and both callbacks (scripted schedules).
  std::function<double(std::size_t epoch, double measured)> val_loss_hook;
  // Copied into every checkpoint's metadata under "extra".
  nlohmann::json checkpoint_extra = nlohmann::json::object();
};

struct FitResult {
  TrainState state;
  std::filesystem::path best_checkpoint;
};

/// Epoch loop: shuffled, augmented train batches -> loss (+ L2, x class
/// weights) -> Adam; then validation, checkpoint on improvement, plateau
/// scheduling, and early stopping. The best checkpoint is restored into
/// `model` when training ends.
FitResult fit(Model& model, const Manifest& manifest, const TrainConfig& config,
              const FitOptions& options);

}  // namespace eyedex
