#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fer/augment.hpp"
#include "fer/data.hpp"
#include "fer/model.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

struct TrainConfig {
  double lr0 = 0.1;
  std::size_t batch_size = 128;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int max_epochs = 300;
  int plateau_patience = 10;
  double lr_factor = 0.5;
  bool use_class_weights = false;
  bool augment = true;
  AugmentPolicy augment_policy;
  std::uint64_t seed = 0;

  // Optional outputs.
  std::filesystem::path checkpoint_path;  // best weights, rewritten on every improvement
  std::filesystem::path history_path;     // JSON lines, one record per epoch
  bool track_train_accuracy = false;      // extra infer-mode pass over the training set

  /// lr0 == 0 is accepted and freezes the parameters.
  void validate() const;
};

/// Parses `key = value` lines ('#' comments). Unknown keys are returned in
/// `unknown` when non-null, otherwise rejected.
TrainConfig parse_train_config(const std::map<std::string, std::string>& values,
                               std::map<std::string, std::string>* unknown = nullptr);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);
std::map<std::string, std::string> parse_key_values(std::string_view text);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;
  std::optional<double> train_accuracy;
};

struct TrainState {
  int epoch = 0;
  double current_lr = 0.0;
  int halvings = 0;
  std::vector<std::vector<Tensor>> velocity;  // [layer][param], zero-initialized
  double best_val_accuracy = -1.0;            // nothing observed yet
  int epochs_since_improvement = 0;
  std::vector<EpochRecord> history;

  static TrainState initial(const ModelGraph& model, const TrainConfig& config);
};

/// One parameter tensor: g' = g + wd * w; v = momentum * v - lr * g'; w += v.
void sgd_update(std::span<Scalar> weights, std::span<const Scalar> grads,
                std::span<Scalar> velocity, double lr, double momentum, double weight_decay);

/// Applies sgd_update to every parameter; weight decay on conv/dense weights
/// only. Throws NumericError naming the layer on a non-finite gradient.
void sgd_step(ModelGraph& model, const Gradients& grads, TrainState& state,
              const TrainConfig& config);

/// Plateau schedule, called once per epoch. Returns the (possibly halved) lr.
double lr_schedule_step(TrainState& state, double val_accuracy, const TrainConfig& config);

struct FitResult {
  ModelGraph model;  // best checkpoint by validation accuracy
  TrainState state;
};

/// Return false to stop after the current epoch.
using EpochCallback = std::function<bool(const EpochRecord&, const ModelGraph&)>;

FitResult fit(ModelGraph model, const Dataset& train, const Dataset& val, const TrainConfig& config,
              const EpochCallback& on_epoch = {});

std::string history_json_line(const EpochRecord& record);

}  // namespace FER_PRECISION_NS
}  // namespace fer
