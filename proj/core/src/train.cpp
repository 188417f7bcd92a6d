#include "fer/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fer/errors.hpp"
#include "fer/eval.hpp"
#include "fer/rng.hpp"
#include "fer/weights_io.hpp"
#include "json.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

long long to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw DataError("config key '" + key + "': expected true/false, got '" + value + "'");
}

// Dropout masks get their own stream, distinct from augmentation seeds.
constexpr std::uint64_t kDropoutStream = 0xD7A0;
constexpr std::uint64_t kShuffleStream = 0x5A0F;

}  // namespace

void TrainConfig::validate() const {
  if (!(lr0 >= 0.0)) throw ArgumentError("lr0 must be >= 0");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
  if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ArgumentError("lr_factor must lie in (0, 1)");
  if (plateau_patience < 1) throw ArgumentError("plateau_patience must be >= 1");
  if (max_epochs < 0) throw ArgumentError("max_epochs must be >= 0");
  augment_policy.validate();
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_key_values(buffer.str());
}

TrainConfig parse_train_config(const std::map<std::string, std::string>& values,
                               std::map<std::string, std::string>* unknown) {
  TrainConfig c;
  for (const auto& [key, value] : values) {
    if (key == "lr0") c.lr0 = to_double(key, value);
    else if (key == "batch_size") c.batch_size = static_cast<std::size_t>(std::max(0LL, to_int(key, value)));
    else if (key == "momentum") c.momentum = to_double(key, value);
    else if (key == "weight_decay") c.weight_decay = to_double(key, value);
    else if (key == "max_epochs") c.max_epochs = static_cast<int>(to_int(key, value));
    else if (key == "plateau_patience") c.plateau_patience = static_cast<int>(to_int(key, value));
    else if (key == "lr_factor") c.lr_factor = to_double(key, value);
    else if (key == "use_class_weights") c.use_class_weights = to_bool(key, value);
    else if (key == "augment") c.augment = to_bool(key, value);
    else if (key == "flip_prob") c.augment_policy.flip_prob = to_double(key, value);
    else if (key == "rotation_deg") c.augment_policy.rotation_deg = to_double(key, value);
    else if (key == "zoom_frac") c.augment_policy.zoom_frac = to_double(key, value);
    else if (key == "shift_frac") c.augment_policy.shift_frac = to_double(key, value);
    else if (key == "fill") {
      if (value == "edge") c.augment_policy.fill = FillMode::kEdge;
      else if (value == "constant") c.augment_policy.fill = FillMode::kConstant;
      else throw DataError("config key 'fill': expected edge or constant");
    } else if (key == "fill_value") c.augment_policy.fill_value = to_double(key, value);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "checkpoint") c.checkpoint_path = value;
    else if (key == "history") c.history_path = value;
    else if (key == "track_train_accuracy") c.track_train_accuracy = to_bool(key, value);
    else if (unknown) (*unknown)[key] = value;
    else throw DataError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainState TrainState::initial(const ModelGraph& model, const TrainConfig& config) {
  TrainState s;
  s.current_lr = config.lr0;
  s.velocity.resize(model.layers().size());
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    for (const auto& p : model.layers()[i].params) s.velocity[i].push_back(Tensor::zeros_like(p.value));
  }
  return s;
}

void sgd_update(std::span<Scalar> weights, std::span<const Scalar> grads, std::span<Scalar> velocity,
                double lr, double momentum, double weight_decay) {
  if (weights.size() != grads.size() || weights.size() != velocity.size()) {
    throw ShapeError("sgd_update: parameter, gradient and velocity sizes differ");
  }
  const auto mu = static_cast<Scalar>(momentum);
  const auto step = static_cast<Scalar>(lr);
  const auto wd = static_cast<Scalar>(weight_decay);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Scalar g = weight_decay != 0.0 ? grads[i] + wd * weights[i] : grads[i];
    velocity[i] = mu * velocity[i] - step * g;
    weights[i] += velocity[i];
  }
}

void sgd_step(ModelGraph& model, const Gradients& grads, TrainState& state,
              const TrainConfig& config) {
  auto& layers = model.layers();
  if (grads.params.size() != layers.size() || state.velocity.size() != layers.size()) {
    throw ShapeError("sgd_step: gradients or velocity do not match the model");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (std::size_t j = 0; j < layers[i].params.size(); ++j) {
      const Tensor& g = grads.params[i][j];
      for (Scalar v : g.values()) {
        if (!std::isfinite(v)) {
          throw NumericError("non-finite gradient in " + layers[i].params[j].name);
        }
      }
      Parameter& p = layers[i].params[j];
      sgd_update(p.value.values(), g.values(), state.velocity[i][j].values(), state.current_lr,
                 config.momentum, p.decay ? config.weight_decay : 0.0);
    }
  }
}

double lr_schedule_step(TrainState& state, double val_accuracy, const TrainConfig& config) {
  if (val_accuracy > state.best_val_accuracy) {
    state.best_val_accuracy = val_accuracy;
    state.epochs_since_improvement = 0;
  } else if (++state.epochs_since_improvement >= config.plateau_patience) {
    ++state.halvings;
    state.epochs_since_improvement = 0;
  }
  state.current_lr = config.lr0 * std::pow(config.lr_factor, state.halvings);
  return state.current_lr;
}

std::string history_json_line(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"val_accuracy", r.val_accuracy},
                      {"lr", r.lr}};
  if (r.train_accuracy) j["train_accuracy"] = *r.train_accuracy;
  return j.dump();
}

FitResult fit(ModelGraph model, const Dataset& train, const Dataset& val, const TrainConfig& config,
              const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ArgumentError("fit: training set is empty");
  if (val.empty()) throw ArgumentError("fit: validation set is empty");

  std::vector<Scalar> weights;
  if (config.use_class_weights) {
    const ClassWeights w = class_weights(count_labels(train));
    weights.assign(w.begin(), w.end());
  }

  std::ofstream history;
  if (!config.history_path.empty()) {
    history.open(config.history_path, std::ios::trunc);
    if (!history) throw DataError("cannot open history file " + config.history_path.string());
  }

  TrainState state = TrainState::initial(model, config);
  FitResult result{model, {}};
  std::vector<std::size_t> order(train.size());
  std::vector<int> labels;
  std::vector<GrayImage> images;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    state.epoch = epoch;
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      images.clear();
      labels.clear();
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = train.samples[order[k]];
        if (config.augment) {
          images.push_back(apply_policy(s.image, config.augment_policy,
                                        derive_seed(config.seed, static_cast<std::uint64_t>(epoch), order[k])));
        } else {
          images.push_back(s.image);
        }
        labels.push_back(emotion_index(s.label));
      }
      Tape tape;
      const Tensor logits =
          model.logits(images_tensor(images), Mode::kTrain,
                       derive_seed(config.seed, kDropoutStream, (static_cast<std::uint64_t>(epoch) << 32) | batch_index),
                       &tape);
      const CrossEntropyResult ce = softmax_cross_entropy(logits, labels, weights);
      if (!std::isfinite(ce.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      loss_sum += ce.loss * static_cast<double>(end - start);
      const Gradients grads = model.backward(tape, ce.logits_grad);
      try {
        sgd_step(model, grads, state, config);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train.size());
    record.val_accuracy = accuracy(model, val);
    record.lr = state.current_lr;  // rate used during this epoch
    if (config.track_train_accuracy) record.train_accuracy = accuracy(model, train);

    const double previous_best = state.best_val_accuracy;
    lr_schedule_step(state, record.val_accuracy, config);
    if (state.best_val_accuracy > previous_best) {
      result.model = model;
      result.model.info() = {epoch, record.val_accuracy};
      if (!config.checkpoint_path.empty()) save_weights(result.model, config.checkpoint_path);
    }
    state.history.push_back(record);
    if (history) history << history_json_line(record) << '\n' << std::flush;
    if (on_epoch && !on_epoch(record, model)) break;
  }
  result.state = std::move(state);
  return result;
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
