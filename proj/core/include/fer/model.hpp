#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fer/config.hpp"
#include "fer/layers.hpp"
#include "fer/tensor.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

enum class Arch { kBaseline, kFiveLayer, kCustom };

std::string_view arch_name(Arch arch);
/// Accepts "baseline", "five-layer", "custom"; throws ArgumentError otherwise.
Arch parse_arch(std::string_view name);

enum class LayerKind { kConv, kMaxPool, kDense, kBatchNorm, kRelu, kDropout, kFlatten };

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int units = 0;   // conv filters or dense width
  int kernel = 0;  // conv / pool
  int stride = 1;
  Padding padding = Padding::kSame;
  bool ceil_mode = false;
  Scalar rate = 0;  // dropout

  static LayerSpec conv(int filters, int kernel, Padding padding = Padding::kSame, int stride = 1);
  static LayerSpec max_pool(int kernel, int stride, bool ceil_mode);
  static LayerSpec dense(int width);
  static LayerSpec batch_norm();
  static LayerSpec relu();
  static LayerSpec dropout(Scalar rate);
  static LayerSpec flatten();

  bool operator==(const LayerSpec&) const = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = false;  // weight decay applies (conv/dense weights only)
};

struct Layer {
  LayerSpec spec;
  std::string name;               // e.g. "conv2", "bn3"
  std::vector<Parameter> params;  // conv/dense: weight, bias; batchnorm: gamma, beta
  BatchNormStats running;         // batchnorm only
  Shape output_shape;             // per sample (no batch axis)
};

/// Values recorded by a forward pass that backward() needs.
struct Tape {
  struct Entry {
    Tensor input;
    std::vector<std::uint32_t> argmax;
    BatchNormCache bn;
    std::vector<std::uint8_t> mask;
  };
  Mode mode = Mode::kInfer;
  std::vector<Entry> entries;
};

struct Gradients {
  Tensor input_grad;
  std::vector<std::vector<Tensor>> params;  // indexed [layer][param]
};

struct TrainingInfo {
  int epochs = 0;
  double val_accuracy = 0.0;
};

// Ordered layer stack with learnable parameters and batchnorm running
// statistics. Logits come out of the last layer; softmax is applied by
// forward_probs()/predict() only.
class ModelGraph {
 public:
  ModelGraph(Arch arch, std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed,
             BatchNormConfig bn_config = {});

  static ModelGraph build(Arch arch, std::uint64_t seed = 0);

  Arch arch() const { return arch_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const BatchNormConfig& bn_config() const { return bn_config_; }
  void set_bn_config(const BatchNormConfig& config) { bn_config_ = config; }
  TrainingInfo& info() { return info_; }
  const TrainingInfo& info() const { return info_; }

  /// Train mode updates batchnorm running statistics.
  Tensor logits(const Tensor& batch, Mode mode, std::uint64_t seed, Tape* tape = nullptr);
  Tensor infer_logits(const Tensor& batch, Tape* tape = nullptr) const;

  Tensor forward_probs(const Tensor& batch, Mode mode, std::uint64_t seed);
  /// Infer-mode probabilities; safe to call concurrently.
  Tensor predict(const Tensor& batch) const;

  Gradients backward(const Tape& tape, const Tensor& logits_grad) const;

  std::size_t param_count() const;
  std::size_t flatten_width() const;
  std::size_t num_outputs() const { return layers_.empty() ? 0 : shape_size(layers_.back().output_shape); }

 private:
  Tensor run(const Tensor& batch, Mode mode, std::uint64_t seed, Tape* tape,
             std::vector<BatchNormStats>* updated) const;
  void check_input(const Tensor& batch) const;

  Arch arch_;
  Shape input_shape_;
  std::vector<Layer> layers_;
  BatchNormConfig bn_config_;
  TrainingInfo info_;
};

std::vector<LayerSpec> architecture_specs(Arch arch);

std::size_t argmax_row(const Scalar* row, std::size_t cols);

}  // namespace FER_PRECISION_NS
}  // namespace fer
