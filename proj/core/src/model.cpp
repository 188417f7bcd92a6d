#include "fer/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fer/errors.hpp"
#include "fer/rng.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

std::string_view arch_name(Arch arch) {
  switch (arch) {
    case Arch::kBaseline: return "baseline";
    case Arch::kFiveLayer: return "five-layer";
    case Arch::kCustom: return "custom";
  }
  return "custom";
}

Arch parse_arch(std::string_view name) {
  if (name == "baseline") return Arch::kBaseline;
  if (name == "five-layer" || name == "five_layer") return Arch::kFiveLayer;
  if (name == "custom") return Arch::kCustom;
  throw ArgumentError("unknown architecture '" + std::string(name) +
                      "' (expected baseline or five-layer)");
}

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kDense: return "dense";
    case LayerKind::kBatchNorm: return "bn";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kFlatten: return "flatten";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (auto kind : {LayerKind::kConv, LayerKind::kMaxPool, LayerKind::kDense,
                    LayerKind::kBatchNorm, LayerKind::kRelu, LayerKind::kDropout,
                    LayerKind::kFlatten}) {
    if (layer_kind_name(kind) == name) return kind;
  }
  throw ArgumentError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(int filters, int kernel, Padding padding, int stride) {
  LayerSpec s;
  s.kind = LayerKind::kConv;
  s.units = filters;
  s.kernel = kernel;
  s.padding = padding;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::max_pool(int kernel, int stride, bool ceil_mode) {
  LayerSpec s;
  s.kind = LayerKind::kMaxPool;
  s.kernel = kernel;
  s.stride = stride;
  s.ceil_mode = ceil_mode;
  return s;
}

LayerSpec LayerSpec::dense(int width) {
  LayerSpec s;
  s.kind = LayerKind::kDense;
  s.units = width;
  return s;
}

LayerSpec LayerSpec::batch_norm() {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  return s;
}

LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  return s;
}

LayerSpec LayerSpec::dropout(Scalar rate) {
  LayerSpec s;
  s.kind = LayerKind::kDropout;
  s.rate = rate;
  return s;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

std::vector<LayerSpec> architecture_specs(Arch arch) {
  using S = LayerSpec;
  std::vector<S> specs;
  auto conv_block = [&](int filters, int kernel) {
    specs.push_back(S::conv(filters, kernel));
    specs.push_back(S::batch_norm());
    specs.push_back(S::relu());
  };
  switch (arch) {
    case Arch::kFiveLayer:
      conv_block(32, 5);
      specs.push_back(S::max_pool(3, 2, /*ceil_mode=*/true));
      conv_block(32, 4);
      specs.push_back(S::max_pool(3, 2, true));
      conv_block(64, 5);
      specs.push_back(S::max_pool(3, 2, true));
      specs.push_back(S::flatten());
      specs.push_back(S::dense(1024));
      specs.push_back(S::batch_norm());
      specs.push_back(S::relu());
      specs.push_back(S::dropout(Scalar(0.3)));
      specs.push_back(S::dense(kNumClasses));
      break;
    case Arch::kBaseline:
      conv_block(32, 3);
      conv_block(32, 3);
      specs.push_back(S::max_pool(2, 2, false));
      conv_block(32, 3);
      conv_block(32, 3);
      specs.push_back(S::max_pool(2, 2, false));
      specs.push_back(S::flatten());
      // Batchnorm on the conv stages only; see README for the width choice.
      specs.push_back(S::dense(8192));
      specs.push_back(S::relu());
      specs.push_back(S::dropout(Scalar(0.5)));
      specs.push_back(S::dense(kNumClasses));
      break;
    case Arch::kCustom:
      throw ArgumentError("custom architectures have no built-in layer stack");
  }
  return specs;
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.normal() * std_dev);
  return t;
}

}  // namespace

ModelGraph::ModelGraph(Arch arch, std::vector<LayerSpec> specs, Shape input_shape,
                       std::uint64_t seed, BatchNormConfig bn_config)
    : arch_(arch), input_shape_(std::move(input_shape)), bn_config_(bn_config) {
  if (input_shape_.size() != 3) throw ShapeError("model input shape must be C x H x W");
  Shape shape = input_shape_;
  int counters[7] = {};
  for (std::size_t index = 0; index < specs.size(); ++index) {
    const LayerSpec& spec = specs[index];
    Layer layer;
    layer.spec = spec;
    layer.name = std::string(layer_kind_name(spec.kind)) +
                 std::to_string(++counters[static_cast<int>(spec.kind)]);
    const std::uint64_t layer_seed = derive_seed(seed, index);
    switch (spec.kind) {
      case LayerKind::kConv: {
        if (shape.size() != 3) throw ShapeError(layer.name + ": conv needs a C x H x W input");
        if (spec.units < 1 || spec.kernel < 1) throw ArgumentError(layer.name + ": bad conv spec");
        const auto k = static_cast<std::size_t>(spec.kernel);
        const auto filters = static_cast<std::size_t>(spec.units);
        const ConvGeometry g = conv_geometry(shape[1], shape[2], k, k, spec.padding, spec.stride);
        layer.params.push_back({layer.name + ".weight",
                                he_normal({filters, shape[0], k, k}, shape[0] * k * k, layer_seed),
                                true});
        layer.params.push_back({layer.name + ".bias", Tensor({filters}), false});
        shape = {filters, g.out_h, g.out_w};
        break;
      }
      case LayerKind::kMaxPool:
        if (shape.size() != 3) throw ShapeError(layer.name + ": pool needs a C x H x W input");
        shape = {shape[0], pool_output_size(shape[1], spec.kernel, spec.stride, spec.ceil_mode),
                 pool_output_size(shape[2], spec.kernel, spec.stride, spec.ceil_mode)};
        break;
      case LayerKind::kDense: {
        if (shape.size() != 1) throw ShapeError(layer.name + ": dense needs a flat input");
        if (spec.units < 1) throw ArgumentError(layer.name + ": bad dense width");
        const auto width = static_cast<std::size_t>(spec.units);
        layer.params.push_back(
            {layer.name + ".weight", he_normal({shape[0], width}, shape[0], layer_seed), true});
        layer.params.push_back({layer.name + ".bias", Tensor({width}), false});
        shape = {width};
        break;
      }
      case LayerKind::kBatchNorm: {
        const std::size_t channels = shape[0];
        layer.params.push_back({layer.name + ".gamma", Tensor({channels}, Scalar(1)), false});
        layer.params.push_back({layer.name + ".beta", Tensor({channels}), false});
        layer.running.mean = Tensor({channels});
        layer.running.var = Tensor({channels}, Scalar(1));
        break;
      }
      case LayerKind::kFlatten:
        shape = {shape_size(shape)};
        break;
      case LayerKind::kDropout:
        if (!(spec.rate >= 0) || spec.rate >= 1) throw ArgumentError(layer.name + ": bad rate");
        break;
      case LayerKind::kRelu:
        break;
    }
    layer.output_shape = shape;
    layers_.push_back(std::move(layer));
  }
}

ModelGraph ModelGraph::build(Arch arch, std::uint64_t seed) {
  return ModelGraph(arch, architecture_specs(arch),
                    {1, static_cast<std::size_t>(kImageSide), static_cast<std::size_t>(kImageSide)},
                    seed);
}

void ModelGraph::check_input(const Tensor& batch) const {
  if (batch.rank() != 4 || batch.dim(1) != input_shape_[0] || batch.dim(2) != input_shape_[1] ||
      batch.dim(3) != input_shape_[2]) {
    throw ShapeError("model expects N x " + std::to_string(input_shape_[0]) + " x " +
                     std::to_string(input_shape_[1]) + " x " + std::to_string(input_shape_[2]) +
                     " input, got " + shape_string(batch.shape()));
  }
}

Tensor ModelGraph::run(const Tensor& batch, Mode mode, std::uint64_t seed, Tape* tape,
                       std::vector<BatchNormStats>* updated) const {
  check_input(batch);
  if (tape) {
    tape->mode = mode;
    tape->entries.clear();
    tape->entries.resize(layers_.size());
  }
  Tensor x = batch;
  const std::size_t n = batch.dim(0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    Tape::Entry* entry = tape ? &tape->entries[i] : nullptr;
    if (entry) entry->input = x;
    switch (layer.spec.kind) {
      case LayerKind::kConv:
        x = conv2d(x, layer.params[0].value, layer.params[1].value, layer.spec.padding,
                   layer.spec.stride);
        break;
      case LayerKind::kMaxPool: {
        PoolOutput pooled = maxpool2d(x, layer.spec.kernel, layer.spec.stride, layer.spec.ceil_mode);
        if (entry) entry->argmax = std::move(pooled.argmax);
        x = std::move(pooled.output);
        break;
      }
      case LayerKind::kDense:
        x = dense(x, layer.params[0].value, layer.params[1].value);
        break;
      case LayerKind::kBatchNorm: {
        BatchNormStats stats = layer.running;
        BatchNormOutput out =
            batchnorm(x, layer.params[0].value, layer.params[1].value, mode, stats, bn_config_);
        if (updated && mode == Mode::kTrain) (*updated)[i] = std::move(stats);
        if (entry) entry->bn = std::move(out.cache);
        x = std::move(out.output);
        break;
      }
      case LayerKind::kRelu:
        x = relu(x);
        break;
      case LayerKind::kDropout: {
        DropoutOutput out = dropout(x, layer.spec.rate, mode, derive_seed(seed, i));
        if (entry) entry->mask = std::move(out.mask);
        x = std::move(out.output);
        break;
      }
      case LayerKind::kFlatten:
        x = x.reshaped({n, shape_size(layer.output_shape)});
        break;
    }
  }
  return x;
}

Tensor ModelGraph::logits(const Tensor& batch, Mode mode, std::uint64_t seed, Tape* tape) {
  if (mode == Mode::kInfer) return run(batch, mode, seed, tape, nullptr);
  std::vector<BatchNormStats> updated(layers_.size());
  Tensor out = run(batch, mode, seed, tape, &updated);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].spec.kind == LayerKind::kBatchNorm) layers_[i].running = std::move(updated[i]);
  }
  return out;
}

Tensor ModelGraph::infer_logits(const Tensor& batch, Tape* tape) const {
  return run(batch, Mode::kInfer, 0, tape, nullptr);
}

Tensor ModelGraph::forward_probs(const Tensor& batch, Mode mode, std::uint64_t seed) {
  return softmax(logits(batch, mode, seed));
}

Tensor ModelGraph::predict(const Tensor& batch) const { return softmax(infer_logits(batch)); }

Gradients ModelGraph::backward(const Tape& tape, const Tensor& logits_grad) const {
  if (tape.entries.size() != layers_.size()) {
    throw ArgumentError("backward: tape was not recorded by this model");
  }
  Gradients grads;
  grads.params.resize(layers_.size());
  Tensor g = logits_grad;
  for (std::size_t r = layers_.size(); r-- > 0;) {
    const Layer& layer = layers_[r];
    const Tape::Entry& entry = tape.entries[r];
    switch (layer.spec.kind) {
      case LayerKind::kConv: {
        LayerGrad lg = conv2d_backward(entry.input, layer.params[0].value, layer.spec.padding,
                                       layer.spec.stride, g);
        grads.params[r] = std::move(lg.param_grads);
        g = std::move(lg.input_grad);
        break;
      }
      case LayerKind::kMaxPool:
        g = maxpool2d_backward(entry.input.shape(), entry.argmax, g);
        break;
      case LayerKind::kDense: {
        LayerGrad lg = dense_backward(entry.input, layer.params[0].value, g);
        grads.params[r] = std::move(lg.param_grads);
        g = std::move(lg.input_grad);
        break;
      }
      case LayerKind::kBatchNorm: {
        LayerGrad lg = batchnorm_backward(entry.bn, layer.params[0].value, g);
        grads.params[r] = std::move(lg.param_grads);
        g = std::move(lg.input_grad);
        break;
      }
      case LayerKind::kRelu:
        g = relu_backward(entry.input, g);
        break;
      case LayerKind::kDropout:
        g = dropout_backward(entry.mask, layer.spec.rate, g);
        break;
      case LayerKind::kFlatten:
        g = g.reshaped(entry.input.shape());
        break;
    }
  }
  grads.input_grad = std::move(g);
  return grads;
}

std::size_t ModelGraph::param_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers_) {
    for (const auto& p : layer.params) total += p.value.size();
  }
  return total;
}

std::size_t ModelGraph::flatten_width() const {
  for (const auto& layer : layers_) {
    if (layer.spec.kind == LayerKind::kFlatten) return layer.output_shape[0];
  }
  return 0;
}

std::size_t argmax_row(const Scalar* row, std::size_t cols) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < cols; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
