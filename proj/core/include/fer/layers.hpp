#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fer/config.hpp"
#include "fer/tensor.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

enum class Padding { kSame, kValid };
enum class Mode { kTrain, kInfer };

/// Gradients returned by every backward operation.
struct LayerGrad {
  Tensor input_grad;
  std::vector<Tensor> param_grads;  // same order and shapes as the layer's parameters
};

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip), NCHW.

struct ConvGeometry {
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;
};

/// Output size and leading padding. `same` gives ceil(in / stride) with any
/// odd leftover padding placed on the bottom/right.
ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel_h,
                           std::size_t kernel_w, Padding padding, int stride);

/// weights: OutC x InC x KH x KW; bias: OutC.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              Padding padding, int stride);

/// param_grads = {d_weights, d_bias}.
LayerGrad conv2d_backward(const Tensor& input, const Tensor& weights, Padding padding,
                          int stride, const Tensor& upstream);

// ---------------------------------------------------------------------------
// Max pooling.

std::size_t pool_output_size(std::size_t in, int kernel, int stride, bool ceil_mode);

struct PoolOutput {
  Tensor output;
  // Flat index into the input of the (first row-major) maximum of each window.
  std::vector<std::uint32_t> argmax;
};

PoolOutput maxpool2d(const Tensor& input, int kernel, int stride, bool ceil_mode);
Tensor maxpool2d_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                          const Tensor& upstream);

// ---------------------------------------------------------------------------
// Fully connected: input N x D, weights D x M, bias M.

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
LayerGrad dense_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream);

// ---------------------------------------------------------------------------
// Batch normalization over axis 1 (channels for NCHW, features for N x D).

struct BatchNormConfig {
  Scalar momentum = Scalar(0.9);  // running = momentum * running + (1 - momentum) * batch
  Scalar epsilon = Scalar(1e-5);
};

struct BatchNormStats {
  Tensor mean;
  Tensor var;
};

struct BatchNormCache {
  Tensor normalized;            // x_hat
  std::vector<Scalar> inv_std;  // per channel
  Mode mode = Mode::kInfer;
};

struct BatchNormOutput {
  Tensor output;
  BatchNormCache cache;
};

/// Train mode normalizes with (biased) batch statistics and folds them into
/// `running`; infer mode reads `running` only.
BatchNormOutput batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                          Mode mode, BatchNormStats& running,
                          const BatchNormConfig& config = {});

/// param_grads = {d_gamma, d_beta}. Infer-mode caches backpropagate through
/// the fixed affine map.
LayerGrad batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                             const Tensor& upstream);

// ---------------------------------------------------------------------------

Tensor relu(const Tensor& input);
/// Gradient is zero where input <= 0.
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

struct DropoutOutput {
  Tensor output;
  std::vector<std::uint8_t> mask;  // 1 = kept; empty in infer mode
};

/// Inverted dropout: survivors are scaled by 1 / (1 - rate) at train time.
DropoutOutput dropout(const Tensor& input, Scalar rate, Mode mode, std::uint64_t seed);
Tensor dropout_backward(std::span<const std::uint8_t> mask, Scalar rate, const Tensor& upstream);

// ---------------------------------------------------------------------------

/// Row-wise softmax of N x K logits (max-subtracted).
Tensor softmax(const Tensor& logits);

struct CrossEntropyResult {
  double loss = 0.0;
  Tensor probs;
  Tensor logits_grad;
};

/// loss = mean_i w[y_i] * -log p_i[y_i]. Empty `class_weights` means unweighted.
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                         std::span<const Scalar> class_weights = {});

}  // namespace FER_PRECISION_NS
}  // namespace fer
