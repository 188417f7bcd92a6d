#include "fer/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fer/errors.hpp"
#include "fer/gemm.hpp"
#include "fer/rng.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape()) +
                     " does not match " + shape_string(b.shape()));
  }
}

struct ConvDims {
  std::size_t batch, in_c, in_h, in_w;
  std::size_t out_c, kh, kw;
  ConvGeometry geo;
  int stride;

  std::size_t patch() const { return in_c * kh * kw; }
  std::size_t positions() const { return geo.out_h * geo.out_w; }
};

ConvDims conv_dims(const Tensor& input, const Tensor& weights, Padding padding, int stride) {
  require_rank(input, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  if (input.dim(1) != weights.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                     " channels, weights expect " + std::to_string(weights.dim(1)));
  }
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
             weights.dim(0), weights.dim(2), weights.dim(3), {}, stride};
  d.geo = conv_geometry(d.in_h, d.in_w, d.kh, d.kw, padding, stride);
  return d;
}

// col[(c*KH + i)*KW + j][oy*OW + ox] = padded input sample.
void im2col(const Scalar* image, const ConvDims& d, Scalar* col) {
  const std::size_t positions = d.positions();
  const auto s = static_cast<std::ptrdiff_t>(d.stride);
  for (std::size_t c = 0; c < d.in_c; ++c) {
    const Scalar* plane = image + c * d.in_h * d.in_w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        Scalar* row = col + ((c * d.kh + i) * d.kw + j) * positions;
        for (std::size_t oy = 0; oy < d.geo.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * s +
                                   static_cast<std::ptrdiff_t>(i) -
                                   static_cast<std::ptrdiff_t>(d.geo.pad_top);
          Scalar* out = row + oy * d.geo.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.in_h)) {
            std::fill(out, out + d.geo.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + static_cast<std::size_t>(y) * d.in_w;
          for (std::size_t ox = 0; ox < d.geo.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox) * s +
                                     static_cast<std::ptrdiff_t>(j) -
                                     static_cast<std::ptrdiff_t>(d.geo.pad_left);
            out[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(d.in_w)) ? Scalar(0) : src[x];
          }
        }
      }
    }
  }
}

void col2im(const Scalar* col, const ConvDims& d, Scalar* image) {
  const std::size_t positions = d.positions();
  const auto s = static_cast<std::ptrdiff_t>(d.stride);
  for (std::size_t c = 0; c < d.in_c; ++c) {
    Scalar* plane = image + c * d.in_h * d.in_w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const Scalar* row = col + ((c * d.kh + i) * d.kw + j) * positions;
        for (std::size_t oy = 0; oy < d.geo.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy) * s +
                                   static_cast<std::ptrdiff_t>(i) -
                                   static_cast<std::ptrdiff_t>(d.geo.pad_top);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
          Scalar* dst = plane + static_cast<std::size_t>(y) * d.in_w;
          const Scalar* in = row + oy * d.geo.out_w;
          for (std::size_t ox = 0; ox < d.geo.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox) * s +
                                     static_cast<std::ptrdiff_t>(j) -
                                     static_cast<std::ptrdiff_t>(d.geo.pad_left);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(d.in_w)) dst[x] += in[ox];
          }
        }
      }
    }
  }
}

// Channel layout for batchnorm: `outer` batch entries, `channels`, `inner`
// contiguous elements per (entry, channel).
struct ChannelLayout {
  std::size_t outer, channels, inner;
};

ChannelLayout channel_layout(const Tensor& t) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1), 1};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2) * t.dim(3)};
  throw ShapeError("batchnorm: expected rank 2 or 4 input, got " + shape_string(t.shape()));
}

}  // namespace

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel_h,
                           std::size_t kernel_w, Padding padding, int stride) {
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  const auto s = static_cast<std::size_t>(stride);
  ConvGeometry g;
  if (padding == Padding::kValid) {
    if (kernel_h > in_h || kernel_w > in_w) {
      throw ShapeError("conv2d: kernel " + std::to_string(kernel_h) + "x" +
                       std::to_string(kernel_w) + " larger than input " +
                       std::to_string(in_h) + "x" + std::to_string(in_w));
    }
    g.out_h = (in_h - kernel_h) / s + 1;
    g.out_w = (in_w - kernel_w) / s + 1;
    return g;
  }
  g.out_h = (in_h + s - 1) / s;
  g.out_w = (in_w + s - 1) / s;
  const std::size_t need_h = (g.out_h - 1) * s + kernel_h;
  const std::size_t need_w = (g.out_w - 1) * s + kernel_w;
  const std::size_t total_h = need_h > in_h ? need_h - in_h : 0;
  const std::size_t total_w = need_w > in_w ? need_w - in_w : 0;
  if (kernel_h > in_h + total_h || kernel_w > in_w + total_w) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.pad_top = total_h / 2;
  g.pad_left = total_w / 2;
  return g;
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, Padding padding,
              int stride) {
  const ConvDims d = conv_dims(input, weights, padding, stride);
  if (bias.size() != d.out_c) throw ShapeError("conv2d: bias length must equal output channels");

  Tensor output({d.batch, d.out_c, d.geo.out_h, d.geo.out_w});
  const std::size_t patch = d.patch();
  const std::size_t positions = d.positions();
  std::vector<Scalar> col(patch * positions);
  const std::size_t in_stride = d.in_c * d.in_h * d.in_w;
  const std::size_t out_stride = d.out_c * positions;

  for (std::size_t n = 0; n < d.batch; ++n) {
    im2col(input.data() + n * in_stride, d, col.data());
    Scalar* out = output.data() + n * out_stride;
    for (std::size_t o = 0; o < d.out_c; ++o) {
      std::fill(out + o * positions, out + (o + 1) * positions, bias[o]);
    }
    gemm(d.out_c, positions, patch, weights.data(), patch, col.data(), positions, out, positions,
         /*accumulate=*/true);
  }
  return output;
}

LayerGrad conv2d_backward(const Tensor& input, const Tensor& weights, Padding padding, int stride,
                          const Tensor& upstream) {
  const ConvDims d = conv_dims(input, weights, padding, stride);
  const Shape expected{d.batch, d.out_c, d.geo.out_h, d.geo.out_w};
  if (upstream.shape() != expected) {
    throw ShapeError("conv2d_backward: upstream " + shape_string(upstream.shape()) +
                     " but forward output is " + shape_string(expected));
  }
  const std::size_t patch = d.patch();
  const std::size_t positions = d.positions();
  const std::size_t in_stride = d.in_c * d.in_h * d.in_w;
  const std::size_t out_stride = d.out_c * positions;

  LayerGrad grad;
  grad.input_grad = Tensor(input.shape());
  Tensor d_weights(weights.shape());
  Tensor d_bias({d.out_c});

  std::vector<Scalar> col(patch * positions);
  std::vector<Scalar> col_t(patch * positions);
  std::vector<Scalar> d_col(patch * positions);
  std::vector<Scalar> weights_t(patch * d.out_c);
  transpose(weights.data(), d.out_c, patch, weights_t.data());

  for (std::size_t n = 0; n < d.batch; ++n) {
    const Scalar* dy = upstream.data() + n * out_stride;
    im2col(input.data() + n * in_stride, d, col.data());
    transpose(col.data(), patch, positions, col_t.data());
    gemm(d.out_c, patch, positions, dy, positions, col_t.data(), patch, d_weights.data(), patch,
         /*accumulate=*/true);
    for (std::size_t o = 0; o < d.out_c; ++o) {
      Scalar sum = 0;
      for (std::size_t p = 0; p < positions; ++p) sum += dy[o * positions + p];
      d_bias[o] += sum;
    }
    gemm(patch, positions, d.out_c, weights_t.data(), d.out_c, dy, positions, d_col.data(),
         positions, /*accumulate=*/false);
    col2im(d_col.data(), d, grad.input_grad.data() + n * in_stride);
  }
  grad.param_grads.push_back(std::move(d_weights));
  grad.param_grads.push_back(std::move(d_bias));
  return grad;
}

std::size_t pool_output_size(std::size_t in, int kernel, int stride, bool ceil_mode) {
  if (kernel < 1 || stride < 1) throw ArgumentError("maxpool2d: kernel and stride must be >= 1");
  const auto k = static_cast<std::size_t>(kernel);
  const auto s = static_cast<std::size_t>(stride);
  if (k > in) {
    throw ShapeError("maxpool2d: kernel " + std::to_string(k) + " exceeds extent " +
                     std::to_string(in));
  }
  std::size_t out = (ceil_mode ? (in - k + s - 1) / s : (in - k) / s) + 1;
  // A partial window must still start inside the input.
  if (ceil_mode && (out - 1) * s >= in) --out;
  return out;
}

PoolOutput maxpool2d(const Tensor& input, int kernel, int stride, bool ceil_mode) {
  if (kernel < 1 || stride < 1) throw ArgumentError("maxpool2d: kernel and stride must be >= 1");
  require_rank(input, 4, "maxpool2d input");
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t in_h = input.dim(2), in_w = input.dim(3);
  const std::size_t out_h = pool_output_size(in_h, kernel, stride, ceil_mode);
  const std::size_t out_w = pool_output_size(in_w, kernel, stride, ceil_mode);
  const auto k = static_cast<std::size_t>(kernel);
  const auto s = static_cast<std::size_t>(stride);

  PoolOutput result;
  result.output = Tensor({batch, channels, out_h, out_w});
  result.argmax.resize(result.output.size());
  std::size_t out_index = 0;
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const std::size_t base = plane * in_h * in_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const std::size_t y0 = oy * s, y1 = std::min(in_h, y0 + k);
      for (std::size_t ox = 0; ox < out_w; ++ox, ++out_index) {
        const std::size_t x0 = ox * s, x1 = std::min(in_w, x0 + k);
        std::size_t best = base + y0 * in_w + x0;
        Scalar best_value = input[best];
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t x = x0; x < x1; ++x) {
            const std::size_t idx = base + y * in_w + x;
            if (input[idx] > best_value) {
              best_value = input[idx];
              best = idx;
            }
          }
        }
        result.output[out_index] = best_value;
        result.argmax[out_index] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return result;
}

Tensor maxpool2d_backward(const Shape& input_shape, std::span<const std::uint32_t> argmax,
                          const Tensor& upstream) {
  if (argmax.size() != upstream.size()) {
    throw ShapeError("maxpool2d_backward: upstream does not match the forward output");
  }
  Tensor grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += upstream[i];
  return grad;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  const std::size_t batch = input.dim(0), in_dim = input.dim(1), out_dim = weights.dim(1);
  if (weights.dim(0) != in_dim) {
    throw ShapeError("dense: input width " + std::to_string(in_dim) + " vs weights " +
                     shape_string(weights.shape()));
  }
  if (bias.size() != out_dim) throw ShapeError("dense: bias length must equal output width");
  Tensor output({batch, out_dim});
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy(bias.data(), bias.data() + out_dim, output.data() + n * out_dim);
  }
  gemm(batch, out_dim, in_dim, input.data(), in_dim, weights.data(), out_dim, output.data(),
       out_dim, /*accumulate=*/true);
  return output;
}

LayerGrad dense_backward(const Tensor& input, const Tensor& weights, const Tensor& upstream) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  const std::size_t batch = input.dim(0), in_dim = input.dim(1), out_dim = weights.dim(1);
  if (weights.dim(0) != in_dim || upstream.shape() != Shape{batch, out_dim}) {
    throw ShapeError("dense_backward: inconsistent shapes");
  }
  LayerGrad grad;
  grad.input_grad = Tensor({batch, in_dim});
  Tensor d_weights(weights.shape());
  Tensor d_bias({out_dim});

  std::vector<Scalar> input_t(batch * in_dim);
  transpose(input.data(), batch, in_dim, input_t.data());
  gemm(in_dim, out_dim, batch, input_t.data(), batch, upstream.data(), out_dim, d_weights.data(),
       out_dim, /*accumulate=*/false);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t j = 0; j < out_dim; ++j) d_bias[j] += upstream[n * out_dim + j];
  }
  std::vector<Scalar> weights_t(in_dim * out_dim);
  transpose(weights.data(), in_dim, out_dim, weights_t.data());
  gemm(batch, in_dim, out_dim, upstream.data(), out_dim, weights_t.data(), in_dim,
       grad.input_grad.data(), in_dim, /*accumulate=*/false);

  grad.param_grads.push_back(std::move(d_weights));
  grad.param_grads.push_back(std::move(d_bias));
  return grad;
}

BatchNormOutput batchnorm(const Tensor& input, const Tensor& gamma, const Tensor& beta, Mode mode,
                          BatchNormStats& running, const BatchNormConfig& config) {
  const ChannelLayout L = channel_layout(input);
  if (gamma.size() != L.channels || beta.size() != L.channels) {
    throw ShapeError("batchnorm: gamma/beta length must equal the channel count " +
                     std::to_string(L.channels));
  }
  if (running.mean.size() != L.channels || running.var.size() != L.channels) {
    throw ShapeError("batchnorm: running statistics have the wrong length");
  }
  BatchNormOutput result;
  result.output = Tensor(input.shape());
  result.cache.normalized = Tensor(input.shape());
  result.cache.inv_std.resize(L.channels);
  result.cache.mode = mode;

  const double count = static_cast<double>(L.outer * L.inner);
  for (std::size_t c = 0; c < L.channels; ++c) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::size_t n = 0; n < L.outer; ++n) {
        const Scalar* x = input.data() + (n * L.channels + c) * L.inner;
        for (std::size_t i = 0; i < L.inner; ++i) sum += x[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (std::size_t n = 0; n < L.outer; ++n) {
        const Scalar* x = input.data() + (n * L.channels + c) * L.inner;
        for (std::size_t i = 0; i < L.inner; ++i) {
          const double dx = x[i] - mean;
          sq += dx * dx;
        }
      }
      var = sq / count;
      running.mean[c] = static_cast<Scalar>(config.momentum * running.mean[c] +
                                            (1 - config.momentum) * mean);
      running.var[c] = static_cast<Scalar>(config.momentum * running.var[c] +
                                           (1 - config.momentum) * var);
    } else {
      mean = running.mean[c];
      var = running.var[c];
    }
    const Scalar inv_std = static_cast<Scalar>(1.0 / std::sqrt(var + config.epsilon));
    const Scalar m = static_cast<Scalar>(mean);
    result.cache.inv_std[c] = inv_std;
    for (std::size_t n = 0; n < L.outer; ++n) {
      const std::size_t off = (n * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        const Scalar xh = (input[off + i] - m) * inv_std;
        result.cache.normalized[off + i] = xh;
        result.output[off + i] = gamma[c] * xh + beta[c];
      }
    }
  }
  return result;
}

LayerGrad batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                             const Tensor& upstream) {
  require_same_shape(cache.normalized, upstream, "batchnorm_backward");
  const ChannelLayout L = channel_layout(upstream);
  LayerGrad grad;
  grad.input_grad = Tensor(upstream.shape());
  Tensor d_gamma({L.channels});
  Tensor d_beta({L.channels});
  const double count = static_cast<double>(L.outer * L.inner);

  for (std::size_t c = 0; c < L.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < L.outer; ++n) {
      const std::size_t off = (n * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        sum_dy += upstream[off + i];
        sum_dy_xh += static_cast<double>(upstream[off + i]) * cache.normalized[off + i];
      }
    }
    d_gamma[c] = static_cast<Scalar>(sum_dy_xh);
    d_beta[c] = static_cast<Scalar>(sum_dy);
    const double scale = static_cast<double>(gamma[c]) * cache.inv_std[c];
    for (std::size_t n = 0; n < L.outer; ++n) {
      const std::size_t off = (n * L.channels + c) * L.inner;
      for (std::size_t i = 0; i < L.inner; ++i) {
        double g;
        if (cache.mode == Mode::kTrain) {
          g = scale * (upstream[off + i] - sum_dy / count -
                       cache.normalized[off + i] * sum_dy_xh / count);
        } else {
          g = scale * upstream[off + i];
        }
        grad.input_grad[off + i] = static_cast<Scalar>(g);
      }
    }
  }
  grad.param_grads.push_back(std::move(d_gamma));
  grad.param_grads.push_back(std::move(d_beta));
  return grad;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0 ? input[i] : Scalar(0);
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream) {
  require_same_shape(input, upstream, "relu_backward");
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) grad[i] = input[i] > 0 ? upstream[i] : Scalar(0);
  return grad;
}

DropoutOutput dropout(const Tensor& input, Scalar rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0) || rate >= 1) throw ArgumentError("dropout: rate must lie in [0, 1)");
  DropoutOutput result;
  if (mode == Mode::kInfer || rate == 0) {
    result.output = input;
    if (mode == Mode::kTrain) result.mask.assign(input.size(), 1);
    return result;
  }
  result.output = Tensor(input.shape());
  result.mask.resize(input.size());
  const Scalar scale = Scalar(1) / (Scalar(1) - rate);
  Rng rng(seed);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool keep = !rng.bernoulli(rate);
    result.mask[i] = keep ? 1 : 0;
    result.output[i] = keep ? input[i] * scale : Scalar(0);
  }
  return result;
}

Tensor dropout_backward(std::span<const std::uint8_t> mask, Scalar rate, const Tensor& upstream) {
  if (mask.empty()) return upstream;  // infer mode
  if (mask.size() != upstream.size()) throw ShapeError("dropout_backward: mask size mismatch");
  const Scalar scale = Scalar(1) / (Scalar(1) - rate);
  Tensor grad(upstream.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) grad[i] = mask[i] ? upstream[i] * scale : Scalar(0);
  return grad;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor probs(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* z = logits.data() + r * cols;
    Scalar* p = probs.data() + r * cols;
    const Scalar max = *std::max_element(z, z + cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(static_cast<double>(z[j] - max));
    for (std::size_t j = 0; j < cols; ++j) {
      p[j] = static_cast<Scalar>(std::exp(static_cast<double>(z[j] - max)) / sum);
    }
  }
  return probs;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                         std::span<const Scalar> class_weights) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) throw ShapeError("softmax_cross_entropy: one label per row required");
  if (!class_weights.empty() && class_weights.size() != cols) {
    throw ShapeError("softmax_cross_entropy: one weight per class required");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    }
  }
  for (Scalar w : class_weights) {
    if (!(w > 0)) throw ArgumentError("softmax_cross_entropy: class weights must be positive");
  }

  CrossEntropyResult result;
  result.probs = softmax(logits);
  result.logits_grad = Tensor(logits.shape());
  const double inv_rows = 1.0 / static_cast<double>(rows);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* z = logits.data() + r * cols;
    const Scalar max = *std::max_element(z, z + cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(static_cast<double>(z[j] - max));
    const auto y = static_cast<std::size_t>(labels[r]);
    const double nll = std::log(sum) - static_cast<double>(z[y] - max);
    const double w = class_weights.empty() ? 1.0 : static_cast<double>(class_weights[y]);
    total += class_weights.empty() ? nll : w * nll;
    const double g = class_weights.empty() ? inv_rows : w * inv_rows;
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = result.probs[r * cols + j];
      result.logits_grad[r * cols + j] = static_cast<Scalar>(g * (p - (j == y ? 1.0 : 0.0)));
    }
  }
  result.loss = total * inv_rows;
  return result;
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
