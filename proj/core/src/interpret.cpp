#include "fer/interpret.hpp"

#include <algorithm>
#include <cmath>

#include "fer/errors.hpp"
#include "fer/eval.hpp"
#include "json.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

std::vector<std::size_t> occlusion_offsets(std::size_t extent, std::size_t patch, std::size_t stride) {
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y + patch <= extent; y += stride) out.push_back(y);
  if (out.empty() || out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

Heatmap occlusion_map(const ModelGraph& model, const GrayImage& image, const OcclusionOptions& options) {
  if (options.patch < 1 || options.stride < 1) {
    throw ArgumentError("occlusion_map: patch and stride must be >= 1");
  }
  const auto patch = static_cast<std::size_t>(options.patch);
  if (patch > image.width || patch > image.height) {
    throw ArgumentError("occlusion_map: patch larger than the image");
  }
  const auto base = predict_single(model, image);
  const int target = options.target ? emotion_index(*options.target) : argmax(base);
  const double p0 = base[static_cast<std::size_t>(target)];

  const auto xs = occlusion_offsets(image.width, patch, static_cast<std::size_t>(options.stride));
  const auto ys = occlusion_offsets(image.height, patch, static_cast<std::size_t>(options.stride));
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  for (auto y : ys) {
    for (auto x : xs) positions.emplace_back(x, y);
  }

  std::vector<double> sum(image.values.size(), 0.0);
  std::vector<std::size_t> coverage(image.values.size(), 0);
  const auto fill = static_cast<Scalar>(options.fill);
  std::vector<GrayImage> batch;
  for (std::size_t start = 0; start < positions.size(); start += options.batch_size) {
    const std::size_t end = std::min(positions.size(), start + options.batch_size);
    batch.clear();
    for (std::size_t k = start; k < end; ++k) {
      GrayImage occluded = image;
      const auto [x0, y0] = positions[k];
      for (std::size_t y = y0; y < y0 + patch; ++y) {
        for (std::size_t x = x0; x < x0 + patch; ++x) occluded.at(x, y) = fill;
      }
      batch.push_back(std::move(occluded));
    }
    const Tensor probs = model.predict(images_tensor(batch));
    for (std::size_t k = start; k < end; ++k) {
      const double delta = p0 - static_cast<double>(probs[(k - start) * probs.dim(1) + static_cast<std::size_t>(target)]);
      const auto [x0, y0] = positions[k];
      for (std::size_t y = y0; y < y0 + patch; ++y) {
        for (std::size_t x = x0; x < x0 + patch; ++x) {
          sum[y * image.width + x] += delta;
          ++coverage[y * image.width + x];
        }
      }
    }
  }

  Heatmap map;
  map.width = image.width;
  map.height = image.height;
  map.target = static_cast<Emotion>(target);
  map.method = HeatmapMethod::kOcclusion;
  map.values.resize(sum.size());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    map.values[i] = coverage[i] ? sum[i] / static_cast<double>(coverage[i]) : 0.0;
  }
  return map;
}

std::vector<double> logit_input_gradient(const ModelGraph& model, const GrayImage& image, Emotion target) {
  Tape tape;
  const Tensor logits = model.infer_logits(image_tensor(image), &tape);
  const auto t = static_cast<std::size_t>(emotion_index(target));
  if (t >= logits.dim(1)) throw ArgumentError("saliency: target class outside the model outputs");
  Tensor seed(logits.shape());
  seed[t] = 1;
  const Gradients grads = model.backward(tape, seed);
  return std::vector<double>(grads.input_grad.values().begin(), grads.input_grad.values().end());
}

Heatmap saliency_map(const ModelGraph& model, const GrayImage& image, Emotion target) {
  Heatmap map;
  map.width = image.width;
  map.height = image.height;
  map.target = target;
  map.method = HeatmapMethod::kSaliency;
  map.values = logit_input_gradient(model, image, target);
  for (auto& v : map.values) v = std::abs(v);
  return map;
}

std::array<std::uint8_t, 3> heat_color(double t) {
  static constexpr double kCold[3] = {59, 76, 192};
  static constexpr double kMid[3] = {221, 221, 221};
  static constexpr double kWarm[3] = {180, 4, 38};
  t = std::clamp(t, 0.0, 1.0);
  const double* a = t < 0.5 ? kCold : kMid;
  const double* b = t < 0.5 ? kMid : kWarm;
  const double u = t < 0.5 ? t * 2.0 : (t - 0.5) * 2.0;
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) rgb[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(std::lerp(a[c], b[c], u)));
  return rgb;
}

Image render_heatmap(const Heatmap& heatmap, const GrayImage& image, const RenderOptions& options) {
  if (heatmap.width != image.width || heatmap.height != image.height) {
    throw ShapeError("render_heatmap: heatmap and image sizes differ");
  }
  const auto [lo_it, hi_it] = std::minmax_element(heatmap.values.begin(), heatmap.values.end());
  const double lo = heatmap.values.empty() ? 0.0 : *lo_it;
  const double hi = heatmap.values.empty() ? 0.0 : *hi_it;
  Image out;
  out.width = image.width;
  out.height = image.height;
  out.channels = 3;
  out.pixels.resize(image.width * image.height * 3);
  for (std::size_t i = 0; i < heatmap.values.size(); ++i) {
    const double t = hi > lo ? (heatmap.values[i] - lo) / (hi - lo) : 0.5;
    const auto rgb = heat_color(t);
    const double gray = 255.0 * std::clamp(static_cast<double>(image.values[i]), 0.0, 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = (1.0 - options.alpha) * gray + options.alpha * rgb[c];
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

void render_heatmap(const Heatmap& heatmap, const GrayImage& image, const std::filesystem::path& out_path,
                    const RenderOptions& options) {
  write_png(out_path, render_heatmap(heatmap, image, options));
}

std::string heatmap_json(const Heatmap& heatmap) {
  nlohmann::ordered_json j;
  j["method"] = heatmap.method == HeatmapMethod::kOcclusion ? "occlusion" : "saliency";
  j["target"] = emotion_name(heatmap.target);
  j["width"] = heatmap.width;
  j["height"] = heatmap.height;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t y = 0; y < heatmap.height; ++y) {
    rows.push_back(std::vector<double>(heatmap.values.begin() + static_cast<std::ptrdiff_t>(y * heatmap.width),
                                       heatmap.values.begin() + static_cast<std::ptrdiff_t>((y + 1) * heatmap.width)));
  }
  j["values"] = rows;
  return j.dump();
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
