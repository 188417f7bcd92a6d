#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fer/data.hpp"
#include "fer/image.hpp"
#include "fer/model.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

enum class HeatmapMethod { kOcclusion, kSaliency };

struct Heatmap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major, aligned to input pixels
  Emotion target = Emotion::kNeutral;
  HeatmapMethod method = HeatmapMethod::kOcclusion;

  double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

struct OcclusionOptions {
  int patch = 8;
  int stride = 4;
  double fill = 0.5;
  std::optional<Emotion> target;  // default: the model's own prediction
  std::size_t batch_size = 64;
};

/// Top-left patch offsets along one axis: 0, stride, ... while the patch
/// fits, plus a final offset flush with the far border if needed.
std::vector<std::size_t> occlusion_offsets(std::size_t extent, std::size_t patch, std::size_t stride);

/// Per pixel: mean over covering patch positions of p0 - p_occluded, where p
/// is the target-class probability.
Heatmap occlusion_map(const ModelGraph& model, const GrayImage& image,
                      const OcclusionOptions& options = {});

/// |d logit_target / d pixel| with infer-mode batchnorm and dropout.
Heatmap saliency_map(const ModelGraph& model, const GrayImage& image, Emotion target);
/// Signed input gradient underlying saliency_map.
std::vector<double> logit_input_gradient(const ModelGraph& model, const GrayImage& image,
                                         Emotion target);

struct RenderOptions {
  double alpha = 0.6;  // weight of the color ramp over the grayscale base
};

/// Diverging ramp: 0 -> blue, 0.5 -> neutral light gray, 1 -> red.
std::array<std::uint8_t, 3> heat_color(double t);

/// RGB overlay the size of the input. Heat values are rescaled to [min, max];
/// a flat heatmap maps entirely to the neutral mid color.
Image render_heatmap(const Heatmap& heatmap, const GrayImage& image, const RenderOptions& options = {});
void render_heatmap(const Heatmap& heatmap, const GrayImage& image,
                    const std::filesystem::path& out_path, const RenderOptions& options = {});

std::string heatmap_json(const Heatmap& heatmap);

}  // namespace FER_PRECISION_NS
}  // namespace fer
