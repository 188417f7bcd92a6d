#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fer/errors.hpp"
#include "fer/eval.hpp"
#include "fer/interpret.hpp"
#include "fer/rng.hpp"
#include "json.hpp"

namespace fer {
namespace {

GrayImage random_image(std::uint64_t seed) {
  Rng rng(seed);
  GrayImage g(48, 48);
  for (auto& v : g.values) v = static_cast<Scalar>(rng.uniform());
  return g;
}

TEST(OcclusionOffsets, CoversEveryPixelWithFlushFinalPatch) {
  const auto a = occlusion_offsets(48, 8, 4);
  ASSERT_EQ(a.size(), 11u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], 4 * i);
  EXPECT_EQ(occlusion_offsets(50, 8, 4), (std::vector<std::size_t>{0, 4, 8, 12, 16, 20, 24, 28, 32, 36, 40, 42}));
  EXPECT_EQ(occlusion_offsets(10, 8, 4), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(occlusion_offsets(8, 8, 4), (std::vector<std::size_t>{0}));
}

TEST(Occlusion, ConstantPredictorGivesZeroMaps) {
  ModelGraph m = ModelGraph::build(Arch::kFiveLayer, 3);
  m.layers()[0].params[0].value.fill(0);  // first conv ignores the input
  const GrayImage g = random_image(1);
  const Heatmap occ = occlusion_map(m, g);
  EXPECT_EQ(occ.width, 48u);
  EXPECT_EQ(occ.height, 48u);
  for (double v : occ.values) EXPECT_EQ(v, 0.0);
  const Heatmap sal = saliency_map(m, g, Emotion::kHappy);
  for (double v : sal.values) EXPECT_EQ(v, 0.0);
}

TEST(Occlusion, FillMatchingTheImageIsANoOp) {
  const ModelGraph m = ModelGraph::build(Arch::kFiveLayer, 4);
  const GrayImage g(48, 48, Scalar(0.5));
  for (double v : occlusion_map(m, g).values) EXPECT_EQ(v, 0.0);
}

// A network whose target logit reads exactly one pixel: the occlusion map has
// a closed form in terms of how many patches cover that pixel.
TEST(Occlusion, SinglePixelLinearModelMatchesClosedForm) {
  using S = LayerSpec;
  ModelGraph m(Arch::kCustom, {S::flatten(), S::dense(7)}, {1, 48, 48}, 9);
  Tensor& w = m.layers()[1].params[0].value;  // 2304 x 7
  w.fill(0);
  m.layers()[1].params[1].value.fill(0);
  const std::size_t px = 21, py = 10, target = 3;
  const double weight = 4.0;
  w[(py * 48 + px) * 7 + target] = static_cast<Scalar>(weight);

  const GrayImage g = random_image(2);
  auto prob = [&](double pixel) {
    const double e = std::exp(weight * pixel);
    return e / (e + 6.0);
  };
  const double drop = prob(g.at(px, py)) - prob(0.5);

  OcclusionOptions opt;
  opt.target = emotion_from_index(static_cast<int>(target));
  const Heatmap map = occlusion_map(m, g, opt);
  auto covers = [](std::size_t o, std::size_t v) { return v >= o && v < o + 8; };
  double worst = 0;
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x) {
      std::size_t total = 0, hits = 0;
      for (std::size_t oy = 0; oy <= 40; oy += 4)
        for (std::size_t ox = 0; ox <= 40; ox += 4) {
          if (!covers(ox, x) || !covers(oy, y)) continue;
          ++total;
          hits += covers(ox, px) && covers(oy, py);
        }
      const double expected = drop * static_cast<double>(hits) / static_cast<double>(total);
      worst = std::max(worst, std::abs(map.at(x, y) - expected));
    }
  EXPECT_LT(worst, 1e-6);
  EXPECT_GT(std::abs(map.at(px, py)), 1e-3);
  EXPECT_EQ(map.at(0, 47), 0.0);
}

TEST(Occlusion, DeltasBoundedAndDefaultTargetIsPrediction) {
  const ModelGraph m = ModelGraph::build(Arch::kFiveLayer, 5);
  const GrayImage g = random_image(3);
  const Heatmap map = occlusion_map(m, g);
  EXPECT_EQ(map.target, emotion_from_index(argmax(predict_single(m, g))));
  for (double v : map.values) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_TRUE(std::any_of(map.values.begin(), map.values.end(), [](double v) { return v != 0.0; }));
}

TEST(Saliency, NonNegativeAndAbsoluteOfSignedGradient) {
  const ModelGraph m = ModelGraph::build(Arch::kFiveLayer, 6);
  const GrayImage g = random_image(4);
  const Heatmap sal = saliency_map(m, g, Emotion::kSurprise);
  const auto grad = logit_input_gradient(m, g, Emotion::kSurprise);
  ASSERT_EQ(sal.values.size(), 48u * 48u);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    EXPECT_GE(sal.values[i], 0.0);
    EXPECT_EQ(sal.values[i], std::abs(grad[i]));
  }
}

TEST(Render, FlatHeatmapIsUniformMidColor) {
  Heatmap h;
  h.width = h.height = 48;
  h.values.assign(48 * 48, 0.0);
  const GrayImage g(48, 48, Scalar(0.5));
  const Image img = render_heatmap(h, g);
  ASSERT_EQ(img.width, 48u);
  ASSERT_EQ(img.height, 48u);
  ASSERT_EQ(img.channels, 3u);
  const auto mid = heat_color(0.5);
  for (std::size_t c = 0; c < 3; ++c) {
    const double expected = 0.4 * 127.5 + 0.6 * mid[c];
    EXPECT_EQ(img.pixels[c], static_cast<std::uint8_t>(std::lround(expected)));
  }
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_EQ(img.pixels[i], img.pixels[i % 3]);
}

TEST(Render, RampEndpointsAndSizeMismatch) {
  EXPECT_EQ(heat_color(0.0), (std::array<std::uint8_t, 3>{59, 76, 192}));
  EXPECT_EQ(heat_color(1.0), (std::array<std::uint8_t, 3>{180, 4, 38}));
  EXPECT_EQ(heat_color(-3.0), heat_color(0.0));
  Heatmap h;
  h.width = h.height = 4;
  h.values.assign(16, 0.0);
  EXPECT_THROW(render_heatmap(h, GrayImage(5, 4)), ShapeError);
}

TEST(Render, InvariantToPositiveScaling) {
  const ModelGraph m = ModelGraph::build(Arch::kFiveLayer, 7);
  const GrayImage g = random_image(5);
  const Heatmap base = saliency_map(m, g, Emotion::kAngry);
  const Image ref = render_heatmap(base, g);
  for (double k : {2.0, 0.25, 1024.0}) {
    Heatmap scaled = base;
    for (auto& v : scaled.values) v *= k;
    EXPECT_EQ(render_heatmap(scaled, g).pixels, ref.pixels) << "scale " << k;
  }
}

TEST(Render, WritesPngAndJson) {
  const ModelGraph m = ModelGraph::build(Arch::kFiveLayer, 8);
  const GrayImage g = random_image(6);
  const Heatmap h = saliency_map(m, g, Emotion::kNeutral);
  const auto path = std::filesystem::temp_directory_path() / "fer_heatmap_test.png";
  render_heatmap(h, g, path);
  const Image back = read_image(path);
  EXPECT_EQ(back.width, 48u);
  EXPECT_EQ(back.height, 48u);
  EXPECT_EQ(back.pixels, render_heatmap(h, g).pixels);
  std::filesystem::remove(path);

  const auto j = nlohmann::json::parse(heatmap_json(h));
  EXPECT_EQ(j["method"], "saliency");
  EXPECT_EQ(j["target"], "Neutral");
  ASSERT_EQ(j["values"].size(), 48u);
  EXPECT_DOUBLE_EQ(j["values"][3][7].get<double>(), h.at(7, 3));
}

}  // namespace
}  // namespace fer
