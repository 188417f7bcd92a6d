#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fer/errors.hpp"
#include "fer/layers.hpp"
#include "fer/rng.hpp"
#include "oracles.hpp"

namespace fer {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

std::vector<double> as_double(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> abs_values(std::vector<double> v) {
  for (auto& x : v) x = std::abs(x);
  return v;
}

// Float32 accumulation error is proportional to sum |x*w| rather than to the
// (possibly cancelled) result, so the 32-bit comparison is scaled by that
// magnitude. The strict elementwise comparison runs in the 64-bit suite.
double conv_scaled_error(const oracle::Conv2dCase& p, const Tensor& x, const Tensor& w, const Tensor& b,
                         const Tensor& y) {
  const auto ref = oracle::conv2d(p, as_double(x), as_double(w), as_double(b));
  const auto mag = oracle::conv2d(p, abs_values(as_double(x)), abs_values(as_double(w)), abs_values(as_double(b)));
  if (y.size() != ref.size()) return INFINITY;
  double worst = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]) / mag[i]);
  return worst;
}

// ---- conv2d ---------------------------------------------------------------

TEST(Conv2d, IdentityKernelReproducesInput) {
  Rng rng(1);
  const Tensor x = random_tensor({1, 1, 3, 3}, rng);
  const Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, 1), Tensor({1}), Padding::kValid, 1);
  EXPECT_EQ(y, x);
}

TEST(Conv2d, AllOnesKernelSumsEntries) {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = conv2d(x, Tensor({1, 1, 2, 2}, 1), Tensor({1}), Padding::kValid, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 10);
}

TEST(Conv2d, SamePaddingPutsExtraPixelBottomRight) {
  const ConvGeometry g = conv_geometry(6, 6, 4, 4, Padding::kSame, 1);  // total pad 3
  EXPECT_EQ(g.out_h, 6u);
  EXPECT_EQ(g.pad_top, 1u);
  EXPECT_EQ(g.pad_left, 1u);
  const ConvGeometry s = conv_geometry(7, 5, 3, 3, Padding::kSame, 2);
  EXPECT_EQ(s.out_h, 4u);  // ceil(7/2)
  EXPECT_EQ(s.out_w, 3u);  // ceil(5/2)
}

TEST(Conv2d, SpecExampleMatchesNaiveOracle) {
  Rng rng(2);
  const oracle::Conv2dCase p{2, 3, 8, 8, 4, 5, 5, 1, true};
  const Tensor x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({4, 3, 5, 5}, rng), b = random_tensor({4}, rng);
  const Tensor y = conv2d(x, w, b, Padding::kSame, 1);
  EXPECT_LT(conv_scaled_error(p, x, w, b, y), 1e-5);
}

TEST(Conv2d, RandomShapesMatchNaiveOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    oracle::Conv2dCase p{};
    p.n = 1 + rng.below(3);
    p.c = 1 + rng.below(4);
    p.h = 2 + rng.below(12);
    p.w = 2 + rng.below(12);
    p.f = 1 + rng.below(5);
    p.kh = 1 + rng.below(std::min<std::size_t>(p.h, 5));
    p.kw = 1 + rng.below(std::min<std::size_t>(p.w, 5));
    p.stride = 1 + static_cast<int>(rng.below(3));
    p.same = rng.bernoulli(0.5);
    const Tensor x = random_tensor({p.n, p.c, p.h, p.w}, rng);
    const Tensor w = random_tensor({p.f, p.c, p.kh, p.kw}, rng);
    const Tensor b = random_tensor({p.f}, rng);
    const Tensor y = conv2d(x, w, b, p.same ? Padding::kSame : Padding::kValid, p.stride);
    EXPECT_LT(conv_scaled_error(p, x, w, b, y), 1e-5) << "trial " << trial;
  }
}

TEST(Conv2d, LinearInInput) {
  Rng rng(4);
  const Tensor x = random_tensor({2, 2, 7, 7}, rng), y = random_tensor({2, 2, 7, 7}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng), zero({3});
  const double a = 0.7, c = -1.3;
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = static_cast<Scalar>(a * x[i] + c * y[i]);
  const Tensor lhs = conv2d(mix, w, zero, Padding::kSame, 1);
  const Tensor cx = conv2d(x, w, zero, Padding::kSame, 1), cy = conv2d(y, w, zero, Padding::kSame, 1);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * cx[i] + c * cy[i], 1e-5);
}

TEST(Conv2d, ShapeErrors) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), Padding::kSame, 1), ShapeError);
  EXPECT_THROW(conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1}), Padding::kValid, 1), ShapeError);
  EXPECT_THROW(conv2d(Tensor({1, 1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({1}), Padding::kValid, 0), ArgumentError);
}

// ---- maxpool -------------------------------------------------------------

TEST(MaxPool, ConstantInputGivesConstantOutput) {
  const PoolOutput out = maxpool2d(Tensor({1, 2, 7, 7}, 0.25f), 3, 2, true);
  for (Scalar v : out.output.values()) EXPECT_EQ(v, 0.25f);
}

TEST(MaxPool, SpecExampleAndBackwardRouting) {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto out = maxpool2d(x, 2, 2, false);
  EXPECT_EQ(out.output.size(), 1u);
  EXPECT_EQ(out.output[0], 4);
  const Tensor g = maxpool2d_backward(x.shape(), out.argmax, Tensor({1, 1, 1, 1}, 1));
  EXPECT_EQ(g.storage(), (std::vector<Scalar>{0, 0, 0, 1}));
}

TEST(MaxPool, CeilModeChainEndsAtSix) {
  std::size_t s = 48;
  for (int stage = 0; stage < 3; ++stage) s = pool_output_size(s, 3, 2, true);
  EXPECT_EQ(s, 6u);
  EXPECT_EQ(pool_output_size(48, 3, 2, false), 23u);
}

TEST(MaxPool, MatchesOracleAndConservesGradient) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(3)), s = 1 + static_cast<int>(rng.below(3));
    const bool ceil_mode = rng.bernoulli(0.5);
    const std::size_t h = k + rng.below(8), w = k + rng.below(8);
    const Tensor x = random_tensor({2, 2, h, w}, rng);
    const auto out = maxpool2d(x, k, s, ceil_mode);
    std::size_t oh = 0, ow = 0;
    const auto ref = oracle::maxpool(2, 2, h, w, k, s, ceil_mode, as_double(x), &oh, &ow);
    ASSERT_EQ(out.output.shape(), (Shape{2, 2, oh, ow}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(out.output[i], static_cast<Scalar>(ref[i]));
    const Tensor up = random_tensor(out.output.shape(), rng);
    const Tensor g = maxpool2d_backward(x.shape(), out.argmax, up);
    const double up_sum = std::accumulate(up.values().begin(), up.values().end(), 0.0);
    const double g_sum = std::accumulate(g.values().begin(), g.values().end(), 0.0);
    EXPECT_NEAR(g_sum, up_sum, 1e-4);
  }
}

TEST(MaxPool, TiesRouteToFirstOccurrence) {
  const Tensor x({1, 1, 2, 2}, 1.0f);
  const auto out = maxpool2d(x, 2, 2, false);
  const Tensor g = maxpool2d_backward(x.shape(), out.argmax, Tensor({1, 1, 1, 1}, 1));
  EXPECT_EQ(g.storage(), (std::vector<Scalar>{1, 0, 0, 0}));
}

TEST(MaxPool, RejectsNonPositiveKernel) {
  EXPECT_THROW(maxpool2d(Tensor({1, 1, 4, 4}), 0, 1, false), ArgumentError);
  EXPECT_THROW(maxpool2d(Tensor({1, 1, 4, 4}), 2, 0, false), ArgumentError);
}

// ---- dense ---------------------------------------------------------------

TEST(Dense, IdentityWeights) {
  Rng rng(6);
  const Tensor x = random_tensor({3, 4}, rng);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1;
  EXPECT_EQ(dense(x, eye, Tensor({4})), x);
}

TEST(Dense, HandArithmetic) {
  const Tensor y = dense(Tensor({1, 2}, {2, 3}), Tensor({2, 2}, {1, 1, 1, -1}), Tensor({2}));
  EXPECT_EQ(y.storage(), (std::vector<Scalar>{5, -1}));
}

TEST(Dense, MatchesOracle) {
  Rng rng(7);
  const Tensor x = random_tensor({5, 13}, rng), w = random_tensor({13, 6}, rng), b = random_tensor({6}, rng);
  const auto ref = oracle::dense(5, 13, 6, as_double(x), as_double(w), as_double(b));
  EXPECT_LT(oracle::max_rel_diff(as_double(dense(x, w, b)), ref, 1e-3), 1e-5);
}

TEST(Dense, DimensionMismatch) {
  EXPECT_THROW(dense(Tensor({1, 3}), Tensor({2, 2}), Tensor({2})), ShapeError);
}

// ---- batchnorm -------------------------------------------------------------

void channel_moments(const Tensor& t, std::size_t c, double* mean, double* var) {
  const std::size_t n = t.dim(0), ch = t.dim(1), inner = t.size() / (n * ch);
  double s = 0, sq = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < inner; ++j) {
      const double v = t[(i * ch + c) * inner + j];
      s += v;
      sq += v * v;
    }
  const double m = static_cast<double>(n * inner);
  *mean = s / m;
  *var = sq / m - *mean * *mean;
}

TEST(BatchNorm, TrainModeStandardizes) {
  Rng rng(8);
  const Tensor x = random_tensor({6, 3, 4, 4}, rng, -3, 5);
  BatchNormStats running{Tensor({3}), Tensor({3}, 1)};
  const auto out = batchnorm(x, Tensor({3}, 1), Tensor({3}), Mode::kTrain, running);
  for (std::size_t c = 0; c < 3; ++c) {
    double m, v;
    channel_moments(out.output, c, &m, &v);
    EXPECT_NEAR(m, 0, 1e-6);
    EXPECT_NEAR(v, 1, 1e-4);
  }
}

TEST(BatchNorm, AffineOnStandardizedBatch) {
  Rng rng(9);
  const Tensor x = random_tensor({8, 2}, rng, -2, 2);
  BatchNormStats running{Tensor({2}), Tensor({2}, 1)};
  const auto out = batchnorm(x, Tensor({2}, 2), Tensor({2}, 3), Mode::kTrain, running);
  for (std::size_t c = 0; c < 2; ++c) {
    double m, v;
    channel_moments(out.output, c, &m, &v);
    EXPECT_NEAR(m, 3, 1e-5);
    EXPECT_NEAR(v, 4, 1e-3);
  }
}

TEST(BatchNorm, InferWithBatchStatsMatchesTrain) {
  Rng rng(10);
  const Tensor x = random_tensor({5, 2, 3, 3}, rng);
  const Tensor gamma = random_tensor({2}, rng, 0.5, 2), beta = random_tensor({2}, rng);
  BatchNormStats running{Tensor({2}), Tensor({2}, 1)};
  const auto train = batchnorm(x, gamma, beta, Mode::kTrain, running);
  BatchNormStats own{Tensor({2}), Tensor({2})};
  for (std::size_t c = 0; c < 2; ++c) {
    double m, v;
    channel_moments(x, c, &m, &v);
    own.mean[c] = static_cast<Scalar>(m);
    own.var[c] = static_cast<Scalar>(v);
  }
  const auto infer = batchnorm(x, gamma, beta, Mode::kInfer, own);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(infer.output[i], train.output[i], 1e-5);
}

TEST(BatchNorm, RunningStatsUseMomentumAndBiasedVariance) {
  const Tensor x({4, 1}, {1, 2, 3, 6});  // mean 3, biased var 3.5
  BatchNormStats running{Tensor({1}, 1), Tensor({1}, 2)};
  batchnorm(x, Tensor({1}, 1), Tensor({1}), Mode::kTrain, running);
  EXPECT_NEAR(running.mean[0], 0.9 * 1 + 0.1 * 3, 1e-6);
  EXPECT_NEAR(running.var[0], 0.9 * 2 + 0.1 * 3.5, 1e-6);
}

TEST(BatchNorm, InferModeLeavesRunningStats) {
  BatchNormStats running{Tensor({1}, 0.5f), Tensor({1}, 2)};
  batchnorm(Tensor({3, 1}, {1, 2, 3}), Tensor({1}, 1), Tensor({1}), Mode::kInfer, running);
  EXPECT_EQ(running.mean[0], 0.5f);
  EXPECT_EQ(running.var[0], 2);
}

TEST(BatchNorm, SingleSampleZeroVarianceIsFinite) {
  BatchNormStats running{Tensor({2}), Tensor({2}, 1)};
  const auto out = batchnorm(Tensor({1, 2}, {3, -1}), Tensor({2}, 1), Tensor({2}), Mode::kTrain, running);
  for (Scalar v : out.output.values()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(v, 0);
  }
}

TEST(BatchNorm, ChannelMismatch) {
  BatchNormStats running{Tensor({2}), Tensor({2}, 1)};
  EXPECT_THROW(batchnorm(Tensor({2, 3}), Tensor({2}, 1), Tensor({2}), Mode::kTrain, running), ShapeError);
}

// ---- relu / dropout ------------------------------------------------------

TEST(Relu, ForwardBackwardExamples) {
  const Tensor x({1, 3}, {-1, 0, 2});
  EXPECT_EQ(relu(x).storage(), (std::vector<Scalar>{0, 0, 2}));
  EXPECT_EQ(relu_backward(x, Tensor({1, 3}, 1)).storage(), (std::vector<Scalar>{0, 0, 1}));
}

TEST(Relu, OutputsNonNegative) {
  Rng rng(11);
  const Tensor y = relu(random_tensor({100}, rng));
  for (Scalar v : y.values()) EXPECT_GE(v, 0);
}

TEST(Dropout, RateZeroAndInferAreIdentity) {
  Rng rng(12);
  const Tensor x = random_tensor({4, 8}, rng);
  EXPECT_EQ(dropout(x, 0, Mode::kTrain, 1).output, x);
  EXPECT_EQ(dropout(x, 0, Mode::kInfer, 1).output, x);
  const auto infer = dropout(x, 0.5f, Mode::kInfer, 1);
  EXPECT_EQ(infer.output, x);
  EXPECT_TRUE(infer.mask.empty());
}

TEST(Dropout, SurvivorsScaledExactly) {
  Rng rng(13);
  const Tensor x = random_tensor({1, 1000}, rng, 0.1, 1);
  const auto out = dropout(x, 0.5f, Mode::kTrain, 99);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (out.mask[i]) {
      EXPECT_EQ(out.output[i], 2 * x[i]);
    } else {
      EXPECT_EQ(out.output[i], 0);
    }
  }
}

TEST(Dropout, SurvivorFractionWithinThreeSigma) {
  const double rate = 0.3;
  const std::size_t n = 20000;
  const auto out = dropout(Tensor({1, n}, 1), static_cast<Scalar>(rate), Mode::kTrain, 7);
  std::size_t kept = 0;
  double ratio_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.mask[i]) {
      ++kept;
      ratio_sum += out.output[i];
    }
  }
  const double p = 1 - rate, sigma = std::sqrt(n * p * rate);
  EXPECT_NEAR(static_cast<double>(kept), n * p, 3 * sigma);
  EXPECT_NEAR(ratio_sum / kept, 1 / p, 1e-6);
}

TEST(Dropout, SeedDeterminesMask) {
  const Tensor x({1, 64}, 1);
  EXPECT_EQ(dropout(x, 0.5f, Mode::kTrain, 5).mask, dropout(x, 0.5f, Mode::kTrain, 5).mask);
  EXPECT_NE(dropout(x, 0.5f, Mode::kTrain, 5).mask, dropout(x, 0.5f, Mode::kTrain, 6).mask);
}

TEST(Dropout, RateOneRejected) { EXPECT_THROW(dropout(Tensor({1, 2}), 1, Mode::kTrain, 0), ArgumentError); }

// ---- softmax / cross-entropy ---------------------------------------------

TEST(SoftmaxCrossEntropy, UniformLogits) {
  const std::vector<int> labels{3};
  const auto r = softmax_cross_entropy(Tensor({1, 7}, 0.5f), labels);
  for (Scalar p : r.probs.values()) EXPECT_NEAR(p, 1.0 / 7, 1e-7);
  EXPECT_NEAR(r.loss, std::log(7.0), 1e-6);
}

TEST(SoftmaxCrossEntropy, LargeMarginIsStable) {
  Tensor logits({1, 7});
  logits[2] = 1000;
  const std::vector<int> labels{2};
  const auto r = softmax_cross_entropy(logits, labels);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_LT(r.loss, 1e-6);
}

TEST(SoftmaxCrossEntropy, UnitWeightsEqualUnweightedExactly) {
  Rng rng(14);
  const Tensor logits = random_tensor({16, 7}, rng, -4, 4);
  std::vector<int> labels(16);
  for (auto& l : labels) l = static_cast<int>(rng.below(7));
  const std::vector<Scalar> ones(7, 1);
  const auto a = softmax_cross_entropy(logits, labels);
  const auto b = softmax_cross_entropy(logits, labels, ones);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.logits_grad, b.logits_grad);
}

TEST(SoftmaxCrossEntropy, RowsSumToOne) {
  Rng rng(15);
  const Tensor p = softmax(random_tensor({10, 7}, rng, -20, 20));
  for (std::size_t i = 0; i < 10; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GT(p[i * 7 + j], 0);
      EXPECT_LT(p[i * 7 + j], 1);
      s += p[i * 7 + j];
    }
    EXPECT_NEAR(s, 1, 1e-6);
  }
}

TEST(SoftmaxCrossEntropy, LabelOutOfRange) {
  const std::vector<int> bad{7};
  EXPECT_THROW(softmax_cross_entropy(Tensor({1, 7}), bad), ArgumentError);
}

}  // namespace
}  // namespace fer
