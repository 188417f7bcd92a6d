#include <gtest/gtest.h>

#include <cmath>

#include <set>

#include "fer/errors.hpp"
#include "fer/gemm.hpp"
#include "fer/rng.hpp"
#include "fer/tensor.hpp"

namespace fer {
namespace {

TEST(Tensor, SizeMatchesShapeProduct) {
  const Tensor t({2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.rank(), 4u);
  EXPECT_EQ(t.at(1, 2, 3, 4), 1.5f);
  EXPECT_EQ(shape_size({2, 3, 4, 5}), 120u);
}

TEST(Tensor, RejectsZeroExtentAndSizeMismatch) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<Scalar>(3)), ShapeError);
}

TEST(Tensor, DefaultIsEmpty) {
  const Tensor t;
  EXPECT_TRUE(t.empty());
  EXPECT_EQ(t.rank(), 0u);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t({2, 3});
  for (std::size_t i = 0; i < 6; ++i) t[i] = static_cast<Scalar>(i);
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.storage(), t.storage());
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(13), 13u);
  }
}

TEST(Rng, NormalMomentsAreStandard) {
  Rng r(11);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 20; ++a)
    for (std::uint64_t b = 0; b < 20; ++b) seen.insert(derive_seed(a, b));
  EXPECT_EQ(seen.size(), 400u);
}

// Naive triple loop in double as the oracle.
TEST(Gemm, MatchesNaiveProductOnRandomShapes) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.below(37), n = 1 + rng.below(70), k = 1 + rng.below(50);
    std::vector<Scalar> a(m * k), b(k * n), c(m * n, 5);
    for (auto& v : a) v = static_cast<Scalar>(rng.uniform(-1, 1));
    for (auto& v : b) v = static_cast<Scalar>(rng.uniform(-1, 1));
    const bool accumulate = trial % 2;
    gemm(m, n, k, a.data(), k, b.data(), n, c.data(), n, accumulate);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double ref = accumulate ? 5.0 : 0.0;
        for (std::size_t p = 0; p < k; ++p) ref += double(a[i * k + p]) * double(b[p * n + j]);
        EXPECT_NEAR(c[i * n + j], ref, 1e-4) << m << "x" << n << "x" << k;
      }
  }
}

TEST(Gemm, RowsIndependentOfBatchComposition) {
  Rng rng(5);
  // Shapes straddle the register-tile height, the panel width and the tail.
  const std::size_t shapes[][3] = {{9, 33, 40}, {17, 70, 13}, {3, 200, 7}, {26, 32, 64}, {1, 5, 300}};
  for (const auto& [m, n, k] : shapes) {
    std::vector<Scalar> a(m * k), b(k * n), full(m * n), single(n);
    for (auto& v : a) v = static_cast<Scalar>(rng.uniform(-1, 1));
    for (auto& v : b) v = static_cast<Scalar>(rng.uniform(-1, 1));
    gemm(m, n, k, a.data(), k, b.data(), n, full.data(), n, false);
    for (std::size_t i = 0; i < m; ++i) {
      gemm(1, n, k, a.data() + i * k, k, b.data(), n, single.data(), n, false);
      for (std::size_t j = 0; j < n; ++j) ASSERT_EQ(full[i * n + j], single[j]) << m << "x" << n << "x" << k;
    }
  }
}

#if defined(__FMA__)
// Each element is one ascending fused multiply-add chain, so a scalar chain
// reproduces it bit for bit, including on strided sub-matrices.
TEST(Gemm, BitExactAgainstScalarFmaChainOnStridedViews) {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.below(40), n = 1 + rng.below(100), k = 1 + rng.below(60);
    const std::size_t lda = k + rng.below(5), ldb = n + rng.below(5), ldc = n + rng.below(5);
    std::vector<Scalar> a(m * lda), b(k * ldb), c(m * ldc);
    for (auto* v : {&a, &b, &c})
      for (auto& e : *v) e = static_cast<Scalar>(rng.uniform(-1, 1));
    const std::vector<Scalar> c0 = c;
    gemm(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc, true);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        Scalar acc = c0[i * ldc + j];
        for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[i * lda + p], b[p * ldb + j], acc);
        ASSERT_EQ(c[i * ldc + j], acc) << m << "x" << n << "x" << k;
      }
      for (std::size_t j = n; j < ldc; ++j) ASSERT_EQ(c[i * ldc + j], c0[i * ldc + j]);  // padding untouched
    }
  }
}
#endif

TEST(Gemm, TransposeRoundTrips) {
  std::vector<Scalar> src(6), dst(6), back(6);
  for (int i = 0; i < 6; ++i) src[i] = static_cast<Scalar>(i);
  transpose(src.data(), 2, 3, dst.data());
  EXPECT_EQ(dst, (std::vector<Scalar>{0, 3, 1, 4, 2, 5}));
  transpose(dst.data(), 3, 2, back.data());
  EXPECT_EQ(back, src);
}

}  // namespace
}  // namespace fer
