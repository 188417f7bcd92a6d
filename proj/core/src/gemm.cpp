#include "fer/gemm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

namespace fer {
inline namespace FER_PRECISION_NS {
namespace {

// Contraction is left to the compiler only when there is nothing to contract;
// otherwise every kernel variant fuses explicitly so all of them round alike.
inline Scalar madd(Scalar a, Scalar b, Scalar acc) {
#if defined(__FMA__)
  return std::fma(a, b, acc);
#else
  return acc + a * b;
#endif
}

#if defined(__AVX512F__)
constexpr std::size_t kTileRows = 8;  // 16 of 32 vector registers hold the tile
#else
constexpr std::size_t kTileRows = 4;
#endif
constexpr std::size_t kTileCols = 128 / sizeof(Scalar);

// Register tile: R rows x W columns of C, accumulated over the whole k range.
template <std::size_t R, std::size_t W>
void tile_kernel(std::size_t k, const Scalar* __restrict a, std::size_t lda,
                 const Scalar* __restrict b, std::size_t ldb,
                 Scalar* __restrict c, std::size_t ldc) {
  Scalar acc[R][W];
  for (std::size_t r = 0; r < R; ++r) {
#pragma GCC unroll 32
    for (std::size_t j = 0; j < W; ++j) acc[r][j] = c[r * ldc + j];
  }
  for (std::size_t p = 0; p < k; ++p) {
    const Scalar* __restrict bp = b + p * ldb;
#pragma GCC unroll 8
    for (std::size_t r = 0; r < R; ++r) {
      const Scalar av = a[r * lda + p];
#pragma GCC unroll 32
      for (std::size_t j = 0; j < W; ++j) acc[r][j] = madd(av, bp[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
#pragma GCC unroll 32
    for (std::size_t j = 0; j < W; ++j) c[r * ldc + j] = acc[r][j];
  }
}

using TileFn = void (*)(std::size_t, const Scalar*, std::size_t, const Scalar*, std::size_t, Scalar*, std::size_t);

template <std::size_t... R>
constexpr std::array<TileFn, sizeof...(R)> make_tiles(std::index_sequence<R...>) {
  return {&tile_kernel<R + 1, kTileCols>...};
}
// kTiles[r - 1] handles r rows.
constexpr auto kTiles = make_tiles(std::make_index_sequence<kTileRows>{});

// Runs all row tiles of C against one column panel of B.
void panel(std::size_t m, std::size_t k, const Scalar* a, std::size_t lda, const Scalar* b, std::size_t ldb,
           Scalar* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; i += kTileRows) {
    const std::size_t rows = std::min(kTileRows, m - i);
    kTiles[rows - 1](k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  }
}

}  // namespace

// Every output element is a single chain of fused multiply-adds over p = 0..k-1
// starting from its initial value, whichever tile shape or packing computes it.
void gemm(std::size_t m, std::size_t n, std::size_t k, const Scalar* a, std::size_t lda,
          const Scalar* b, std::size_t ldb, Scalar* c, std::size_t ldc, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, Scalar(0));
  }
  if (k == 0 || m == 0 || n == 0) return;

  // Contiguous copies of B column panels: a fixed-stride walk down a wide B
  // thrashes cache sets, and a packed panel is reused by every row tile.
  thread_local std::vector<Scalar> packed;
  packed.resize(k * kTileCols);
  const bool pack_full = m > kTileRows;
  const std::size_t full_cols = n - n % kTileCols;
  for (std::size_t j = 0; j < full_cols; j += kTileCols) {
    if (!pack_full) {
      panel(m, k, a, lda, b + j, ldb, c + j, ldc);
      continue;
    }
    for (std::size_t p = 0; p < k; ++p) std::copy_n(b + p * ldb + j, kTileCols, packed.data() + p * kTileCols);
    panel(m, k, a, lda, packed.data(), kTileCols, c + j, ldc);
  }

  // Remaining columns: zero-padded panel, results staged through a full-width
  // buffer so only the real columns are written back.
  const std::size_t tail = n - full_cols;
  if (tail == 0) return;
  for (std::size_t p = 0; p < k; ++p) {
    std::copy_n(b + p * ldb + full_cols, tail, packed.data() + p * kTileCols);
    std::fill(packed.data() + p * kTileCols + tail, packed.data() + (p + 1) * kTileCols, Scalar(0));
  }
  thread_local std::vector<Scalar> stage;
  stage.resize(kTileRows * kTileCols);
  for (std::size_t i = 0; i < m; i += kTileRows) {
    const std::size_t rows = std::min(kTileRows, m - i);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(c + (i + r) * ldc + full_cols, tail, stage.data() + r * kTileCols);
    kTiles[rows - 1](k, a + i * lda, lda, packed.data(), kTileCols, stage.data(), kTileCols);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(stage.data() + r * kTileCols, tail, c + (i + r) * ldc + full_cols);
  }
}

void transpose(const Scalar* src, std::size_t rows, std::size_t cols, Scalar* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t cc = c0; cc < c1; ++cc) dst[cc * rows + r] = src[r * cols + cc];
      }
    }
  }
}

}  // namespace FER_PRECISION_NS
}  // namespace fer
