#pragma once

#include <cstddef>
#include <span>

#include "fer/config.hpp"

namespace fer {
inline namespace FER_PRECISION_NS {

// Row-major C[m x n] (+)= A[m x k] * B[k x n].
//
// Every output element accumulates over k in ascending order, independent of
// m, n, and blocking, so a row of C depends only on the matching row of A.
// Batch composition therefore never changes per-sample results.
void gemm(std::size_t m, std::size_t n, std::size_t k,
          const Scalar* a, std::size_t lda,
          const Scalar* b, std::size_t ldb,
          Scalar* c, std::size_t ldc, bool accumulate);

/// dst[cols x rows] = transpose(src[rows x cols]).
void transpose(const Scalar* src, std::size_t rows, std::size_t cols, Scalar* dst);

}  // namespace FER_PRECISION_NS
}  // namespace fer
