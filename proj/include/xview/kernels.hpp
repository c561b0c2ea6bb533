#pragma once

#include <cstddef>
#include <vector>

namespace xview::detail {

// C (m x n) += A (m x k) * B (k x n), all row-major with explicit leading
// dimensions. Every C entry accumulates its k products in ascending order on
// top of its prior value, so a row of C never depends on the other rows that
// happen to be in the same call.
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                    std::size_t ldb, double* c, std::size_t ldc) {
  constexpr std::size_t TM = 4, TN = 8;
  std::size_t i = 0;
  for (; i + TM <= m; i += TM) {
    std::size_t j = 0;
    for (; j + TN <= n; j += TN) {
      double acc[TM][TN];
      for (std::size_t ii = 0; ii < TM; ++ii)
        for (std::size_t jj = 0; jj < TN; ++jj) acc[ii][jj] = c[(i + ii) * ldc + j + jj];
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * ldb + j;
        for (std::size_t ii = 0; ii < TM; ++ii) {
          const double av = a[(i + ii) * lda + p];
          for (std::size_t jj = 0; jj < TN; ++jj) acc[ii][jj] += av * brow[jj];
        }
      }
      for (std::size_t ii = 0; ii < TM; ++ii)
        for (std::size_t jj = 0; jj < TN; ++jj) c[(i + ii) * ldc + j + jj] = acc[ii][jj];
    }
    if (j < n) {
      const std::size_t w = n - j;
      double acc[TM][TN];
      for (std::size_t ii = 0; ii < TM; ++ii)
        for (std::size_t jj = 0; jj < w; ++jj) acc[ii][jj] = c[(i + ii) * ldc + j + jj];
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * ldb + j;
        for (std::size_t ii = 0; ii < TM; ++ii) {
          const double av = a[(i + ii) * lda + p];
          for (std::size_t jj = 0; jj < w; ++jj) acc[ii][jj] += av * brow[jj];
        }
      }
      for (std::size_t ii = 0; ii < TM; ++ii)
        for (std::size_t jj = 0; jj < w; ++jj) c[(i + ii) * ldc + j + jj] = acc[ii][jj];
    }
  }
  for (; i < m; ++i) {
    std::size_t j = 0;
    for (; j + TN <= n; j += TN) {
      double acc[TN];
      for (std::size_t jj = 0; jj < TN; ++jj) acc[jj] = c[i * ldc + j + jj];
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * lda + p];
        const double* brow = b + p * ldb + j;
        for (std::size_t jj = 0; jj < TN; ++jj) acc[jj] += av * brow[jj];
      }
      for (std::size_t jj = 0; jj < TN; ++jj) c[i * ldc + j + jj] = acc[jj];
    }
    if (j < n) {
      const std::size_t w = n - j;
      double acc[TN];
      for (std::size_t jj = 0; jj < w; ++jj) acc[jj] = c[i * ldc + j + jj];
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * lda + p];
        const double* brow = b + p * ldb + j;
        for (std::size_t jj = 0; jj < w; ++jj) acc[jj] += av * brow[jj];
      }
      for (std::size_t jj = 0; jj < w; ++jj) c[i * ldc + j + jj] = acc[jj];
    }
  }
}

// rows x cols row-major -> cols x rows.
inline std::vector<double> transpose(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

}  // namespace xview::detail
