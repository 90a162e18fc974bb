#include "milkt/kernels.hpp"

#include <algorithm>
#include <vector>

#include "milkt/parallel.hpp"

namespace milkt::kernels {
namespace {

constexpr std::size_t kParallelFlops = std::size_t{1} << 17;

bool worth_parallel(std::size_t r, std::size_t k, std::size_t c, std::size_t out_rows) {
  return max_threads() > 1 && out_rows >= 2 * kRowBlock && r * k * c >= kParallelFlops;
}

// Register tile: kRowBlock x kTileCols accumulators stay in vector registers
// across the whole depth loop. Element (i, j) of C receives a(i, p) * b(p, j)
// for p ascending, exactly as in the naive triple loop, so every caller that
// goes through these kernels sees the same rounding.
constexpr std::size_t kTileCols = 32;

// C[i.., j0..j0+kTileCols) += sum_p A(i, p) B(p, j), four rows. a_stride/a_step
// describe how A(i, p) is addressed: a[i * a_row + p * a_col].
inline void tile_4xw(const double* __restrict a, std::size_t a_row, std::size_t a_col,
                      const double* __restrict b, std::size_t b_row, double* __restrict c,
                      std::size_t c_row, std::size_t p0, std::size_t p1) {
  double acc[kRowBlock][kTileCols];
  for (std::size_t r = 0; r < kRowBlock; ++r)
    for (std::size_t j = 0; j < kTileCols; ++j) acc[r][j] = c[r * c_row + j];
  for (std::size_t p = p0; p < p1; ++p) {
    const double* bp = b + p * b_row;
    const double* ap = a + p * a_col;
    for (std::size_t r = 0; r < kRowBlock; ++r) {
      const double ar = ap[r * a_row];
      MILKT_PRAGMA(omp simd)
      for (std::size_t j = 0; j < kTileCols; ++j) acc[r][j] += ar * bp[j];
    }
  }
  for (std::size_t r = 0; r < kRowBlock; ++r)
    for (std::size_t j = 0; j < kTileCols; ++j) c[r * c_row + j] = acc[r][j];
}

// Rows [i0, i1) of C[? x cols] += A * B where A(i, p) = a[i * a_row + p * a_col]
// and B is row-major with `cols` columns; p runs over [0, depth).
// i0 must be a multiple of kRowBlock.
void rows_kernel(const double* __restrict a, std::size_t a_row, std::size_t a_col,
                 const double* __restrict b, double* __restrict c, std::size_t i0,
                 std::size_t i1, std::size_t depth, std::size_t cols) {
  const std::size_t jt = cols - cols % kTileCols;
  for (std::size_t k0 = 0; k0 < depth; k0 += kDepthBlock) {
    const std::size_t k1 = std::min(depth, k0 + kDepthBlock);
    for (std::size_t j0 = 0; j0 < cols; j0 += kColBlock) {
      const std::size_t j1 = std::min(cols, j0 + kColBlock);
      std::size_t i = i0;
      for (; i + kRowBlock <= i1; i += kRowBlock) {
        std::size_t j = j0;
        for (; j + kTileCols <= std::min(j1, jt); j += kTileCols) {
          tile_4xw(a + i * a_row, a_row, a_col, b + j, cols, c + i * cols + j, cols, k0, k1);
        }
        for (std::size_t r = i; r < i + kRowBlock; ++r) {
          double* cr = c + r * cols;
          for (std::size_t p = k0; p < k1; ++p) {
            const double ar = a[r * a_row + p * a_col];
            const double* bp = b + p * cols;
            for (std::size_t jj = j; jj < j1; ++jj) cr[jj] += ar * bp[jj];
          }
        }
      }
      for (; i < i1; ++i) {
        double* cr = c + i * cols;
        for (std::size_t p = k0; p < k1; ++p) {
          const double ar = a[i * a_row + p * a_col];
          const double* bp = b + p * cols;
          MILKT_PRAGMA(omp simd)
          for (std::size_t jj = j0; jj < j1; ++jj) cr[jj] += ar * bp[jj];
        }
      }
    }
  }
}

// Output rows [i0, i1) of C += A[r x k] * B[k x cols].
[[gnu::noinline]] void nn_rows(const double* a, const double* b, double* c, std::size_t i0,
                               std::size_t i1, std::size_t k, std::size_t cols) {
  rows_kernel(a, k, 1, b, c, i0, i1, k, cols);
}

// Output rows [i0, i1) of C[k x c] += A[r x k]^T * B[r x c].
[[gnu::noinline]] void tn_rows(const double* a, const double* b, double* c, std::size_t i0,
                               std::size_t i1, std::size_t r, std::size_t k, std::size_t cols) {
  rows_kernel(a, 1, k, b, c, i0, i1, r, cols);
}

// B[c x k] -> Bt[k x c], so A * B^T runs through the row-tiled kernel.
std::vector<double> transposed(const double* b, std::size_t cols, std::size_t k) {
  std::vector<double> bt(cols * k);
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * cols + j] = b[j * k + p];
  return bt;
}

// Each thread takes one contiguous range of kRowBlock-aligned output rows.
template <class RowKernel>
void split_rows(std::size_t out_rows, RowKernel&& rows) {
  const std::size_t blocks = (out_rows + kRowBlock - 1) / kRowBlock;
  MILKT_PRAGMA(omp parallel)
  {
    const std::size_t nt = static_cast<std::size_t>(team_size());
    const std::size_t t = static_cast<std::size_t>(team_index());
    const std::size_t b0 = blocks * t / nt;
    const std::size_t b1 = blocks * (t + 1) / nt;
    if (b0 < b1) rows(b0 * kRowBlock, std::min(out_rows, b1 * kRowBlock));
  }
}

}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  nn_rows(a.data(), b.data(), c.data(), 0, r, k, cols);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  tn_rows(a.data(), b.data(), c.data(), 0, k, r, k, cols);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  const std::vector<double> bt = transposed(b.data(), cols, k);
  nn_rows(a.data(), bt.data(), c.data(), 0, r, k, cols);
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  split_rows(r, [&](std::size_t i0, std::size_t i1) {
    nn_rows(a.data(), b.data(), c.data(), i0, i1, k, cols);
  });
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  split_rows(k, [&](std::size_t i0, std::size_t i1) {
    tn_rows(a.data(), b.data(), c.data(), i0, i1, r, k, cols);
  });
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  const std::vector<double> bt = transposed(b.data(), cols, k);
  split_rows(r, [&](std::size_t i0, std::size_t i1) {
    nn_rows(a.data(), bt.data(), c.data(), i0, i1, k, cols);
  });
}

}  // namespace parallel

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  if (worth_parallel(r, k, cols, r)) {
    parallel::gemm_nn(a, b, c, r, k, cols);
  } else {
    serial::gemm_nn(a, b, c, r, k, cols);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  if (worth_parallel(r, k, cols, k)) {
    parallel::gemm_tn(a, b, c, r, k, cols);
  } else {
    serial::gemm_tn(a, b, c, r, k, cols);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols) {
  if (worth_parallel(r, k, cols, r)) {
    parallel::gemm_nt(a, b, c, r, k, cols);
  } else {
    serial::gemm_nt(a, b, c, r, k, cols);
  }
}

}  // namespace milkt::kernels
