#pragma once

#include <cstddef>
#include <span>

// Dense GEMM kernels, all of the accumulate form C += op(A) * op(B).
//
// `serial` is the reference. `parallel` partitions output rows across OpenMP
// threads in groups of kRowBlock; each output row is produced by the same
// instruction sequence in both variants, so results are bitwise identical
// regardless of thread count.
namespace milkt::kernels {

inline constexpr std::size_t kRowBlock = 4;
inline constexpr std::size_t kDepthBlock = 128;
inline constexpr std::size_t kColBlock = 256;

namespace serial {
// C[r x c] += A[r x k] * B[k x c]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);
// C[k x c] += A[r x k]^T * B[r x c]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);
// C[r x c] += A[r x k] * B[c x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);
}  // namespace serial

namespace parallel {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);
}  // namespace parallel

// Dispatchers: parallel when OpenMP is enabled and the problem is large enough.
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t r, std::size_t k, std::size_t cols);

}  // namespace milkt::kernels
