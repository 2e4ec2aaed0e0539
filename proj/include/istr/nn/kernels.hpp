#pragma once

#include <cstddef>

namespace istr::nn {

// C[M,N] = A[M,K] * B[K,N], row-major. Parallelized over rows of C; each
// output element is accumulated serially, so results are bitwise
// reproducible for any thread count.
void matmul(const float* a, const float* b, float* c, int m, int k, int n);

// C[M,N] = A[K,M]^T * B[K,N]
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n);

// C[M,N] = A[M,K] * B[N,K]^T
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n);

// 3x3 stride-1 same-padding im2col: x[C,H,W] -> col[C*9, H*W]
void im2col3(const float* x, float* col, int c, int h, int w);

namespace serial {
// Naive reference kernels kept for testing and benchmarking.
void matmul(const float* a, const float* b, float* c, int m, int k, int n);
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int n);
void matmul_nt(const float* a, const float* b, float* c, int m, int k, int n);
void im2col3(const float* x, float* col, int c, int h, int w);
}  // namespace serial

}  // namespace istr::nn
