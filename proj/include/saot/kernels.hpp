#pragma once

// Raw row-major dense kernels shared by the differentiable ops, the online
// filter solver, and the baseline correlators. No shape checks here.

#include <cstddef>

namespace saot::kernels {

// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

// C[m x n] (+)= A^T * B with A stored [k x m]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

// C[m x n] (+)= A * B^T with B stored [n x k]
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate);

// Zero-padded "same" patch extraction for odd kernels:
// cols[(i*w + j), ((di*kw + dj)*cin + ch)] = x[i + di - kh/2, j + dj - kw/2, ch]
template <typename T>
void im2col(const T* x, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh, std::size_t kw, T* cols);

// Adjoint of im2col: scatter-add patch gradients back into dx.
template <typename T>
void col2im_add(const T* cols, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh, std::size_t kw, T* dx);

}  // namespace saot::kernels
