#pragma once

#include <cstddef>

namespace scopeformer::core {

// Dense row-major matrix products on raw buffers (float and double). C is
// overwritten and must not alias A or B.

/// C[m x n] = A[m x k] * B[k x n]
template <class T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n);

/// C[m x n] = A^T * B, with A stored [k x m] and B [k x n].
template <class T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n);

/// C[m x n] = A * B^T, with A stored [m x k] and B [n x k].
template <class T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n);

}  // namespace scopeformer::core
