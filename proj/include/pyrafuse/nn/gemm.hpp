#pragma once

#include <cstddef>
#include <vector>

#include "pyrafuse/parallel.hpp"

// Row-major dense kernels used by the convolution. Every kernel accumulates
// into C and parallelizes over rows of C only, so summation order is fixed.
namespace pyrafuse::gemm {

/// C[m x n] += A[m x k] * B[k x n]
template <class T>
void nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  parallel_for(m, n * k, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      T* crow = c + i * n;
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        if (av == T(0)) continue;
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

/// C[m x n] += A^T * B with A stored [k x m], B [k x n]
template <class T>
void tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  parallel_for(m, n * k, [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      T* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[p * m + i];
        if (av == T(0)) continue;
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

/// C[m x n] += A * B^T with A [m x k], B stored [n x k]
template <class T>
void nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  // Transpose B once so the inner loop is contiguous.
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  nn(m, n, k, a, bt.data(), c);
}

}  // namespace pyrafuse::gemm
