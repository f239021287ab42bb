#pragma once

#include <cstddef>

namespace planlm::ad::kernels {

// Row-major, accumulating (C += ...). Serial and order-deterministic.

/// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
/// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);
/// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c);

float dot(const float* a, const float* b, std::size_t n);
/// y += alpha * x
void axpy(float alpha, const float* x, float* y, std::size_t n);

}  // namespace planlm::ad::kernels
