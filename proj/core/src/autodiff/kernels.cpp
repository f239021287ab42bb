#include "planlm/autodiff/kernels.hpp"

#include <cmath>
#include <cstring>
#include <vector>

// The vector helpers are internal, so the AVX argument-passing ABI note
// does not apply.
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC diagnostic ignored "-Wpsabi"
#endif

namespace planlm::ad::kernels {

void axpy(float alpha, const float* __restrict x, float* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

float dot(const float* __restrict a, const float* __restrict b, std::size_t n) {
  // Eight independent lanes let the compiler vectorize without reassociation flags.
  float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  float s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
            ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

namespace {

using v8 = float __attribute__((vector_size(32)));

inline v8 load8(const float* p) {
  v8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void add_store8(float* p, v8 v) {
  v8 cur = load8(p);
  cur += v;
  std::memcpy(p, &cur, sizeof cur);
}

// C[0..MR, 0..16] += A B for one register tile. Every output element is a
// sequential sum over p starting from zero, in vector lanes here and in the
// scalar tail below, so a row gets the same bits whether it is computed alone
// or inside a batch.
template <std::size_t MR>
inline void tile16(std::size_t n, std::size_t k, const float* __restrict a, const float* __restrict b,
                   float* __restrict c) {
  v8 acc[MR][2] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const v8 b0 = load8(b + p * n);
    const v8 b1 = load8(b + p * n + 8);
    for (std::size_t r = 0; r < MR; ++r) {
      const float av = a[r * k + p];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    add_store8(c + r * n, acc[r][0]);
    add_store8(c + r * n + 8, acc[r][1]);
  }
}

template <std::size_t MR>
inline void tile1(std::size_t n, std::size_t k, const float* __restrict a, const float* __restrict b,
                  float* __restrict c) {
  float acc[MR] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const float bv = b[p * n];
    // Explicit fma: left to the compiler, contraction differs between the
    // MR=1 and MR=4 instantiations and rows would stop being batch-independent.
    for (std::size_t r = 0; r < MR; ++r) acc[r] = std::fma(a[r * k + p], bv, acc[r]);
  }
  for (std::size_t r = 0; r < MR; ++r) c[r * n] += acc[r];
}

template <std::size_t MR>
void row_block(std::size_t n, std::size_t k, const float* a, const float* b, float* c) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) tile16<MR>(n, k, a, b + j, c + j);
  for (; j < n; ++j) tile1<MR>(n, k, a, b + j, c + j);
}

std::vector<float> transpose(const float* x, std::size_t rows, std::size_t cols) {
  std::vector<float> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t q = 0; q < cols; ++q) t[q * rows + r] = x[r * cols + q];
  }
  return t;
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* __restrict a,
             const float* __restrict b, float* __restrict c) {
  constexpr std::size_t kMr = 4;
  std::size_t i = 0;
  for (; i + kMr <= m; i += kMr) row_block<kMr>(n, k, a + i * k, b, c + i * n);
  for (; i < m; ++i) row_block<1>(n, k, a + i * k, b, c + i * n);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* __restrict a,
             const float* __restrict b, float* __restrict c) {
  const auto bt = transpose(b, n, k);
  gemm_nn(m, n, k, a, bt.data(), c);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* __restrict a,
             const float* __restrict b, float* __restrict c) {
  const auto at = transpose(a, k, m);
  gemm_nn(m, n, k, at.data(), b, c);
}

}  // namespace planlm::ad::kernels
