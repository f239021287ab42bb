#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "planlm/autodiff/tensor.hpp"

namespace planlm::ad {

// All ops treat a tensor as rows x cols over its trailing axis. Shape
// mismatches throw ValidationError naming both shapes.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
/// Elementwise sum; `b` may match `a` or a trailing suffix of its shape
/// (broadcast over the leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
/// tanh approximation.
Tensor gelu(const Tensor& x);
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& x, std::span<const int> rows);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t width);
Tensor concat_cols(std::span<const Tensor> parts);
/// Mean of consecutive row blocks; one output row per segment.
Tensor segment_mean(const Tensor& x, std::span<const std::size_t> segment_lengths);

/// Multi-head scaled dot-product attention over packed sequences.
/// `qkv` is [n, 3D] holding Q|K|V; rows are split into independent
/// sequences by `segment_lengths`. With `causal`, row i attends only to rows
/// j <= i of its own sequence. Returns [n, D] with heads concatenated.
Tensor attention(const Tensor& qkv, std::span<const std::size_t> segment_lengths,
                 std::size_t n_heads, bool causal);

/// Mean token cross-entropy over rows whose target is >= 0 (negative targets
/// are masked out and receive zero gradient). Accumulated in double.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Per-row negative log-likelihood of the target (NaN for masked rows); no graph.
std::vector<double> row_nll(const Tensor& logits, std::span<const int> targets);

}  // namespace planlm::ad
