#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "planlm/autodiff/ops.hpp"
#include "planlm/autodiff/tensor.hpp"
#include "planlm/rng.hpp"

namespace planlm::testing {

/// Central finite differences against reverse mode. The checked scalar is
/// sum(out * R) for a fixed random R, reduced in double on the numeric side so
/// the f32 rounding of a final reduction does not swamp the difference.
struct GradCheckResult {
  /// Gate: per input tensor, max |analytic - numeric| over the tensor's
  /// largest gradient magnitude; the maximum over tensors is reported. At f32
  /// with h = 1e-3 a central difference carries ~1e-5 absolute noise, so
  /// entries whose true derivative is near zero cannot be judged on their own
  /// scale.
  double max_rel = 0.0;
  /// Informational: worst entry-wise relative error (denominator floored at
  /// 1e-2).
  double max_entry_rel = 0.0;
  std::size_t checked = 0;
  std::string worst;  // entry with the largest entry-wise error
};

inline double entry_rel(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-2});
}

using TensorFn = std::function<ad::Tensor(const std::vector<ad::Tensor>&)>;

/// Mean cross-entropy of f32 logits, evaluated in double.
inline double cross_entropy_double(const ad::Tensor& logits, const std::vector<int>& targets) {
  const std::size_t cols = logits.cols();
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0) continue;
    const float* x = logits.data().data() + r * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, double(x[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(double(x[j]) - mx);
    total += mx + std::log(z) - double(x[targets[r]]);
    ++n;
  }
  return total / double(n);
}

/// With `ce_targets`, `f` returns logits and the checked scalar is their mean
/// cross-entropy: through ad::cross_entropy on the analytic side, in double
/// on the numeric side (an f32 loss value would quantize the difference).
inline GradCheckResult check_gradients(std::vector<ad::Tensor> inputs, const TensorFn& f,
                                       std::uint64_t seed = 7, float h = 1e-3f,
                                       const std::vector<int>& ce_targets = {}) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const bool ce = !ce_targets.empty();
  ad::Tensor out = f(inputs);
  Rng rng(seed);
  std::vector<float> r(ce ? 1 : out.size());
  for (auto& v : r) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  if (ce) {
    ad::backward(ad::scale(ad::cross_entropy(out, ce_targets), r[0]));
  } else {
    const ad::Tensor weights = ad::Tensor::from(out.shape(), r);
    ad::backward(ad::sum(ad::mul(out, weights)));
  }

  std::vector<std::vector<float>> analytic;
  for (auto& t : inputs) {
    const auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  auto objective = [&]() {
    ad::NoGradGuard guard;
    const ad::Tensor o = f(inputs);
    if (ce) return double(r[0]) * cross_entropy_double(o, ce_targets);
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += static_cast<double>(o.data()[i]) * r[i];
    return s;
  };

  GradCheckResult res;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto x = inputs[t].data();
    double scale_a = 0.0, scale_n = 0.0, max_diff = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      const float orig = x[j];
      const float up = orig + h;
      const float down = orig - h;
      x[j] = up;
      const double fp = objective();
      x[j] = down;
      const double fm = objective();
      x[j] = orig;
      const double numeric = (fp - fm) / (static_cast<double>(up) - static_cast<double>(down));
      const double e = entry_rel(analytic[t][j], numeric);
      scale_a = std::max(scale_a, std::abs(double(analytic[t][j])));
      scale_n = std::max(scale_n, std::abs(numeric));
      max_diff = std::max(max_diff, std::abs(analytic[t][j] - numeric));
      ++res.checked;
      if (e > res.max_entry_rel) {
        res.max_entry_rel = e;
        res.worst = "input " + std::to_string(t) + "[" + std::to_string(j) +
                    "]: " + std::to_string(analytic[t][j]) + " vs " + std::to_string(numeric);
      }
    }
    const double scale = std::max(scale_a, scale_n);
    if (scale > 0) res.max_rel = std::max(res.max_rel, max_diff / scale);
  }
  return res;
}

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, float scale = 1.0f) {
  std::vector<float> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
  return ad::Tensor::from(std::move(shape), std::move(v));
}

/// One named case of the op-by-op gradient check.
struct GradCase {
  std::string name;
  std::vector<ad::Tensor> inputs;
  TensorFn fn;
  std::vector<int> ce_targets = {};
};

/// Every differentiable op, at shapes small enough for exhaustive checking.
inline std::vector<GradCase> op_grad_cases(std::uint64_t seed) {
  using namespace ad;
  Rng rng(seed);
  std::vector<GradCase> cases;
  auto t = [&](Shape s, float scale = 1.0f) { return random_tensor(std::move(s), rng, scale); };

  cases.push_back({"matmul", {t({3, 4}), t({4, 5})}, [](const auto& in) { return matmul(in[0], in[1]); }});
  cases.push_back({"matmul_nt", {t({3, 4}), t({5, 4})}, [](const auto& in) { return matmul_nt(in[0], in[1]); }});
  cases.push_back({"add", {t({3, 4}), t({3, 4})}, [](const auto& in) { return add(in[0], in[1]); }});
  cases.push_back({"add_broadcast", {t({3, 4}), t({4})}, [](const auto& in) { return add(in[0], in[1]); }});
  cases.push_back({"mul", {t({3, 4}), t({3, 4})}, [](const auto& in) { return mul(in[0], in[1]); }});
  cases.push_back({"scale", {t({2, 5})}, [](const auto& in) { return scale(in[0], -1.7f); }});
  cases.push_back({"sum", {t({2, 5})}, [](const auto& in) { return sum(in[0]); }});
  cases.push_back({"mean", {t({2, 5})}, [](const auto& in) { return mean(in[0]); }});
  cases.push_back({"softmax_rows", {t({3, 6})}, [](const auto& in) { return softmax_rows(in[0]); }});
  cases.push_back({"layer_norm",
                   {t({4, 6}), t({6}), t({6})},
                   [](const auto& in) { return layer_norm(in[0], in[1], in[2]); }});
  cases.push_back({"gelu", {t({3, 7})}, [](const auto& in) { return gelu(in[0]); }});
  cases.push_back({"embedding", {t({5, 3})}, [](const auto& in) {
                     static const std::vector<int> ids = {4, 0, 4, 2};
                     return embedding(in[0], ids);
                   }});
  cases.push_back({"gather_rows", {t({5, 3})}, [](const auto& in) {
                     static const std::vector<int> rows = {1, 1, 3};
                     return gather_rows(in[0], rows);
                   }});
  cases.push_back({"slice_cols", {t({3, 6})}, [](const auto& in) { return slice_cols(in[0], 2, 3); }});
  cases.push_back({"concat_cols", {t({3, 2}), t({3, 4})}, [](const auto& in) {
                     const std::vector<Tensor> parts = {in[0], in[1]};
                     return concat_cols(parts);
                   }});
  cases.push_back({"segment_mean", {t({6, 3})}, [](const auto& in) {
                     static const std::vector<std::size_t> segs = {2, 1, 3};
                     return segment_mean(in[0], segs);
                   }});
  cases.push_back({"attention_causal", {t({7, 12})}, [](const auto& in) {
                     static const std::vector<std::size_t> segs = {3, 4};
                     return attention(in[0], segs, 2, true);
                   }});
  cases.push_back({"attention_full", {t({5, 12})}, [](const auto& in) {
                     static const std::vector<std::size_t> segs = {5};
                     return attention(in[0], segs, 2, false);
                   }});
  cases.push_back({"cross_entropy", {t({4, 5})}, [](const auto& in) {
                     static const std::vector<int> targets = {1, -1, 4, 0};
                     return cross_entropy(in[0], targets);
                   }});
  return cases;
}

/// Random two-layer nets (a few thousand parameters) ending in a
/// cross-entropy loss.
inline std::vector<GradCase> composite_grad_cases(std::uint64_t seed) {
  using namespace ad;
  Rng rng(seed);
  auto t = [&](Shape s, float scale) { return random_tensor(std::move(s), rng, scale); };
  std::vector<GradCase> cases;

  // MLP: linear, layer norm, gelu, linear, cross-entropy.
  cases.push_back({"mlp",
                   {t({8, 10}, 1.0f), t({10, 32}, 0.3f), t({32}, 0.1f), t({32}, 1.0f), t({32}, 0.1f),
                    t({32, 6}, 0.3f), t({6}, 0.1f)},
                   [](const auto& in) {
                     Tensor h = add(matmul(in[0], in[1]), in[2]);
                     h = gelu(layer_norm(h, in[3], in[4]));
                     return add(matmul(h, in[5]), in[6]);
                   },
                   {0, 5, 2, 2, 1, 4, 3, 0}});

  // Attention block: qkv projection, causal attention over two sequences,
  // residual output projection, pooled head.
  cases.push_back({"attention_net",
                   {t({6, 16}, 1.0f), t({16, 48}, 0.3f), t({16, 16}, 0.3f), t({16, 5}, 0.3f)},
                   [](const auto& in) {
                     static const std::vector<std::size_t> segs = {4, 2};
                     const Tensor ctx = attention(matmul(in[0], in[1]), segs, 4, true);
                     const Tensor h = add(in[0], matmul(ctx, in[2]));
                     return matmul(segment_mean(h, segs), in[3]);
                   },
                   {3, 1}});
  return cases;
}

}  // namespace planlm::testing
