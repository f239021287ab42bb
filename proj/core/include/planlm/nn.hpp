#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "planlm/autodiff/checkpoint.hpp"
#include "planlm/autodiff/ops.hpp"
#include "planlm/autodiff/tensor.hpp"
#include "planlm/rng.hpp"

namespace planlm::nn {

using ad::Tensor;

/// Named parameters in registration order. Names double as checkpoint
/// section names.
class ParamSet {
 public:
  Tensor add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  std::size_t parameter_count() const;

  void set_trainable(bool on);
  void append_sections(std::vector<ad::Section>& out) const;
  /// Copies values from a checkpoint; every parameter must be present with a
  /// matching shape.
  void load_sections(const ad::Checkpoint& ckpt);
  /// Value copies, in registration order (for keeping the best weights).
  std::vector<std::vector<float>> snapshot() const;
  void restore(const std::vector<std::vector<float>>& values);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

Tensor gaussian(ad::Shape shape, Rng& rng, float stddev = 0.02f);

/// y = x W + b with W stored [in, out].
struct Linear {
  Tensor w;
  Tensor b;
  Tensor operator()(const Tensor& x) const;
};
Linear make_linear(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                   Rng& rng, bool bias = true);

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return ad::layer_norm(x, gain, bias); }
};
LayerNorm make_layer_norm(ParamSet& ps, const std::string& prefix, std::size_t dim);

/// Pre-LN transformer block over packed sequences:
///   h = x + proj(attn(ln1(x)) + r)
///   y = h + fc2(gelu(fc1(ln2(h))))
/// `r` is the optional additive term on the concatenated attention context.
struct TransformerBlock {
  LayerNorm ln1;
  Linear qkv;
  Linear proj;
  LayerNorm ln2;
  Linear fc1;
  Linear fc2;
  std::size_t n_heads = 1;

  Tensor forward(const Tensor& x, std::span<const std::size_t> segment_lengths, bool causal,
                 const Tensor* r = nullptr) const;
};
TransformerBlock make_block(ParamSet& ps, const std::string& prefix, std::size_t dim,
                            std::size_t n_heads, std::size_t ff_dim, Rng& rng);

}  // namespace planlm::nn
