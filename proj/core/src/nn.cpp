#include "planlm/nn.hpp"

#include "planlm/errors.hpp"

namespace planlm::nn {

Tensor ParamSet::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ValidationError("duplicate parameter '" + name + "'");
  t.set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

const Tensor& ParamSet::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& item : items_) {
    if (item.first == name) return true;
  }
  return false;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.push_back(item.second);
  return out;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& item : items_) n += item.second.size();
  return n;
}

void ParamSet::set_trainable(bool on) {
  for (auto& item : items_) item.second.set_requires_grad(on);
}

void ParamSet::append_sections(std::vector<ad::Section>& out) const {
  for (const auto& [name, t] : items_) {
    out.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
}

void ParamSet::load_sections(const ad::Checkpoint& ckpt) {
  for (auto& [name, t] : items_) {
    const auto& s = ckpt.get(name);
    if (s.shape != t.shape()) {
      throw FormatError("section '" + name + "' has shape " + ad::shape_str(s.shape) +
                        ", expected " + ad::shape_str(t.shape()));
    }
    std::copy(s.values.begin(), s.values.end(), t.data().begin());
  }
}

std::vector<std::vector<float>> ParamSet::snapshot() const {
  std::vector<std::vector<float>> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.emplace_back(item.second.data().begin(), item.second.data().end());
  return out;
}

void ParamSet::restore(const std::vector<std::vector<float>>& values) {
  if (values.size() != items_.size()) throw ValidationError("snapshot does not match parameter set");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto dst = items_[i].second.data();
    if (values[i].size() != dst.size()) throw ValidationError("snapshot does not match parameter set");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

Tensor gaussian(ad::Shape shape, Rng& rng, float stddev) {
  std::vector<float> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal() * stddev);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ad::matmul(x, w);
  return b.defined() ? ad::add(y, b) : y;
}

Linear make_linear(ParamSet& ps, const std::string& prefix, std::size_t in, std::size_t out,
                   Rng& rng, bool bias) {
  Linear l;
  l.w = ps.add(prefix + ".w", gaussian({in, out}, rng));
  if (bias) l.b = ps.add(prefix + ".b", Tensor::zeros({out}));
  return l;
}

LayerNorm make_layer_norm(ParamSet& ps, const std::string& prefix, std::size_t dim) {
  return {ps.add(prefix + ".gain", Tensor::full({dim}, 1.0f)),
          ps.add(prefix + ".bias", Tensor::zeros({dim}))};
}

Tensor TransformerBlock::forward(const Tensor& x, std::span<const std::size_t> segment_lengths,
                                 bool causal, const Tensor* r) const {
  Tensor ctx = ad::attention(qkv(ln1(x)), segment_lengths, n_heads, causal);
  if (r != nullptr) ctx = ad::add(ctx, *r);
  Tensor h = ad::add(x, proj(ctx));
  return ad::add(h, fc2(ad::gelu(fc1(ln2(h)))));
}

TransformerBlock make_block(ParamSet& ps, const std::string& prefix, std::size_t dim,
                            std::size_t n_heads, std::size_t ff_dim, Rng& rng) {
  if (n_heads == 0 || dim % n_heads != 0) {
    throw ValidationError("model dim " + std::to_string(dim) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
  }
  TransformerBlock b;
  b.n_heads = n_heads;
  b.ln1 = make_layer_norm(ps, prefix + ".ln1", dim);
  b.qkv = make_linear(ps, prefix + ".attn.qkv", dim, 3 * dim, rng);
  b.proj = make_linear(ps, prefix + ".attn.proj", dim, dim, rng);
  b.ln2 = make_layer_norm(ps, prefix + ".ln2", dim);
  b.fc1 = make_linear(ps, prefix + ".mlp.fc1", dim, ff_dim, rng);
  b.fc2 = make_linear(ps, prefix + ".mlp.fc2", ff_dim, dim, rng);
  return b;
}

}  // namespace planlm::nn
