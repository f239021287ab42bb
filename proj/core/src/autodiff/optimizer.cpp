#include "planlm/autodiff/optimizer.hpp"

#include <cmath>

namespace planlm::ad {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0f);
    v_.emplace_back(p.size(), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  float clip = 1.0f;
  if (config_.clip_norm > 0.0f) {
    double sq = 0.0;
    for (const auto& p : params_) {
      if (!p.has_grad()) continue;
      for (float g : p.node()->grad) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) clip = static_cast<float>(config_.clip_norm / norm);
  }
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(t_));
  const float step_size = static_cast<float>(config_.learning_rate / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float b1 = config_.beta1, b2 = config_.beta2;

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto& node = *p.node();
    float* w = node.value.data();
    float* g = node.grad.data();
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t j = 0; j < node.value.size(); ++j) {
      const float gj = g[j] * clip;
      m[j] = b1 * m[j] + (1.0f - b1) * gj;
      v[j] = b2 * v[j] + (1.0f - b2) * gj * gj;
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + config_.eps);
      g[j] = 0.0f;
    }
  }
}

}  // namespace planlm::ad
