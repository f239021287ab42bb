#pragma once

#include <cstddef>
#include <vector>

#include "planlm/autodiff/tensor.hpp"

namespace planlm::ad {

struct AdamConfig {
  float learning_rate = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  /// Global gradient-norm clip; 0 disables.
  float clip_norm = 0.0f;
};

/// Adam with bias correction. Parameters whose grad buffer is absent are
/// skipped; every grad is zeroed after the update.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  void step();
  void zero_grad();

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(float lr) { config_.learning_rate = lr; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

}  // namespace planlm::ad
