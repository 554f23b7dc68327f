#pragma once

#include <cstdint>
#include <vector>

#include "hcma/tensor.hpp"

namespace hcma {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;  // decoupled
};

/// Adam with decoupled weight decay. Moment buffers are allocated on the
/// first step and keyed by parameter order, which must stay stable.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

  int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace hcma
