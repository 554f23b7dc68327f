#pragma once

#include <vector>

#include "hcma/tensor.hpp"

namespace hcma {

/// Linear-beta forward noising schedule. beta runs from beta1 (t = 0) to
/// betaT (t = T-1); alpha_bar is the running product of (1 - beta).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar;

  static NoiseSchedule make(int T = 1000, double beta1 = 1e-4, double betaT = 0.02);
};

/// z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.
Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s);

}  // namespace hcma
