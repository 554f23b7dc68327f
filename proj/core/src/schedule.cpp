#include "hcma/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace hcma {

NoiseSchedule NoiseSchedule::make(int T, double beta1, double betaT) {
  if (T < 2) throw std::invalid_argument("make_schedule: T >= 2 required");
  if (!(beta1 > 0.0) || !(betaT >= beta1) || !(betaT < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta1 <= betaT < 1");
  NoiseSchedule s;
  s.T = T;
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double b = beta1 + (betaT - beta1) * double(t) / double(T - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar.push_back(prod);
  }
  return s;
}

Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
  if (t < 0 || t >= s.T) throw std::out_of_range("q_sample: t out of range");
  if (eps.shape != z0.shape) throw shape_error("q_sample: eps shape mismatch");
  const float a = float(std::sqrt(s.alpha_bar[t]));
  const float b = float(std::sqrt(1.0 - s.alpha_bar[t]));
  Tensor out(z0.shape);
  for (int64_t i = 0; i < z0.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

}  // namespace hcma
