#include "hcma/optim.hpp"

#include <cmath>

namespace hcma {

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw shape_error("adam: param/grad count mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i]->numel(), 0.0f);
      v_[i].assign(params[i]->numel(), 0.0f);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (p.shape != g.shape) throw shape_error("adam: grad shape mismatch for parameter " +
                                              std::to_string(i));
    float* pp = p.ptr();
    const float* pg = g.ptr();
    for (int64_t j = 0; j < p.numel(); ++j) {
      m_[i][j] = float(cfg_.beta1) * m_[i][j] + float(1.0 - cfg_.beta1) * pg[j];
      v_[i][j] = float(cfg_.beta2) * v_[i][j] + float(1.0 - cfg_.beta2) * pg[j] * pg[j];
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      pp[j] -= float(cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * pp[j]));
    }
  }
}

}  // namespace hcma
