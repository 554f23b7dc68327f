#include "hcma/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hcma {

GradCheckReport grad_check(const std::function<TensorD(GraphD&, const TensorD&)>& f,
                           const TensorD& x, double step, int64_t max_coords, Rng* rng) {
  // Tape gradient.
  GraphD g;
  TensorD xt = g.leaf(x);
  TensorD y = f(g, xt);
  if (y.numel() != 1) throw shape_error("grad_check: f must be scalar-valued");
  g.backward(y);
  TensorD grad = g.grad(xt);

  // Coordinates to probe.
  std::vector<int64_t> coords;
  const int64_t n = x.numel();
  if (max_coords > 0 && max_coords < n) {
    if (!rng) throw std::runtime_error("grad_check: rng required for coordinate sampling");
    for (int64_t i = 0; i < max_coords; ++i) coords.push_back(rng->uniform_int(0, n - 1));
  } else {
    coords.resize(n);
    for (int64_t i = 0; i < n; ++i) coords[i] = i;
  }

  GradCheckReport rep;
  TensorD xp = x.detached_copy();
  for (int64_t c : coords) {
    const double orig = (*xp.data)[c];
    (*xp.data)[c] = orig + step;
    GraphD gp;
    const double fp = f(gp, xp)[0];
    (*xp.data)[c] = orig - step;
    GraphD gm;
    const double fm = f(gm, xp)[0];
    (*xp.data)[c] = orig;
    const double fd = (fp - fm) / (2.0 * step);
    const double ad = grad[c];
    const double denom = std::max({std::abs(fd), std::abs(ad), 1e-6});
    rep.max_rel_err = std::max(rep.max_rel_err, std::abs(fd - ad) / denom);
    ++rep.coords_checked;
  }
  return rep;
}

}  // namespace hcma
