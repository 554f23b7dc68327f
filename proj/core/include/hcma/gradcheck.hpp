#pragma once

#include <functional>

#include "hcma/graph.hpp"
#include "hcma/rng.hpp"

namespace hcma {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t coords_checked = 0;
};

/// Compare the tape gradient of a scalar function against central finite
/// differences, in 64-bit. `f` must evaluate the function at the tracked
/// input it is handed. When `max_coords > 0`, a random subset of coordinates
/// is probed (drawn from `rng`); otherwise every coordinate is checked.
GradCheckReport grad_check(const std::function<TensorD(GraphD&, const TensorD&)>& f,
                           const TensorD& x, double step = 1e-5, int64_t max_coords = -1,
                           Rng* rng = nullptr);

}  // namespace hcma
