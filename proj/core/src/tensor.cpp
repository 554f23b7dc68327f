#include "hcma/tensor.hpp"

#include <cmath>

namespace hcma {

template <class T>
bool TensorT<T>::all_finite() const {
  for (const T& v : *data)
    if (!std::isfinite(v)) return false;
  return true;
}

template struct TensorT<float>;
template struct TensorT<double>;

}  // namespace hcma
