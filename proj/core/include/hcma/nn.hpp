#pragma once

#include <string>
#include <vector>

#include "hcma/checkpoint.hpp"
#include "hcma/graph.hpp"
#include "hcma/rng.hpp"

namespace hcma {

/// Named references to a model's parameter tensors, in a stable order.
template <class T>
using ParamList = std::vector<std::pair<std::string, TensorT<T>*>>;

template <class T>
std::vector<TensorT<T>*> param_ptrs(const ParamList<T>& list) {
  std::vector<TensorT<T>*> out;
  for (auto& [name, p] : list) out.push_back(p);
  return out;
}

template <class T>
struct LinearT {
  TensorT<T> w, b;  // w: [in, out]

  TensorT<T> forward(GraphT<T>& g, const TensorT<T>& x) const {
    return g.add_rowvec(g.matmul(x, w), b);
  }
  void reg(ParamList<T>& list, const std::string& prefix) {
    list.push_back({prefix + ".w", &w});
    list.push_back({prefix + ".b", &b});
  }
};

template <class T>
LinearT<T> make_linear(Rng& rng, int64_t in, int64_t out) {
  LinearT<T> l;
  l.w = TensorT<T>({in, out});
  l.b = TensorT<T>({out});
  std::vector<double> tmp(in * out);
  rng.fill_normal(std::span<double>(tmp));
  const double s = 1.0 / std::sqrt(double(in));
  for (int64_t i = 0; i < l.w.numel(); ++i) (*l.w.data)[i] = T(tmp[i] * s);
  return l;
}

template <class T>
struct LayerNormT {
  TensorT<T> gamma, beta;

  TensorT<T> forward(GraphT<T>& g, const TensorT<T>& x) const {
    return g.add_rowvec(g.mul_rowvec(g.layernorm_lastdim(x), gamma), beta);
  }
  void reg(ParamList<T>& list, const std::string& prefix) {
    list.push_back({prefix + ".gamma", &gamma});
    list.push_back({prefix + ".beta", &beta});
  }
};

template <class T>
LayerNormT<T> make_layernorm(int64_t dim) {
  LayerNormT<T> l;
  l.gamma = TensorT<T>::full({dim}, T(1));
  l.beta = TensorT<T>({dim});
  return l;
}

template <class T>
struct ConvT {
  TensorT<T> w, b;  // w: [cout, cin, k, k]
  int stride = 1, pad = 0;

  TensorT<T> forward(GraphT<T>& g, const TensorT<T>& x) const {
    return g.add_chan(g.conv2d(x, w, stride, pad), b);
  }
  void reg(ParamList<T>& list, const std::string& prefix) {
    list.push_back({prefix + ".w", &w});
    list.push_back({prefix + ".b", &b});
  }
};

template <class T>
ConvT<T> make_conv(Rng& rng, int64_t cin, int64_t cout, int k, int stride, int pad) {
  ConvT<T> c;
  c.w = TensorT<T>({cout, cin, k, k});
  c.b = TensorT<T>({cout});
  c.stride = stride;
  c.pad = pad;
  std::vector<double> tmp(c.w.numel());
  rng.fill_normal(std::span<double>(tmp));
  const double s = 1.0 / std::sqrt(double(cin * k * k));
  for (int64_t i = 0; i < c.w.numel(); ++i) (*c.w.data)[i] = T(tmp[i] * s);
  return c;
}

/// Replace every parameter with a tracked leaf on `g` (shares storage).
template <class T>
void track_params(GraphT<T>& g, const ParamList<T>& list) {
  for (auto& [name, p] : list) *p = g.leaf(*p);
}

/// Drop tape handles after a training step so the next graph starts clean.
template <class T>
void untrack_params(const ParamList<T>& list) {
  for (auto& [name, p] : list) p->node = -1;
}

/// Collect gradients in parameter order.
template <class T>
std::vector<TensorT<T>> collect_grads(GraphT<T>& g, const ParamList<T>& list) {
  std::vector<TensorT<T>> out;
  for (auto& [name, p] : list) out.push_back(g.grad(*p));
  return out;
}

inline void save_params(Checkpoint& ck, const ParamList<float>& list) {
  for (auto& [name, p] : list) ck.add(name, p->detached_copy());
}

/// Copies checkpoint tensors into the (already-shaped) parameter storage.
inline void load_params(const Checkpoint& ck, const ParamList<float>& list) {
  for (auto& [name, p] : list) {
    const Tensor& src = ck.get(name);
    if (src.shape != p->shape)
      throw io_error("checkpoint: shape mismatch for " + name + ": " +
                     shape_str(src.shape) + " vs " + shape_str(p->shape));
    *p->data = *src.data;
  }
}

}  // namespace hcma
