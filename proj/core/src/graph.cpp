#include "hcma/graph.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hcma {

namespace {

inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* A, int lda,
                 const float* B, int ldb, float beta, float* C, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, A, lda, B, ldb, beta, C, ldc);
}
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* A, int lda,
                 const double* B, int ldb, double beta, double* C, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, A, lda, B, ldb, beta, C, ldc);
}

template <class T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
}

template <class T>
bool is_scalar(const TensorT<T>& t) {
  return t.numel() == 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// tape mechanics
// ---------------------------------------------------------------------------

template <class T>
int GraphT<T>::record(int64_t out_size, std::function<void(const T*, GraphT&)> back) {
  nodes_.push_back({out_size, std::move(back)});
  grads_.push_back(nullptr);
  return static_cast<int>(nodes_.size()) - 1;
}

template <class T>
T* GraphT<T>::grad_buf(int node) {
  if (!grads_[node]) grads_[node] = std::make_unique<std::vector<T>>(nodes_[node].size, T(0));
  return grads_[node]->data();
}

template <class T>
TensorT<T> GraphT<T>::leaf(const TensorT<T>& t) {
  TensorT<T> out = t;
  out.node = record(t.numel(), nullptr);
  return out;
}

template <class T>
void GraphT<T>::backward(const TensorT<T>& root) {
  if (root.node < 0 || root.numel() != 1)
    throw shape_error("backward: root must be a tracked scalar");
  grad_buf(root.node)[0] += T(1);
  for (int i = root.node; i >= 0; --i) {
    if (grads_[i] && nodes_[i].back) nodes_[i].back(grads_[i]->data(), *this);
  }
}

template <class T>
bool GraphT<T>::has_grad(const TensorT<T>& t) const {
  return t.node >= 0 && t.node < static_cast<int>(grads_.size()) && grads_[t.node] != nullptr;
}

template <class T>
TensorT<T> GraphT<T>::grad(const TensorT<T>& t) const {
  TensorT<T> g(t.shape);
  if (has_grad(t)) std::copy(grads_[t.node]->begin(), grads_[t.node]->end(), g.data->begin());
  return g;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> GraphT<T>::add(const TensorT<T>& a, const TensorT<T>& b) {
  const bool sa = is_scalar(a), sb = is_scalar(b);
  if (!sa && !sb) check_same_shape(a, b, "add");
  TensorT<T> out(sa && !sb ? b.shape : a.shape);
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = (sa ? pa[0] : pa[i]) + (sb ? pb[0] : pb[i]);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    out.node = record(n, [na, nb, sa, sb, n](const T* g, GraphT& gr) {
      if (na >= 0) {
        T* ga = gr.grad_buf(na);
        if (sa)
          for (int64_t i = 0; i < n; ++i) ga[0] += g[i];
        else
          for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (nb >= 0) {
        T* gb = gr.grad_buf(nb);
        if (sb)
          for (int64_t i = 0; i < n; ++i) gb[0] += g[i];
        else
          for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::sub(const TensorT<T>& a, const TensorT<T>& b) {
  const bool sa = is_scalar(a), sb = is_scalar(b);
  if (!sa && !sb) check_same_shape(a, b, "sub");
  TensorT<T> out(sa && !sb ? b.shape : a.shape);
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = (sa ? pa[0] : pa[i]) - (sb ? pb[0] : pb[i]);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    out.node = record(n, [na, nb, sa, sb, n](const T* g, GraphT& gr) {
      if (na >= 0) {
        T* ga = gr.grad_buf(na);
        if (sa)
          for (int64_t i = 0; i < n; ++i) ga[0] += g[i];
        else
          for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (nb >= 0) {
        T* gb = gr.grad_buf(nb);
        if (sb)
          for (int64_t i = 0; i < n; ++i) gb[0] -= g[i];
        else
          for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::mul(const TensorT<T>& a, const TensorT<T>& b) {
  const bool sa = is_scalar(a), sb = is_scalar(b);
  if (!sa && !sb) check_same_shape(a, b, "mul");
  TensorT<T> out(sa && !sb ? b.shape : a.shape);
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = (sa ? pa[0] : pa[i]) * (sb ? pb[0] : pb[i]);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    auto da = a.data, db = b.data;
    out.node = record(n, [na, nb, sa, sb, n, da, db](const T* g, GraphT& gr) {
      const T* pa = da->data();
      const T* pb = db->data();
      if (na >= 0) {
        T* ga = gr.grad_buf(na);
        for (int64_t i = 0; i < n; ++i) {
          T v = g[i] * (sb ? pb[0] : pb[i]);
          if (sa)
            ga[0] += v;
          else
            ga[i] += v;
        }
      }
      if (nb >= 0) {
        T* gb = gr.grad_buf(nb);
        for (int64_t i = 0; i < n; ++i) {
          T v = g[i] * (sa ? pa[0] : pa[i]);
          if (sb)
            gb[0] += v;
          else
            gb[i] += v;
        }
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::scale(const TensorT<T>& a, T c) {
  TensorT<T> out(a.shape);
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  if (tracked(a)) {
    int na = a.node;
    out.node = record(n, [na, c, n](const T* g, GraphT& gr) {
      T* ga = gr.grad_buf(na);
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::relu(const TensorT<T>& a) {
  TensorT<T> out(a.shape);
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] > T(0) ? pa[i] : T(0);
  if (tracked(a)) {
    int na = a.node;
    auto da = a.data;
    out.node = record(n, [na, n, da](const T* g, GraphT& gr) {
      T* ga = gr.grad_buf(na);
      const T* pa = da->data();
      for (int64_t i = 0; i < n; ++i)
        if (pa[i] > T(0)) ga[i] += g[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::gelu(const TensorT<T>& a) {
  // tanh approximation
  const T s = T(0.7978845608028654);  // sqrt(2/pi)
  const T c3 = T(0.044715);
  TensorT<T> out(a.shape);
  const int64_t n = out.numel();
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < n; ++i) {
    T x = pa[i];
    T t = std::tanh(s * (x + c3 * x * x * x));
    po[i] = T(0.5) * x * (T(1) + t);
  }
  if (tracked(a)) {
    int na = a.node;
    auto da = a.data;
    out.node = record(n, [na, n, da, s, c3](const T* g, GraphT& gr) {
      T* ga = gr.grad_buf(na);
      const T* pa = da->data();
      for (int64_t i = 0; i < n; ++i) {
        T x = pa[i];
        T u = s * (x + c3 * x * x * x);
        T t = std::tanh(u);
        T dudx = s * (T(1) + T(3) * c3 * x * x);
        T dy = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * dudx;
        ga[i] += g[i] * dy;
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::layernorm_lastdim(const TensorT<T>& x, T eps) {
  if (x.rank() < 1) throw shape_error("layernorm: rank >= 1 required");
  const int64_t C = x.shape.back();
  const int64_t R = x.numel() / C;
  TensorT<T> out(x.shape);
  auto inv_sigma = std::make_shared<std::vector<T>>(R);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < R; ++r) {
    const T* row = px + r * C;
    T mu = 0;
    for (int64_t c = 0; c < C; ++c) mu += row[c];
    mu /= T(C);
    T var = 0;
    for (int64_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(C);
    T inv = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = inv;
    for (int64_t c = 0; c < C; ++c) po[r * C + c] = (row[c] - mu) * inv;
  }
  if (tracked(x)) {
    int nx = x.node;
    auto dy = out.data;
    out.node = record(x.numel(), [nx, R, C, dy, inv_sigma](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      const T* py = dy->data();
      for (int64_t r = 0; r < R; ++r) {
        const T* grow = g + r * C;
        const T* yrow = py + r * C;
        T gmean = 0, gymean = 0;
        for (int64_t c = 0; c < C; ++c) {
          gmean += grow[c];
          gymean += grow[c] * yrow[c];
        }
        gmean /= T(C);
        gymean /= T(C);
        T inv = (*inv_sigma)[r];
        for (int64_t c = 0; c < C; ++c)
          gx[r * C + c] += inv * (grow[c] - gmean - yrow[c] * gymean);
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::softmax_lastdim(const TensorT<T>& x) {
  if (x.rank() < 1 || x.shape.back() < 1) throw shape_error("softmax: empty last dim");
  const int64_t C = x.shape.back();
  const int64_t R = x.numel() / C;
  TensorT<T> out(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < R; ++r) {
    const T* row = px + r * C;
    T m = row[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    T sum = 0;
    for (int64_t c = 0; c < C; ++c) {
      T e = std::exp(row[c] - m);
      po[r * C + c] = e;
      sum += e;
    }
    T inv = T(1) / sum;
    for (int64_t c = 0; c < C; ++c) po[r * C + c] *= inv;
  }
  if (tracked(x)) {
    int nx = x.node;
    auto dy = out.data;
    out.node = record(x.numel(), [nx, R, C, dy](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      const T* py = dy->data();
      for (int64_t r = 0; r < R; ++r) {
        const T* grow = g + r * C;
        const T* yrow = py + r * C;
        T dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += grow[c] * yrow[c];
        for (int64_t c = 0; c < C; ++c) gx[r * C + c] += yrow[c] * (grow[c] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// broadcasts
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> GraphT<T>::add_rowvec(const TensorT<T>& x, const TensorT<T>& v) {
  const int64_t C = x.shape.back();
  if (v.numel() != C) throw shape_error("add_rowvec: vector length != last dim");
  const int64_t R = x.numel() / C;
  TensorT<T> out(x.shape);
  const T* px = x.ptr();
  const T* pv = v.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) po[r * C + c] = px[r * C + c] + pv[c];
  if (tracked(x) || tracked(v)) {
    int nx = x.node, nv = v.node;
    out.node = record(x.numel(), [nx, nv, R, C](const T* g, GraphT& gr) {
      if (nx >= 0) {
        T* gx = gr.grad_buf(nx);
        for (int64_t i = 0; i < R * C; ++i) gx[i] += g[i];
      }
      if (nv >= 0) {
        T* gv = gr.grad_buf(nv);
        for (int64_t r = 0; r < R; ++r)
          for (int64_t c = 0; c < C; ++c) gv[c] += g[r * C + c];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::mul_rowvec(const TensorT<T>& x, const TensorT<T>& v) {
  const int64_t C = x.shape.back();
  if (v.numel() != C) throw shape_error("mul_rowvec: vector length != last dim");
  const int64_t R = x.numel() / C;
  TensorT<T> out(x.shape);
  const T* px = x.ptr();
  const T* pv = v.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) po[r * C + c] = px[r * C + c] * pv[c];
  if (tracked(x) || tracked(v)) {
    int nx = x.node, nv = v.node;
    auto dx = x.data, dv = v.data;
    out.node = record(x.numel(), [nx, nv, R, C, dx, dv](const T* g, GraphT& gr) {
      const T* px = dx->data();
      const T* pv = dv->data();
      if (nx >= 0) {
        T* gx = gr.grad_buf(nx);
        for (int64_t r = 0; r < R; ++r)
          for (int64_t c = 0; c < C; ++c) gx[r * C + c] += g[r * C + c] * pv[c];
      }
      if (nv >= 0) {
        T* gv = gr.grad_buf(nv);
        for (int64_t r = 0; r < R; ++r)
          for (int64_t c = 0; c < C; ++c) gv[c] += g[r * C + c] * px[r * C + c];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::add_chan(const TensorT<T>& x, const TensorT<T>& v) {
  if (x.rank() != 4) throw shape_error("add_chan: expected [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (v.numel() != C) throw shape_error("add_chan: bias length != C");
  TensorT<T> out(x.shape);
  const T* px = x.ptr();
  const T* pv = v.ptr();
  T* po = out.ptr();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T bias = pv[c];
      const int64_t base = (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) po[base + i] = px[base + i] + bias;
    }
  if (tracked(x) || tracked(v)) {
    int nx = x.node, nv = v.node;
    out.node = record(x.numel(), [nx, nv, B, C, HW](const T* g, GraphT& gr) {
      if (nx >= 0) {
        T* gx = gr.grad_buf(nx);
        for (int64_t i = 0; i < B * C * HW; ++i) gx[i] += g[i];
      }
      if (nv >= 0) {
        T* gv = gr.grad_buf(nv);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (b * C + c) * HW;
            T s = 0;
            for (int64_t i = 0; i < HW; ++i) s += g[base + i];
            gv[c] += s;
          }
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::mul_chan(const TensorT<T>& x, const TensorT<T>& v) {
  if (x.rank() != 4) throw shape_error("mul_chan: expected [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (v.numel() != C) throw shape_error("mul_chan: gain length != C");
  TensorT<T> out(x.shape);
  const T* px = x.ptr();
  const T* pv = v.ptr();
  T* po = out.ptr();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const T gain = pv[c];
      const int64_t base = (b * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) po[base + i] = px[base + i] * gain;
    }
  if (tracked(x) || tracked(v)) {
    int nx = x.node, nv = v.node;
    auto dx = x.data, dv = v.data;
    out.node = record(x.numel(), [nx, nv, B, C, HW, dx, dv](const T* g, GraphT& gr) {
      const T* px = dx->data();
      const T* pv = dv->data();
      if (nx >= 0) {
        T* gx = gr.grad_buf(nx);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) gx[base + i] += g[base + i] * pv[c];
          }
      }
      if (nv >= 0) {
        T* gv = gr.grad_buf(nv);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (b * C + c) * HW;
            T s = 0;
            for (int64_t i = 0; i < HW; ++i) s += g[base + i] * px[base + i];
            gv[c] += s;
          }
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::add_chan_per_sample(const TensorT<T>& x, const TensorT<T>& b) {
  if (x.rank() != 4) throw shape_error("add_chan_per_sample: expected [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (b.rank() != 2 || b.dim(0) != B || b.dim(1) != C)
    throw shape_error("add_chan_per_sample: bias must be [B,C]");
  TensorT<T> out(x.shape);
  const T* px = x.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int64_t bi = 0; bi < B; ++bi)
    for (int64_t c = 0; c < C; ++c) {
      const T bias = pb[bi * C + c];
      const int64_t base = (bi * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) po[base + i] = px[base + i] + bias;
    }
  if (tracked(x) || tracked(b)) {
    int nx = x.node, nb = b.node;
    out.node = record(x.numel(), [nx, nb, B, C, HW](const T* g, GraphT& gr) {
      if (nx >= 0) {
        T* gx = gr.grad_buf(nx);
        for (int64_t i = 0; i < B * C * HW; ++i) gx[i] += g[i];
      }
      if (nb >= 0) {
        T* gb = gr.grad_buf(nb);
        for (int64_t bi = 0; bi < B; ++bi)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (bi * C + c) * HW;
            T s = 0;
            for (int64_t i = 0; i < HW; ++i) s += g[base + i];
            gb[bi * C + c] += s;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> GraphT<T>::matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw shape_error("matmul: " + shape_str(a.shape) + " x " + shape_str(b.shape));
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)),
            n = static_cast<int>(b.dim(1));
  TensorT<T> out({m, n});
  gemm(false, false, m, n, k, T(1), a.ptr(), k, b.ptr(), n, T(0), out.ptr(), n);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    auto da = a.data, db = b.data;
    out.node = record(out.numel(), [na, nb, m, n, k, da, db](const T* g, GraphT& gr) {
      if (na >= 0) gemm(false, true, m, k, n, T(1), g, n, db->data(), n, T(1), gr.grad_buf(na), k);
      if (nb >= 0) gemm(true, false, k, n, m, T(1), da->data(), k, g, n, T(1), gr.grad_buf(nb), n);
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw shape_error("matmul_nt: " + shape_str(a.shape) + " x " + shape_str(b.shape) + "^T");
  const int m = static_cast<int>(a.dim(0)), k = static_cast<int>(a.dim(1)),
            n = static_cast<int>(b.dim(0));
  TensorT<T> out({m, n});
  gemm(false, true, m, n, k, T(1), a.ptr(), k, b.ptr(), k, T(0), out.ptr(), n);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    auto da = a.data, db = b.data;
    out.node = record(out.numel(), [na, nb, m, n, k, da, db](const T* g, GraphT& gr) {
      if (na >= 0) gemm(false, false, m, k, n, T(1), g, n, db->data(), k, T(1), gr.grad_buf(na), k);
      if (nb >= 0) gemm(true, false, n, k, m, T(1), g, n, da->data(), k, T(1), gr.grad_buf(nb), k);
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::bmm(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw shape_error("bmm: " + shape_str(a.shape) + " x " + shape_str(b.shape));
  const int G = static_cast<int>(a.dim(0)), m = static_cast<int>(a.dim(1)),
            k = static_cast<int>(a.dim(2)), n = static_cast<int>(b.dim(2));
  TensorT<T> out({G, m, n});
  for (int i = 0; i < G; ++i)
    gemm(false, false, m, n, k, T(1), a.ptr() + int64_t(i) * m * k, k,
         b.ptr() + int64_t(i) * k * n, n, T(0), out.ptr() + int64_t(i) * m * n, n);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    auto da = a.data, db = b.data;
    out.node = record(out.numel(), [na, nb, G, m, n, k, da, db](const T* g, GraphT& gr) {
      for (int i = 0; i < G; ++i) {
        const T* gi = g + int64_t(i) * m * n;
        if (na >= 0)
          gemm(false, true, m, k, n, T(1), gi, n, db->data() + int64_t(i) * k * n, n, T(1),
               gr.grad_buf(na) + int64_t(i) * m * k, k);
        if (nb >= 0)
          gemm(true, false, k, n, m, T(1), da->data() + int64_t(i) * m * k, k, gi, n, T(1),
               gr.grad_buf(nb) + int64_t(i) * k * n, n);
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::bmm_nt(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    throw shape_error("bmm_nt: " + shape_str(a.shape) + " x " + shape_str(b.shape) + "^T");
  const int G = static_cast<int>(a.dim(0)), m = static_cast<int>(a.dim(1)),
            k = static_cast<int>(a.dim(2)), n = static_cast<int>(b.dim(1));
  TensorT<T> out({G, m, n});
  for (int i = 0; i < G; ++i)
    gemm(false, true, m, n, k, T(1), a.ptr() + int64_t(i) * m * k, k,
         b.ptr() + int64_t(i) * n * k, k, T(0), out.ptr() + int64_t(i) * m * n, n);
  if (tracked(a) || tracked(b)) {
    int na = a.node, nb = b.node;
    auto da = a.data, db = b.data;
    out.node = record(out.numel(), [na, nb, G, m, n, k, da, db](const T* g, GraphT& gr) {
      for (int i = 0; i < G; ++i) {
        const T* gi = g + int64_t(i) * m * n;
        if (na >= 0)
          gemm(false, false, m, k, n, T(1), gi, n, db->data() + int64_t(i) * n * k, k, T(1),
               gr.grad_buf(na) + int64_t(i) * m * k, k);
        if (nb >= 0)
          gemm(true, false, n, k, m, T(1), gi, n, da->data() + int64_t(i) * m * k, k, T(1),
               gr.grad_buf(nb) + int64_t(i) * n * k, k);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// data movement
// ---------------------------------------------------------------------------

namespace {

// Row-major strides of a shape.
inline std::vector<int64_t> strides_of(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

}  // namespace

template <class T>
TensorT<T> GraphT<T>::permute(const TensorT<T>& x, const std::vector<int>& perm) {
  if (perm.size() != x.rank()) throw shape_error("permute: rank mismatch");
  Shape oshape(perm.size());
  for (size_t d = 0; d < perm.size(); ++d) oshape[d] = x.shape[perm[d]];
  TensorT<T> out(oshape);
  const auto in_st = strides_of(x.shape);
  const auto out_st = strides_of(oshape);
  const int64_t n = x.numel();
  const int rank = static_cast<int>(perm.size());
  // Map output flat index -> input flat index. Captures by value: the
  // closure is retained by the tape past this function's lifetime.
  auto map_idx = [in_st, out_st, perm, rank](int64_t oi) {
    int64_t ii = 0, rem = oi;
    for (int d = 0; d < rank; ++d) {
      int64_t c = rem / out_st[d];
      rem -= c * out_st[d];
      ii += c * in_st[perm[d]];
    }
    return ii;
  };
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t oi = 0; oi < n; ++oi) po[oi] = px[map_idx(oi)];
  if (tracked(x)) {
    int nx = x.node;
    out.node = record(n, [nx, n, map_idx](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      for (int64_t oi = 0; oi < n; ++oi) gx[map_idx(oi)] += g[oi];
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::gather_rows(const TensorT<T>& x, const std::vector<int64_t>& idx) {
  if (x.rank() < 2) throw shape_error("gather_rows: rank >= 2 required");
  const int64_t R = x.dim(0);
  const int64_t C = x.numel() / R;
  for (int64_t i : idx)
    if (i < 0 || i >= R) throw shape_error("gather_rows: index out of range");
  Shape oshape = x.shape;
  oshape[0] = static_cast<int64_t>(idx.size());
  TensorT<T> out(oshape);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(po + r * C, px + idx[r] * C, sizeof(T) * C);
  if (tracked(x)) {
    int nx = x.node;
    auto ids = std::make_shared<std::vector<int64_t>>(idx);
    out.node = record(out.numel(), [nx, C, ids](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      for (size_t r = 0; r < ids->size(); ++r) {
        const T* grow = g + r * C;
        T* xrow = gx + (*ids)[r] * C;
        for (int64_t c = 0; c < C; ++c) xrow[c] += grow[c];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::rows_concat(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != b.rank() || a.rank() < 2) throw shape_error("rows_concat: rank mismatch");
  for (size_t d = 1; d < a.rank(); ++d)
    if (a.shape[d] != b.shape[d]) throw shape_error("rows_concat: trailing dims differ");
  Shape oshape = a.shape;
  oshape[0] = a.dim(0) + b.dim(0);
  TensorT<T> out(oshape);
  const int64_t na = a.numel(), nb = b.numel();
  std::memcpy(out.ptr(), a.ptr(), sizeof(T) * na);
  std::memcpy(out.ptr() + na, b.ptr(), sizeof(T) * nb);
  if (tracked(a) || tracked(b)) {
    int ia = a.node, ib = b.node;
    out.node = record(out.numel(), [ia, ib, na, nb](const T* g, GraphT& gr) {
      if (ia >= 0) {
        T* ga = gr.grad_buf(ia);
        for (int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (ib >= 0) {
        T* gb = gr.grad_buf(ib);
        for (int64_t i = 0; i < nb; ++i) gb[i] += g[na + i];
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::tile_vert(const TensorT<T>& x, int64_t times) {
  if (times < 1) throw shape_error("tile_vert: times >= 1 required");
  Shape oshape = x.shape;
  oshape[0] *= times;
  TensorT<T> out(oshape);
  const int64_t n = x.numel();
  for (int64_t t = 0; t < times; ++t) std::memcpy(out.ptr() + t * n, x.ptr(), sizeof(T) * n);
  if (tracked(x)) {
    int nx = x.node;
    out.node = record(out.numel(), [nx, n, times](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      for (int64_t t = 0; t < times; ++t)
        for (int64_t i = 0; i < n; ++i) gx[i] += g[t * n + i];
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::stack_rows(const std::vector<TensorT<T>>& rows) {
  if (rows.empty()) throw shape_error("stack_rows: empty input");
  const int64_t C = rows[0].numel();
  for (const auto& r : rows)
    if (r.numel() != C) throw shape_error("stack_rows: row sizes differ");
  TensorT<T> out({static_cast<int64_t>(rows.size()), C});
  bool any = false;
  auto parents = std::make_shared<std::vector<int>>();
  for (size_t r = 0; r < rows.size(); ++r) {
    std::memcpy(out.ptr() + r * C, rows[r].ptr(), sizeof(T) * C);
    parents->push_back(rows[r].node);
    any = any || tracked(rows[r]);
  }
  if (any) {
    out.node = record(out.numel(), [parents, C](const T* g, GraphT& gr) {
      for (size_t r = 0; r < parents->size(); ++r) {
        int p = (*parents)[r];
        if (p < 0) continue;
        T* gp = gr.grad_buf(p);
        const T* grow = g + r * C;
        for (int64_t c = 0; c < C; ++c) gp[c] += grow[c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution / spatial
// ---------------------------------------------------------------------------

namespace {

// x: [Cin,H,W] -> col: [Cin*kh*kw, Ho*Wo]
template <class T>
void im2col(const T* x, int Cin, int H, int W, int kh, int kw, int stride, int pad, int Ho, int Wo,
            T* col) {
  for (int c = 0; c < Cin; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + ((c * kh + ky) * kw + kx) * (int64_t(Ho) * Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride + kx - pad;
            dst[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                    ? x[(int64_t(c) * H + iy) * W + ix]
                                    : T(0);
          }
        }
      }
}

// col: [Cin*kh*kw, Ho*Wo] accumulated back into x grad [Cin,H,W]
template <class T>
void col2im_acc(const T* col, int Cin, int H, int W, int kh, int kw, int stride, int pad, int Ho,
                int Wo, T* gx) {
  for (int c = 0; c < Cin; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + ((c * kh + ky) * kw + kx) * (int64_t(Ho) * Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) continue;
            gx[(int64_t(c) * H + iy) * W + ix] += src[oy * Wo + ox];
          }
        }
      }
}

}  // namespace

template <class T>
TensorT<T> GraphT<T>::conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    throw shape_error("conv2d: x " + shape_str(x.shape) + " w " + shape_str(w.shape));
  const int B = static_cast<int>(x.dim(0)), Cin = static_cast<int>(x.dim(1)),
            H = static_cast<int>(x.dim(2)), W = static_cast<int>(x.dim(3));
  const int Cout = static_cast<int>(w.dim(0)), kh = static_cast<int>(w.dim(2)),
            kw = static_cast<int>(w.dim(3));
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1) throw shape_error("conv2d: kernel larger than padded input");
  const int K = Cin * kh * kw;
  TensorT<T> out({B, Cout, Ho, Wo});
  std::vector<T> col(int64_t(K) * Ho * Wo);
  for (int b = 0; b < B; ++b) {
    im2col(x.ptr() + int64_t(b) * Cin * H * W, Cin, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
    gemm(false, false, Cout, Ho * Wo, K, T(1), w.ptr(), K, col.data(), Ho * Wo, T(0),
         out.ptr() + int64_t(b) * Cout * Ho * Wo, Ho * Wo);
  }
  if (tracked(x) || tracked(w)) {
    int nx = x.node, nw = w.node;
    auto dx = x.data, dw = w.data;
    out.node = record(
        out.numel(), [nx, nw, dx, dw, B, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo,
                      K](const T* g, GraphT& gr) {
          std::vector<T> col(int64_t(K) * Ho * Wo);
          for (int b = 0; b < B; ++b) {
            const T* gb = g + int64_t(b) * Cout * Ho * Wo;
            if (nw >= 0) {
              im2col(dx->data() + int64_t(b) * Cin * H * W, Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                     col.data());
              gemm(false, true, Cout, K, Ho * Wo, T(1), gb, Ho * Wo, col.data(), Ho * Wo, T(1),
                   gr.grad_buf(nw), K);
            }
            if (nx >= 0) {
              gemm(true, false, K, Ho * Wo, Cout, T(1), dw->data(), K, gb, Ho * Wo, T(0),
                   col.data(), Ho * Wo);
              col2im_acc(col.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                         gr.grad_buf(nx) + int64_t(b) * Cin * H * W);
            }
          }
        });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::upsample_nearest2(const TensorT<T>& x) {
  if (x.rank() != 4) throw shape_error("upsample_nearest2: expected [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  TensorT<T> out({B, C, H * 2, W * 2});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t bc = 0; bc < B * C; ++bc)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xw = 0; xw < W; ++xw) {
        T v = px[(bc * H + y) * W + xw];
        int64_t base = (bc * 2 * H + 2 * y) * 2 * W + 2 * xw;
        po[base] = v;
        po[base + 1] = v;
        po[base + 2 * W] = v;
        po[base + 2 * W + 1] = v;
      }
  if (tracked(x)) {
    int nx = x.node;
    out.node = record(out.numel(), [nx, B, C, H, W](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      for (int64_t bc = 0; bc < B * C; ++bc)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xw = 0; xw < W; ++xw) {
            int64_t base = (bc * 2 * H + 2 * y) * 2 * W + 2 * xw;
            gx[(bc * H + y) * W + xw] += g[base] + g[base + 1] + g[base + 2 * W] + g[base + 2 * W + 1];
          }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::avgpool_global(const TensorT<T>& x) {
  if (x.rank() != 4) throw shape_error("avgpool_global: expected [B,C,H,W]");
  const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  TensorT<T> out({B, C});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    T s = 0;
    for (int64_t i = 0; i < HW; ++i) s += px[bc * HW + i];
    po[bc] = s / T(HW);
  }
  if (tracked(x)) {
    int nx = x.node;
    out.node = record(out.numel(), [nx, B, C, HW](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      for (int64_t bc = 0; bc < B * C; ++bc) {
        T v = g[bc] / T(HW);
        for (int64_t i = 0; i < HW; ++i) gx[bc * HW + i] += v;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> GraphT<T>::sum_all(const TensorT<T>& x) {
  TensorT<T> out({1});
  T s = 0;
  const T* px = x.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) s += px[i];
  out[0] = s;
  if (tracked(x)) {
    int nx = x.node;
    int64_t n = x.numel();
    out.node = record(1, [nx, n](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      for (int64_t i = 0; i < n; ++i) gx[i] += g[0];
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::mean_all(const TensorT<T>& x) {
  TensorT<T> out({1});
  T s = 0;
  const T* px = x.ptr();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) s += px[i];
  out[0] = s / T(n);
  if (tracked(x)) {
    int nx = x.node;
    out.node = record(1, [nx, n](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      const T v = g[0] / T(n);
      for (int64_t i = 0; i < n; ++i) gx[i] += v;
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::mean_rows(const TensorT<T>& x) {
  if (x.rank() != 2) throw shape_error("mean_rows: expected [R,C]");
  const int64_t R = x.dim(0), C = x.dim(1);
  TensorT<T> out({C});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t c = 0; c < C; ++c) po[c] = 0;
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) po[c] += px[r * C + c];
  for (int64_t c = 0; c < C; ++c) po[c] /= T(R);
  if (tracked(x)) {
    int nx = x.node;
    out.node = record(C, [nx, R, C](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) gx[r * C + c] += g[c] / T(R);
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::cosine_sim(const TensorT<T>& u, const TensorT<T>& v) {
  if (u.numel() != v.numel()) throw shape_error("cosine_sim: length mismatch");
  const int64_t n = u.numel();
  const T* pu = u.ptr();
  const T* pv = v.ptr();
  T dot = 0, nu2 = 0, nv2 = 0;
  for (int64_t i = 0; i < n; ++i) {
    dot += pu[i] * pv[i];
    nu2 += pu[i] * pu[i];
    nv2 += pv[i] * pv[i];
  }
  const T nu = std::sqrt(nu2), nv = std::sqrt(nv2);
  const T eps = T(1e-8);
  if (nu <= eps || nv <= eps)
    throw numeric_error("cosine_sim: degenerate (near-zero norm) vector");
  const T c = dot / (nu * nv);
  TensorT<T> out = TensorT<T>::scalar(c);
  if (tracked(u) || tracked(v)) {
    int iu = u.node, iv = v.node;
    auto du = u.data, dv = v.data;
    out.node = record(1, [iu, iv, du, dv, n, nu, nv, c](const T* g, GraphT& gr) {
      const T* pu = du->data();
      const T* pv = dv->data();
      if (iu >= 0) {
        T* gu = gr.grad_buf(iu);
        for (int64_t i = 0; i < n; ++i)
          gu[i] += g[0] * (pv[i] / (nu * nv) - c * pu[i] / (nu * nu));
      }
      if (iv >= 0) {
        T* gv = gr.grad_buf(iv);
        for (int64_t i = 0; i < n; ++i)
          gv[i] += g[0] * (pu[i] / (nu * nv) - c * pv[i] / (nv * nv));
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::normalize_rows(const TensorT<T>& x, T eps) {
  if (x.rank() < 1) throw shape_error("normalize_rows: rank >= 1 required");
  const int64_t C = x.shape.back();
  const int64_t R = x.numel() / C;
  TensorT<T> out(x.shape);
  auto inv_norm = std::make_shared<std::vector<T>>(R);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < R; ++r) {
    T n2 = 0;
    for (int64_t c = 0; c < C; ++c) n2 += px[r * C + c] * px[r * C + c];
    T nrm = std::sqrt(n2);
    if (nrm <= eps) throw numeric_error("normalize_rows: degenerate (near-zero norm) row");
    T inv = T(1) / nrm;
    (*inv_norm)[r] = inv;
    for (int64_t c = 0; c < C; ++c) po[r * C + c] = px[r * C + c] * inv;
  }
  if (tracked(x)) {
    int nx = x.node;
    auto dy = out.data;
    out.node = record(x.numel(), [nx, R, C, dy, inv_norm](const T* g, GraphT& gr) {
      T* gx = gr.grad_buf(nx);
      const T* py = dy->data();
      for (int64_t r = 0; r < R; ++r) {
        const T* grow = g + r * C;
        const T* yrow = py + r * C;
        T dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += grow[c] * yrow[c];
        T inv = (*inv_norm)[r];
        for (int64_t c = 0; c < C; ++c) gx[r * C + c] += inv * (grow[c] - yrow[c] * dot);
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::ce_index_targets(const TensorT<T>& logits,
                                       const std::vector<int64_t>& targets) {
  if (logits.rank() != 2) throw shape_error("ce_index_targets: expected [R,C]");
  const int64_t R = logits.dim(0), C = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != R)
    throw shape_error("ce_index_targets: target count mismatch");
  for (int64_t t : targets)
    if (t < 0 || t >= C) throw shape_error("ce_index_targets: target out of range");
  auto probs = std::make_shared<std::vector<T>>(R * C);
  const T* pl = logits.ptr();
  T loss = 0;
  for (int64_t r = 0; r < R; ++r) {
    const T* row = pl + r * C;
    T m = row[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    T sum = 0;
    for (int64_t c = 0; c < C; ++c) {
      T e = std::exp(row[c] - m);
      (*probs)[r * C + c] = e;
      sum += e;
    }
    for (int64_t c = 0; c < C; ++c) (*probs)[r * C + c] /= sum;
    loss -= std::log(std::max((*probs)[r * C + targets[r]], T(1e-30)));
  }
  TensorT<T> out = TensorT<T>::scalar(loss / T(R));
  if (tracked(logits)) {
    int nl = logits.node;
    auto tgt = std::make_shared<std::vector<int64_t>>(targets);
    out.node = record(1, [nl, R, C, probs, tgt](const T* g, GraphT& gr) {
      T* gl = gr.grad_buf(nl);
      const T scale = g[0] / T(R);
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) {
          T p = (*probs)[r * C + c];
          gl[r * C + c] += scale * (p - ((*tgt)[r] == c ? T(1) : T(0)));
        }
    });
  }
  return out;
}

template <class T>
TensorT<T> GraphT<T>::boxpool(const TensorT<T>& zl, const TensorT<T>& weights) {
  if (zl.rank() != 2 || weights.rank() != 2 || zl.dim(0) != weights.dim(0))
    throw shape_error("boxpool: zl " + shape_str(zl.shape) + " w " + shape_str(weights.shape));
  if (tracked(weights)) throw shape_error("boxpool: weights must be constants");
  const int64_t N = zl.dim(0), D = zl.dim(1), M = weights.dim(1);
  std::vector<T> mass(M, T(0));
  const T* pw = weights.ptr();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t m = 0; m < M; ++m) mass[m] += pw[n * M + m];
  for (int64_t m = 0; m < M; ++m)
    if (mass[m] <= T(0)) throw numeric_error("boxpool: box with zero coverage mass");
  TensorT<T> out({M, D});
  const T* pz = zl.ptr();
  T* po = out.ptr();
  std::fill(out.data->begin(), out.data->end(), T(0));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t m = 0; m < M; ++m) {
      const T w = pw[n * M + m];
      if (w == T(0)) continue;
      for (int64_t d = 0; d < D; ++d) po[m * D + d] += pz[n * D + d] * w;
    }
  for (int64_t m = 0; m < M; ++m)
    for (int64_t d = 0; d < D; ++d) po[m * D + d] /= mass[m];
  if (tracked(zl)) {
    int nz = zl.node;
    auto dw = weights.data;
    auto ms = std::make_shared<std::vector<T>>(mass);
    out.node = record(out.numel(), [nz, dw, ms, N, D, M](const T* g, GraphT& gr) {
      T* gz = gr.grad_buf(nz);
      const T* pw = dw->data();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t m = 0; m < M; ++m) {
          const T w = pw[n * M + m];
          if (w == T(0)) continue;
          const T f = w / (*ms)[m];
          for (int64_t d = 0; d < D; ++d) gz[n * D + d] += g[m * D + d] * f;
        }
    });
  }
  return out;
}

template class GraphT<float>;
template class GraphT<double>;

}  // namespace hcma
