#pragma once

#include <functional>
#include <span>

#include "hcma/tensor.hpp"

namespace hcma {

/// Reverse-mode tape over whole-tensor primitives. One Graph owns one
/// forward/backward sequence; it is rebuilt for every forward pass.
///
/// Every op is a Graph method: it computes the output eagerly and, when at
/// least one input is tracked, records a node whose closure routes the output
/// gradient to the tracked parents. Untracked inputs are treated as constants
/// and receive no gradient (and no gradient work is spent on them, which is
/// what makes frozen-parameter backward passes cheap).
template <class T>
class GraphT {
 public:
  GraphT() = default;
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  /// Register a tracked leaf. Returns a tensor sharing storage with `t`.
  TensorT<T> leaf(const TensorT<T>& t);

  // ---- elementwise (equal shapes, or one operand a scalar tensor [1]) ----
  TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
  TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
  TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
  TensorT<T> scale(const TensorT<T>& a, T c);
  TensorT<T> relu(const TensorT<T>& a);
  TensorT<T> gelu(const TensorT<T>& a);
  /// Normalize each last-dim slice to mean 0, variance 1 (no affine).
  TensorT<T> layernorm_lastdim(const TensorT<T>& x, T eps = T(1e-5));
  TensorT<T> softmax_lastdim(const TensorT<T>& x);

  // ---- last-dim / channel broadcasts (the only rich broadcasts supported) ----
  TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& v);
  TensorT<T> mul_rowvec(const TensorT<T>& x, const TensorT<T>& v);
  TensorT<T> add_chan(const TensorT<T>& x, const TensorT<T>& v);       // [B,C,H,W]+[C]
  TensorT<T> mul_chan(const TensorT<T>& x, const TensorT<T>& v);       // [B,C,H,W]*[C]
  TensorT<T> add_chan_per_sample(const TensorT<T>& x, const TensorT<T>& b);  // +[B,C]

  // ---- matrix products (BLAS-backed) ----
  TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);      // [m,k]x[k,n]
  TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b);   // [m,k]x[n,k]^T
  TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b);         // [g,m,k]x[g,k,n]
  TensorT<T> bmm_nt(const TensorT<T>& a, const TensorT<T>& b);      // [g,m,k]x[g,n,k]^T

  // ---- data movement ----
  TensorT<T> permute(const TensorT<T>& x, const std::vector<int>& perm);
  TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int64_t>& idx);
  TensorT<T> rows_concat(const TensorT<T>& a, const TensorT<T>& b);
  TensorT<T> tile_vert(const TensorT<T>& x, int64_t times);
  TensorT<T> stack_rows(const std::vector<TensorT<T>>& rows);

  // ---- convolution / spatial ----
  TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride, int pad);
  TensorT<T> upsample_nearest2(const TensorT<T>& x);
  TensorT<T> avgpool_global(const TensorT<T>& x);  // [B,C,H,W] -> [B,C]

  // ---- reductions / losses ----
  TensorT<T> sum_all(const TensorT<T>& x);
  TensorT<T> mean_all(const TensorT<T>& x);
  TensorT<T> mean_rows(const TensorT<T>& x);  // [R,C] -> [C]
  TensorT<T> cosine_sim(const TensorT<T>& u, const TensorT<T>& v);
  TensorT<T> normalize_rows(const TensorT<T>& x, T eps = T(1e-8));
  TensorT<T> ce_index_targets(const TensorT<T>& logits, const std::vector<int64_t>& targets);
  /// Coverage-weighted mean pool: zl [N,dv], weights [N,M] -> [M,dv].
  /// Each output row m is sum_n zl[n]*w[n,m] / sum_n w[n,m]. Weights are
  /// constants; a column with zero mass is a contract violation.
  TensorT<T> boxpool(const TensorT<T>& zl, const TensorT<T>& weights);

  // ---- backward ----
  void backward(const TensorT<T>& root);
  bool has_grad(const TensorT<T>& t) const;
  TensorT<T> grad(const TensorT<T>& t) const;  // zeros if absent

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    int64_t size;
    std::function<void(const T*, GraphT&)> back;
  };
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<std::vector<T>>> grads_;

  int record(int64_t out_size, std::function<void(const T*, GraphT&)> back);
  T* grad_buf(int node);
};

using Graph = GraphT<float>;
using GraphD = GraphT<double>;

/// True if the op should record a node.
template <class T>
inline bool tracked(const TensorT<T>& t) {
  return t.node >= 0;
}

}  // namespace hcma
