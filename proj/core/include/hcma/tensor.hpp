#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcma {

/// Thrown when tensor shapes do not satisfy an operation's contract.
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on numerically degenerate input (near-zero norm, empty coverage, ...).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += "x";
  }
  return out + "]";
}

/// Dense row-major n-dimensional array. Storage is shared between copies;
/// operations never mutate their inputs, so sharing is safe. `node` is the
/// tape handle assigned by a Graph when the tensor participates in autodiff
/// (-1 = untracked constant).
template <class T>
struct TensorT {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  int node = -1;

  TensorT() : data(std::make_shared<std::vector<T>>()) {}
  explicit TensorT(Shape s)
      : shape(std::move(s)), data(std::make_shared<std::vector<T>>(numel_of(shape), T(0))) {}
  TensorT(Shape s, std::vector<T> values)
      : shape(std::move(s)), data(std::make_shared<std::vector<T>>(std::move(values))) {
    if (static_cast<int64_t>(data->size()) != numel_of(shape))
      throw shape_error("tensor data length does not match shape " + shape_str(shape));
  }

  int64_t numel() const { return numel_of(shape); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T& operator[](int64_t i) { return (*data)[i]; }
  const T& operator[](int64_t i) const { return (*data)[i]; }

  /// Same storage, new shape (element count must match). Keeps the tape handle.
  TensorT reshaped(Shape s) const {
    if (numel_of(s) != numel())
      throw shape_error("reshape " + shape_str(shape) + " -> " + shape_str(s));
    TensorT out;
    out.shape = std::move(s);
    out.data = data;
    out.node = node;
    return out;
  }

  /// Deep copy with no tape handle.
  TensorT detached_copy() const {
    TensorT out;
    out.shape = shape;
    out.data = std::make_shared<std::vector<T>>(*data);
    return out;
  }

  bool all_finite() const;

  static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
  static TensorT full(Shape s, T v) {
    TensorT out(std::move(s));
    std::fill(out.data->begin(), out.data->end(), v);
    return out;
  }
  static TensorT scalar(T v) { return full({1}, v); }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <class To, class From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
  TensorT<To> out(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) (*out.data)[i] = static_cast<To>((*t.data)[i]);
  return out;
}

}  // namespace hcma
