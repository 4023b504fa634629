#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "hex4d/common.h"

namespace hex4d {

// Dense row-major tensor. Most of the engine works with 2D (rows, cols)
// views; images are (H, W, C) and conv feature maps (C, H, W).
template <class S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh, S fill = S(0)) : shape(std::move(sh)) {
    v.assign(count(shape), fill);
  }

  static int64_t count(const std::vector<int>& sh) {
    int64_t n = 1;
    for (int d : sh) {
      H4D_CHECK(d >= 0, "negative dimension");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> sh) { return Tensor(std::move(sh)); }
  static Tensor full(std::vector<int> sh, S value) { return Tensor(std::move(sh), value); }
  static Tensor scalar(S value) { return Tensor({1}, value); }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  int rows() const {
    H4D_CHECK(ndim() >= 1);
    return shape[0];
  }
  // Everything after the leading dimension, flattened.
  int cols() const {
    int64_t c = rows() > 0 ? size() / rows() : count({shape.begin() + 1, shape.end()});
    return static_cast<int>(c);
  }

  S* data() { return v.data(); }
  const S* data() const { return v.data(); }
  S& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }
  S& at(int r, int c) { return v[static_cast<size_t>(r) * cols() + c]; }
  const S& at(int r, int c) const { return v[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(S value) { std::fill(v.begin(), v.end(), value); }

  bool all_finite() const {
    for (const S& x : v) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out(shape);
    for (int64_t i = 0; i < size(); ++i) out.v[static_cast<size_t>(i)] = static_cast<T>(v[static_cast<size_t>(i)]);
    return out;
  }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace hex4d
