#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "prostseg/error.hpp"

namespace prostseg::nn {

/// Dense 4-D array in NHWC layout. Convolution weights reuse the same
/// storage with dims read as (kh, kw, cin, cout).
template <typename T>
struct Tensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int h_, int w_, int c_)
      : n(n_), h(h_), w(w_), c(c_),
        data(static_cast<std::size_t>(n_) * h_ * w_ * c_, T{0}) {}

  static Tensor scalar(T v) {
    Tensor t(1, 1, 1, 1);
    t.data[0] = v;
    return t;
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return n == o.n && h == o.h && w == o.w && c == o.c; }

  std::string shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
           std::to_string(c) + ")";
  }

  T& at(int in, int ih, int iw, int ic) {
    return data[((static_cast<std::size_t>(in) * h + ih) * w + iw) * c + ic];
  }
  const T& at(int in, int ih, int iw, int ic) const {
    return data[((static_cast<std::size_t>(in) * h + ih) * w + iw) * c + ic];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace prostseg::nn
