#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sst/tile.hpp"

// Dense NCHW tensors templated on the scalar type: float for training speed,
// double where finite-difference gradient checks need the headroom.

namespace sst {

template <typename S>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<S> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, S(0)) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) throw std::invalid_argument("Tensor: negative dimension");
  }

  std::size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }

  S& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  S at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  void fill(S x) { std::fill(v.begin(), v.end(), x); }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw std::invalid_argument("Tensor+=: shape mismatch " + shape_str() + " vs " + o.shape_str());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
};

template <typename S>
inline Tensor<S> zeros_like(const Tensor<S>& t) {
  return Tensor<S>(t.n, t.c, t.h, t.w);
}

// Batch converters between tiles and tensors. Tile data is Real (double);
// tensors may narrow to float.

template <typename S>
inline Tensor<S> color_batch_to_tensor(const std::vector<const ColorTile*>& tiles) {
  if (tiles.empty()) throw std::invalid_argument("color_batch_to_tensor: empty batch");
  const int d = tiles.front()->d;
  Tensor<S> t(static_cast<int>(tiles.size()), 3, d, d);
  const std::size_t stride = static_cast<std::size_t>(3) * d * d;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i]->d != d) throw std::invalid_argument("color_batch_to_tensor: mixed tile sizes");
    for (std::size_t j = 0; j < stride; ++j) t.v[i * stride + j] = static_cast<S>(tiles[i]->pix[j]);
  }
  return t;
}

template <typename S>
inline Tensor<S> gray_batch_to_tensor(const std::vector<const GrayTile*>& tiles) {
  if (tiles.empty()) throw std::invalid_argument("gray_batch_to_tensor: empty batch");
  const int d = tiles.front()->d;
  Tensor<S> t(static_cast<int>(tiles.size()), 1, d, d);
  const std::size_t stride = static_cast<std::size_t>(d) * d;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    if (tiles[i]->d != d) throw std::invalid_argument("gray_batch_to_tensor: mixed tile sizes");
    for (std::size_t j = 0; j < stride; ++j) t.v[i * stride + j] = static_cast<S>(tiles[i]->pix[j]);
  }
  return t;
}

// Extracts sample i of a (N,3,d,d) tensor, clipping to the valid pixel range.
template <typename S>
inline ColorTile tensor_to_color_tile(const Tensor<S>& t, int i) {
  if (t.c != 3 || t.h != t.w) throw std::invalid_argument("tensor_to_color_tile: need (N,3,d,d), got " + t.shape_str());
  if (i < 0 || i >= t.n) throw std::invalid_argument("tensor_to_color_tile: sample index out of range");
  ColorTile out(t.h);
  const std::size_t stride = static_cast<std::size_t>(3) * t.h * t.w;
  for (std::size_t j = 0; j < stride; ++j) {
    const Real x = static_cast<Real>(t.v[static_cast<std::size_t>(i) * stride + j]);
    out.pix[j] = std::min<Real>(1.0, std::max<Real>(0.0, x));
  }
  return out;
}

}  // namespace sst
