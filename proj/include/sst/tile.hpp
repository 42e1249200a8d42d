#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sst {

using Real = double;

inline bool is_pow2(int x) { return x > 0 && (x & (x - 1)) == 0; }

// d x d RGB tile, values in [0, 1]. Planar channel-major storage (c, y, x).
struct ColorTile {
  int d = 0;
  std::vector<Real> pix;  // size 3*d*d

  ColorTile() = default;
  explicit ColorTile(int d_) : d(d_), pix(static_cast<std::size_t>(3) * d_ * d_, 0.0) {}

  Real& at(int c, int y, int x) { return pix[(static_cast<std::size_t>(c) * d + y) * d + x]; }
  Real at(int c, int y, int x) const { return pix[(static_cast<std::size_t>(c) * d + y) * d + x]; }

  static ColorTile filled(int d, Real r, Real g, Real b) {
    ColorTile t(d);
    const std::size_t plane = static_cast<std::size_t>(d) * d;
    for (std::size_t i = 0; i < plane; ++i) {
      t.pix[i] = r;
      t.pix[plane + i] = g;
      t.pix[2 * plane + i] = b;
    }
    return t;
  }
};

// d x d single-channel tile, values in [0, 1].
struct GrayTile {
  int d = 0;
  std::vector<Real> pix;  // size d*d

  GrayTile() = default;
  explicit GrayTile(int d_) : d(d_), pix(static_cast<std::size_t>(d_) * d_, 0.0) {}

  Real& at(int y, int x) { return pix[static_cast<std::size_t>(y) * d + x]; }
  Real at(int y, int x) const { return pix[static_cast<std::size_t>(y) * d + x]; }
};

inline void validate_color_tile(const ColorTile& t, const std::string& what = "ColorTile") {
  if (!is_pow2(t.d)) throw std::invalid_argument(what + ": tile size must be a positive power of two, got " + std::to_string(t.d));
  if (t.pix.size() != static_cast<std::size_t>(3) * t.d * t.d)
    throw std::invalid_argument(what + ": pixel buffer size does not match 3*d*d");
  for (Real v : t.pix) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument(what + ": pixel values must be finite and within [0, 1]");
  }
}

inline void validate_gray_tile(const GrayTile& t, const std::string& what = "GrayTile") {
  if (t.d <= 0) throw std::invalid_argument(what + ": tile size must be positive");
  if (t.pix.size() != static_cast<std::size_t>(t.d) * t.d)
    throw std::invalid_argument(what + ": pixel buffer size does not match d*d");
  for (Real v : t.pix) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw std::invalid_argument(what + ": pixel values must be finite and within [0, 1]");
  }
}

struct LabeledTile {
  ColorTile tile;
  int label = 0;  // 0 = normal, 1 = tumor
  std::string institute;
};

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct Dataset {
  std::vector<LabeledTile> tiles;
  Split split = Split::train;

  int tile_d() const { return tiles.empty() ? 0 : tiles.front().tile.d; }

  std::size_t count(int label) const {
    std::size_t n = 0;
    for (const auto& t : tiles) n += (t.label == label) ? 1 : 0;
    return n;
  }

  void validate() const {
    if (tiles.empty()) throw std::invalid_argument("Dataset: empty");
    const int d = tiles.front().tile.d;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      if (tiles[i].tile.d != d)
        throw std::invalid_argument("Dataset: inconsistent tile sizes (tile " + std::to_string(i) + ")");
      if (tiles[i].label != 0 && tiles[i].label != 1)
        throw std::invalid_argument("Dataset: label outside {0,1} (tile " + std::to_string(i) + ")");
    }
  }
};

}  // namespace sst
