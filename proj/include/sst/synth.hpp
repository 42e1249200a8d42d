#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "nlohmann/json.hpp"
#include "sst/rng.hpp"
#include "sst/tile.hpp"

namespace sst {

// Parameterization of one institute's stain style: two optical-density stain
// vectors (hematoxylin-like, eosin-like columns), per-stain concentration
// scales, background transmission and pixel noise.
struct StainStyleParams {
  Eigen::Matrix<Real, 3, 2> stain_matrix;  // rows = RGB, cols = stains
  Eigen::Vector2d concentration_scale{1.0, 1.0};
  Real background_intensity = 0.95;
  Real noise_sigma = 0.0;

  void validate() const {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 2; ++c) {
        const Real v = stain_matrix(r, c);
        if (!std::isfinite(v) || v < -1e-9)
          throw std::invalid_argument("StainStyleParams: stain_matrix entries must be finite and nonnegative");
      }
    for (int c = 0; c < 2; ++c) {
      const Real n = stain_matrix.col(c).norm();
      if (std::abs(n - 1.0) > 1e-3)
        throw std::invalid_argument("StainStyleParams: stain_matrix columns must have unit norm");
    }
    const Real cosang = stain_matrix.col(0).normalized().dot(stain_matrix.col(1).normalized());
    if (std::acos(std::min(1.0, std::max(-1.0, cosang))) < 10.0 * M_PI / 180.0)
      throw std::invalid_argument("StainStyleParams: stain vectors closer than 10 degrees");
    if (!(concentration_scale.array() > 0.0).all() || !concentration_scale.allFinite())
      throw std::invalid_argument("StainStyleParams: concentration_scale must be positive");
    if (!std::isfinite(background_intensity) || background_intensity <= 0.8 || background_intensity > 1.0)
      throw std::invalid_argument("StainStyleParams: background_intensity must lie in (0.8, 1.0]");
    if (!std::isfinite(noise_sigma) || noise_sigma < 0.0)
      throw std::invalid_argument("StainStyleParams: noise_sigma must be nonnegative");
  }

  // Copy with exactly unit-norm columns (inputs may carry rounded JSON digits).
  StainStyleParams normalized() const {
    StainStyleParams p = *this;
    for (int c = 0; c < 2; ++c) {
      for (int r = 0; r < 3; ++r) p.stain_matrix(r, c) = std::max(0.0, p.stain_matrix(r, c));
      p.stain_matrix.col(c).normalize();
    }
    return p;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["stain_matrix"] = {stain_matrix(0, 0), stain_matrix(0, 1), stain_matrix(1, 0),
                         stain_matrix(1, 1), stain_matrix(2, 0), stain_matrix(2, 1)};
    j["concentration_scale"] = {concentration_scale[0], concentration_scale[1]};
    j["background_intensity"] = background_intensity;
    j["noise_sigma"] = noise_sigma;
    return j;
  }

  static StainStyleParams from_json(const nlohmann::json& j) {
    StainStyleParams p;
    const auto& m = j.at("stain_matrix");
    if (!m.is_array() || m.size() != 6)
      throw std::invalid_argument("StainStyleParams: stain_matrix must be a row-major array of 6 numbers");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 2; ++c) p.stain_matrix(r, c) = m.at(2 * r + c).get<Real>();
    const auto& s = j.at("concentration_scale");
    if (!s.is_array() || s.size() != 2)
      throw std::invalid_argument("StainStyleParams: concentration_scale must hold 2 numbers");
    p.concentration_scale[0] = s.at(0).get<Real>();
    p.concentration_scale[1] = s.at(1).get<Real>();
    p.background_intensity = j.at("background_intensity").get<Real>();
    p.noise_sigma = j.at("noise_sigma").get<Real>();
    p.validate();
    return p;
  }
};

// Per-pixel stain concentration fields before style scaling. Plane 0 follows
// the nuclei layout (hematoxylin-like), plane 1 the stroma (eosin-like).
struct ConcentrationField {
  int d = 0;
  std::vector<Real> c;  // size 2*d*d

  ConcentrationField() = default;
  explicit ConcentrationField(int d_) : d(d_), c(static_cast<std::size_t>(2) * d_ * d_, 0.0) {}

  Real& at(int s, int y, int x) { return c[(static_cast<std::size_t>(s) * d + y) * d + x]; }
  Real at(int s, int y, int x) const { return c[(static_cast<std::size_t>(s) * d + y) * d + x]; }
};

// Latent tissue layout: a blob field of nuclei whose density and size depend
// on the label (tumor tiles are denser with larger nuclei) over a smooth
// stroma background. Includes a per-tile global staining-strength jitter so
// tile mean color genuinely varies across a dataset. Pure function of
// (label, d, seed).
inline ConcentrationField synth_concentrations(int label, int d, std::uint64_t seed) {
  if (label != 0 && label != 1) throw std::invalid_argument("synth_concentrations: label must be 0 or 1");
  if (!is_pow2(d) || d < 16) throw std::invalid_argument("synth_concentrations: d must be a power of two >= 16");

  Rng rng(mix_seed(0x537461696EULL, seed, static_cast<std::uint64_t>(label * 2 + (d & 1))));
  const Real scale = static_cast<Real>(d) / 64.0;
  const Real jitter = rng.uniform(0.82, 1.18);

  ConcentrationField f(d);

  // nuclei blobs
  const int base_count = (label == 1) ? 26 : 9;
  const int count = std::max(1, static_cast<int>(std::lround(base_count * scale * scale * rng.uniform(0.8, 1.2))));
  struct Blob {
    Real x, y, r, a;
  };
  std::vector<Blob> nuclei(count);
  for (auto& b : nuclei) {
    b.x = rng.uniform(0.0, d);
    b.y = rng.uniform(0.0, d);
    const Real r64 = (label == 1) ? rng.uniform(2.2, 3.6) : rng.uniform(1.4, 2.4);
    b.r = std::max(0.8, r64 * scale);
    b.a = rng.uniform(0.75, 1.25);
  }

  // broad stroma blobs
  const int n_stroma = 5;
  std::vector<Blob> stroma(n_stroma);
  for (auto& b : stroma) {
    b.x = rng.uniform(0.0, d);
    b.y = rng.uniform(0.0, d);
    b.r = rng.uniform(d / 5.0, d / 2.0);
    b.a = rng.uniform(0.25, 0.6);
  }

  for (int y = 0; y < d; ++y) {
    for (int x = 0; x < d; ++x) {
      Real h = 0.0;
      for (const auto& b : nuclei) {
        const Real dx = x - b.x, dy = y - b.y;
        h += b.a * std::exp(-(dx * dx + dy * dy) / (2.0 * b.r * b.r));
      }
      Real s = 0.35;
      for (const auto& b : stroma) {
        const Real dx = x - b.x, dy = y - b.y;
        s += b.a * std::exp(-(dx * dx + dy * dy) / (2.0 * b.r * b.r));
      }
      const Real hc = std::min(h, 1.6);
      f.at(0, y, x) = jitter * hc;
      // Dense nuclei displace stroma, so nucleus cores approach pure
      // hematoxylin; stain estimation needs near-pure pixels of both stains.
      f.at(1, y, x) = jitter * std::min(s, 1.2) * std::exp(-5.0 * hc);
    }
  }
  return f;
}

// Beer-Lambert rendering: pixel = background * exp(-stain_matrix * e) with
// e = concentration_scale elementwise-scaled fields, plus optional Gaussian
// noise, clipped to [0, 1].
inline ColorTile render_stained(const StainStyleParams& style, const ConcentrationField& conc,
                                std::uint64_t noise_seed) {
  style.validate();
  const StainStyleParams st = style.normalized();
  ColorTile tile(conc.d);
  const int d = conc.d;
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < d; ++y) {
      for (int x = 0; x < d; ++x) {
        const Real e0 = st.concentration_scale[0] * conc.at(0, y, x);
        const Real e1 = st.concentration_scale[1] * conc.at(1, y, x);
        const Real od = st.stain_matrix(ch, 0) * e0 + st.stain_matrix(ch, 1) * e1;
        tile.at(ch, y, x) = st.background_intensity * std::exp(-od);
      }
    }
  }
  if (st.noise_sigma > 0.0) {
    Rng noise(mix_seed(0x4E6F697365ULL, noise_seed));
    for (auto& v : tile.pix) v += noise.normal(0.0, st.noise_sigma);
  }
  for (auto& v : tile.pix) v = std::min(1.0, std::max(0.0, v));
  return tile;
}

// Deterministic synthetic stained tile for one institute style.
inline LabeledTile synth_tile(const StainStyleParams& style, int label, int d, std::uint64_t seed) {
  const ConcentrationField conc = synth_concentrations(label, d, seed);
  LabeledTile t;
  t.tile = render_stained(style, conc, mix_seed(seed, 0x74696C65ULL));
  t.label = label;
  return t;
}

// Classic H&E-like optical-density vectors.
inline StainStyleParams default_style_a() {
  StainStyleParams p;
  p.stain_matrix << 0.65, 0.07, 0.70, 0.99, 0.29, 0.11;
  p.stain_matrix.col(0).normalize();
  p.stain_matrix.col(1).normalize();
  p.concentration_scale << 0.9, 0.8;
  p.background_intensity = 0.96;
  p.noise_sigma = 0.01;
  return p;
}

// A second institute: each stain vector sits about 35 degrees away from its
// style-A counterpart, with concentrations rescaled so the mean gray level
// matches style A. Gray renderings stay comparable while RGB shifts hard
// enough that a classifier trained on style A degrades visibly on style B.
inline StainStyleParams default_style_b() {
  StainStyleParams p;
  p.stain_matrix << 0.364379, 0.388592, 0.505987, 0.737356, 0.781796, 0.552542;
  p.stain_matrix.col(0).normalize();
  p.stain_matrix.col(1).normalize();
  p.concentration_scale << 1.05423, 0.729731;
  p.background_intensity = 0.96;
  p.noise_sigma = 0.01;
  return p;
}

// Desk-scale benchmark: train/val drawn from style A, test from style B with
// independently drawn tissue layouts. Balanced labels throughout.
inline std::array<Dataset, 3> make_synthetic_benchmark(const StainStyleParams& style_a,
                                                       const StainStyleParams& style_b, int n_train,
                                                       int n_val, int n_test, int d,
                                                       std::uint64_t seed) {
  style_a.validate();
  style_b.validate();
  const std::array<int, 3> counts{n_train, n_val, n_test};
  for (int n : counts) {
    if (n <= 0) throw std::invalid_argument("make_synthetic_benchmark: counts must be positive");
    if (n % 2 != 0) throw std::invalid_argument("make_synthetic_benchmark: counts must be even for balanced classes");
  }
  std::array<Dataset, 3> out;
  const std::array<Split, 3> splits{Split::train, Split::val, Split::test};
  for (int s = 0; s < 3; ++s) {
    const bool is_test = (s == 2);
    const StainStyleParams& style = is_test ? style_b : style_a;
    Dataset ds;
    ds.split = splits[static_cast<std::size_t>(s)];
    ds.tiles.reserve(static_cast<std::size_t>(counts[static_cast<std::size_t>(s)]));
    for (int i = 0; i < counts[static_cast<std::size_t>(s)]; ++i) {
      LabeledTile t = synth_tile(style, i % 2, d, mix_seed(seed, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(i)));
      t.institute = is_test ? "B" : "A";
      ds.tiles.push_back(std::move(t));
    }
    out[static_cast<std::size_t>(s)] = std::move(ds);
  }
  return out;
}

}  // namespace sst
