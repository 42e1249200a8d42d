#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <vector>

#include "sst/tile.hpp"

// Gray normalization plus the classical stain-normalization baselines:
// Reinhard statistics transfer, Macenko stain deconvolution and histogram
// specification. All operations are pure functions of their inputs.

namespace sst {

inline constexpr Real kOdEps = 1e-6;         // floor inside -log to avoid -inf
inline constexpr Real kOdBeta = 0.15;        // tissue threshold on OD norm
inline constexpr Real kAnglePercentile = 1.0;
inline constexpr Real kConcPercentile = 99.0;
inline constexpr Real kStdEps = 1e-6;        // substitute for zero channel variance

// Luma with coefficients (0.299, 0.587, 0.114). Written as offsets from the
// blue channel so R=G=B maps to exactly that value and white to exactly 1.
inline GrayTile to_gray(const ColorTile& t) {
  validate_color_tile(t, "to_gray input");
  GrayTile g(t.d);
  const std::size_t plane = static_cast<std::size_t>(t.d) * t.d;
  for (std::size_t i = 0; i < plane; ++i) {
    const Real b = t.pix[2 * plane + i];
    const Real l = b + 0.299 * (t.pix[i] - b) + 0.587 * (t.pix[plane + i] - b);
    g.pix[i] = std::min<Real>(1.0, std::max<Real>(0.0, l));
  }
  return g;
}

namespace detail {

inline const Eigen::Matrix3d& rgb_to_lms() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.3811, 0.5783, 0.0402,
                                                          0.1967, 0.7244, 0.0782,
                                                          0.0241, 0.1288, 0.8444).finished();
  return m;
}

inline const Eigen::Matrix3d& loglms_to_lab() {
  static const Eigen::Matrix3d m = [] {
    Eigen::Matrix3d b;
    b << 1, 1, 1, 1, 1, -2, 1, -1, 0;
    return Eigen::Matrix3d(Eigen::Vector3d(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(6.0),
                                           1.0 / std::sqrt(2.0)).asDiagonal() * b);
  }();
  return m;
}

inline const Eigen::Matrix3d& lms_to_rgb() {
  static const Eigen::Matrix3d m = rgb_to_lms().inverse().eval();
  return m;
}

inline const Eigen::Matrix3d& lab_to_loglms() {
  static const Eigen::Matrix3d m = loglms_to_lab().inverse().eval();
  return m;
}

inline Eigen::Vector3d rgb_to_lab(const Eigen::Vector3d& rgb) {
  const Eigen::Vector3d lms = (rgb_to_lms() * rgb).cwiseMax(1e-6);
  return loglms_to_lab() * Eigen::Vector3d(std::log10(lms[0]), std::log10(lms[1]), std::log10(lms[2]));
}

inline Eigen::Vector3d lab_to_rgb(const Eigen::Vector3d& lab) {
  const Eigen::Vector3d loglms = lab_to_loglms() * lab;
  return lms_to_rgb() *
         Eigen::Vector3d(std::pow(10.0, loglms[0]), std::pow(10.0, loglms[1]), std::pow(10.0, loglms[2]));
}

inline Eigen::Vector3d pixel_at(const ColorTile& t, std::size_t i) {
  const std::size_t plane = static_cast<std::size_t>(t.d) * t.d;
  return {t.pix[i], t.pix[plane + i], t.pix[2 * plane + i]};
}

// Linear-interpolation percentile of an unsorted sample; q in [0, 100].
template <typename T>
inline double percentile(std::vector<T> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(v[lo]) * (1.0 - frac) + static_cast<double>(v[hi]) * frac;
}

}  // namespace detail

// Target statistics for Reinhard transfer, in the decorrelated lab-style space.
struct ChannelStats {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d std = Eigen::Vector3d::Ones();

  void validate() const {
    if (!mean.allFinite() || !std.allFinite() || !(std.array() > 0.0).all())
      throw std::invalid_argument("ChannelStats: std components must be positive and finite");
  }

  nlohmann::json to_json() const {
    return {{"mean", {mean[0], mean[1], mean[2]}}, {"std", {std[0], std[1], std[2]}}};
  }

  static ChannelStats from_json(const nlohmann::json& j) {
    ChannelStats s;
    for (int c = 0; c < 3; ++c) {
      s.mean[c] = j.at("mean").at(static_cast<std::size_t>(c)).get<Real>();
      s.std[c] = j.at("std").at(static_cast<std::size_t>(c)).get<Real>();
    }
    s.validate();
    return s;
  }
};

namespace detail {

template <typename TileRange>
inline ChannelStats lab_stats(const TileRange& tiles) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sumsq = Eigen::Vector3d::Zero();
  std::size_t n = 0;
  for (const ColorTile* t : tiles) {
    const std::size_t plane = static_cast<std::size_t>(t->d) * t->d;
    for (std::size_t i = 0; i < plane; ++i) {
      const Eigen::Vector3d lab = rgb_to_lab(pixel_at(*t, i));
      sum += lab;
      sumsq += lab.cwiseProduct(lab);
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("lab_stats: no pixels");
  ChannelStats s;
  s.mean = sum / static_cast<double>(n);
  const Eigen::Vector3d var = (sumsq / static_cast<double>(n) - s.mean.cwiseProduct(s.mean)).cwiseMax(0.0);
  s.std = var.cwiseSqrt().cwiseMax(kStdEps);
  return s;
}

}  // namespace detail

inline ChannelStats fit_reinhard_stats(const ColorTile& t) {
  validate_color_tile(t, "fit_reinhard_stats input");
  return detail::lab_stats(std::array<const ColorTile*, 1>{&t});
}

// Pooled fit: one statistic over every pixel of every tile in the dataset.
inline ChannelStats fit_reinhard_stats(const Dataset& ds) {
  ds.validate();
  std::vector<const ColorTile*> ptrs;
  ptrs.reserve(ds.tiles.size());
  for (const LabeledTile& t : ds.tiles) ptrs.push_back(&t.tile);
  return detail::lab_stats(ptrs);
}

// Shift/scale each decorrelated channel of src to the target statistics.
// Source statistics are always taken from src itself.
inline ColorTile reinhard_normalize(const ColorTile& src, const ChannelStats& target) {
  validate_color_tile(src, "reinhard_normalize input");
  target.validate();
  const ChannelStats stats = fit_reinhard_stats(src);
  ColorTile out(src.d);
  const std::size_t plane = static_cast<std::size_t>(src.d) * src.d;
  for (std::size_t i = 0; i < plane; ++i) {
    const Eigen::Vector3d lab = detail::rgb_to_lab(detail::pixel_at(src, i));
    Eigen::Vector3d mapped;
    for (int c = 0; c < 3; ++c)
      mapped[c] = (lab[c] - stats.mean[c]) / stats.std[c] * target.std[c] + target.mean[c];
    const Eigen::Vector3d rgb = detail::lab_to_rgb(mapped);
    for (int c = 0; c < 3; ++c)
      out.pix[static_cast<std::size_t>(c) * plane + i] = std::min(1.0, std::max(0.0, rgb[c]));
  }
  return out;
}

// Macenko deconvolution target: two unit-norm OD stain vectors (columns) and
// the 99th-percentile reference concentrations measured alongside them.
struct StainMatrix {
  Eigen::Matrix<Real, 3, 2> vectors;
  Eigen::Vector2d max_concentrations{1.0, 1.0};

  void validate() const {
    if (!vectors.allFinite() || (vectors.array() < -1e-9).any())
      throw std::invalid_argument("StainMatrix: entries must be finite and nonnegative");
    for (int c = 0; c < 2; ++c)
      if (std::abs(vectors.col(c).norm() - 1.0) > 1e-3)
        throw std::invalid_argument("StainMatrix: columns must have unit norm");
    if (vectors(2, 0) + 1e-9 < vectors(2, 1))
      throw std::invalid_argument("StainMatrix: first column must be the more blue-absorbing stain");
    if (!max_concentrations.allFinite() || !(max_concentrations.array() > 0.0).all())
      throw std::invalid_argument("StainMatrix: max_concentrations must be positive");
  }

  nlohmann::json to_json() const {
    return {{"vectors",
             {vectors(0, 0), vectors(0, 1), vectors(1, 0), vectors(1, 1), vectors(2, 0), vectors(2, 1)}},
            {"max_concentrations", {max_concentrations[0], max_concentrations[1]}}};
  }

  static StainMatrix from_json(const nlohmann::json& j) {
    StainMatrix m;
    const auto& v = j.at("vectors");
    if (!v.is_array() || v.size() != 6)
      throw std::invalid_argument("StainMatrix: vectors must be a row-major array of 6 numbers");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 2; ++c) m.vectors(r, c) = v.at(static_cast<std::size_t>(2 * r + c)).get<Real>();
    m.max_concentrations[0] = j.at("max_concentrations").at(0).get<Real>();
    m.max_concentrations[1] = j.at("max_concentrations").at(1).get<Real>();
    m.validate();
    return m;
  }
};

namespace detail {

inline Eigen::Vector3d od_at(const ColorTile& t, std::size_t i) {
  const Eigen::Vector3d p = pixel_at(t, i);
  return {-std::log(p[0] + kOdEps), -std::log(p[1] + kOdEps), -std::log(p[2] + kOdEps)};
}

// Nonnegative least squares for two unit-norm stain columns, by active set:
// the unconstrained solution if it is feasible, else the better single-stain
// projection clipped at zero.
inline Eigen::Vector2d nnls2(const Eigen::Matrix<Real, 3, 2>& S, const Eigen::Vector3d& od) {
  const Real g01 = S.col(0).dot(S.col(1));
  const Real b0 = S.col(0).dot(od), b1 = S.col(1).dot(od);
  const Real det = 1.0 - g01 * g01;
  if (det > 1e-12) {
    const Real c0 = (b0 - g01 * b1) / det;
    const Real c1 = (b1 - g01 * b0) / det;
    if (c0 >= 0.0 && c1 >= 0.0) return {c0, c1};
  }
  const Real c0 = std::max<Real>(0.0, b0), c1 = std::max<Real>(0.0, b1);
  const Real r0 = (od - c0 * S.col(0)).squaredNorm();
  const Real r1 = (od - c1 * S.col(1)).squaredNorm();
  return r0 <= r1 ? Eigen::Vector2d{c0, 0.0} : Eigen::Vector2d{0.0, c1};
}

// Macenko estimation over a streamed OD cloud. The callback must invoke its
// argument once per pixel OD vector, in a repeatable order.
template <typename ForEachOd>
inline StainMatrix estimate_stains(const ForEachOd& for_each_od) {
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  std::size_t n_total = 0, n_tissue = 0;
  for_each_od([&](const Eigen::Vector3d& od) {
    ++n_total;
    if (od.norm() >= kOdBeta) {
      ++n_tissue;
      scatter += od * od.transpose();
    }
  });
  if (n_total == 0 || static_cast<double>(n_tissue) < 0.01 * static_cast<double>(n_total) || n_tissue < 2)
    throw std::runtime_error("estimate_stain_matrix: insufficient tissue (too few pixels above OD threshold)");

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  Eigen::Vector3d e1 = eig.eigenvectors().col(2);  // eigenvalues ascend
  Eigen::Vector3d e2 = eig.eigenvectors().col(1);
  if (e1.sum() < 0.0) e1 = -e1;  // point the dominant axis into the stain octant

  std::vector<float> angles;
  angles.reserve(n_tissue);
  for_each_od([&](const Eigen::Vector3d& od) {
    if (od.norm() >= kOdBeta) angles.push_back(static_cast<float>(std::atan2(od.dot(e2), od.dot(e1))));
  });
  const double phi_lo = percentile(angles, kAnglePercentile);
  const double phi_hi = percentile(angles, 100.0 - kAnglePercentile);

  StainMatrix m;
  const auto to_vector = [&](double phi) {
    Eigen::Vector3d v = std::cos(phi) * e1 + std::sin(phi) * e2;
    v = v.cwiseMax(0.0);  // stains absorb; clip numerical sign leakage
    const Real norm = v.norm();
    if (norm < 1e-9) throw std::runtime_error("estimate_stain_matrix: degenerate extreme direction");
    return Eigen::Vector3d(v / norm);
  };
  m.vectors.col(0) = to_vector(phi_lo);
  m.vectors.col(1) = to_vector(phi_hi);
  if (m.vectors(2, 0) < m.vectors(2, 1)) m.vectors.col(0).swap(m.vectors.col(1));

  std::vector<float> c0s, c1s;
  c0s.reserve(n_tissue);
  c1s.reserve(n_tissue);
  for_each_od([&](const Eigen::Vector3d& od) {
    if (od.norm() >= kOdBeta) {
      const Eigen::Vector2d c = nnls2(m.vectors, od);
      c0s.push_back(static_cast<float>(c[0]));
      c1s.push_back(static_cast<float>(c[1]));
    }
  });
  m.max_concentrations[0] = std::max(1e-6, percentile(c0s, kConcPercentile));
  m.max_concentrations[1] = std::max(1e-6, percentile(c1s, kConcPercentile));
  return m;
}

}  // namespace detail

// Macenko stain estimation on one tile: principal plane of the tissue OD
// cloud, extreme percentile angles within it, 99th-percentile concentrations.
inline StainMatrix estimate_stain_matrix(const ColorTile& t) {
  validate_color_tile(t, "estimate_stain_matrix input");
  const std::size_t plane = static_cast<std::size_t>(t.d) * t.d;
  return detail::estimate_stains([&](const auto& fn) {
    for (std::size_t i = 0; i < plane; ++i) fn(detail::od_at(t, i));
  });
}

// Pooled fit over the OD cloud of every tile in the dataset.
inline StainMatrix fit_stain_matrix(const Dataset& ds) {
  ds.validate();
  return detail::estimate_stains([&](const auto& fn) {
    for (const LabeledTile& t : ds.tiles) {
      const std::size_t plane = static_cast<std::size_t>(t.tile.d) * t.tile.d;
      for (std::size_t i = 0; i < plane; ++i) fn(detail::od_at(t.tile, i));
    }
  });
}

// Deconvolve src against its own estimated stains, rescale concentrations to
// the target's reference maxima and re-render through the target vectors.
inline ColorTile macenko_normalize(const ColorTile& src, const StainMatrix& target) {
  validate_color_tile(src, "macenko_normalize input");
  target.validate();
  const StainMatrix est = estimate_stain_matrix(src);
  const Eigen::Vector2d scale = target.max_concentrations.cwiseQuotient(est.max_concentrations);
  ColorTile out(src.d);
  const std::size_t plane = static_cast<std::size_t>(src.d) * src.d;
  for (std::size_t i = 0; i < plane; ++i) {
    const Eigen::Vector2d c = detail::nnls2(est.vectors, detail::od_at(src, i)).cwiseProduct(scale);
    const Eigen::Vector3d od = target.vectors * c;
    for (int ch = 0; ch < 3; ++ch)
      out.pix[static_cast<std::size_t>(ch) * plane + i] = std::min(1.0, std::max(0.0, std::exp(-od[ch])));
  }
  return out;
}

// Per-channel 256-bin target histograms for histogram specification. Each
// channel's bins are nonnegative and sum to 1.
struct HsTarget {
  std::array<std::array<double, 256>, 3> hist{};

  void validate() const {
    for (const auto& h : hist) {
      double sum = 0.0;
      for (double v : h) {
        if (!std::isfinite(v) || v < 0.0)
          throw std::invalid_argument("HsTarget: histogram bins must be finite and nonnegative");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("HsTarget: each channel histogram must sum to 1");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["histograms"] = {hist[0], hist[1], hist[2]};
    return j;
  }

  static HsTarget from_json(const nlohmann::json& j) {
    HsTarget t;
    const auto& h = j.at("histograms");
    if (!h.is_array() || h.size() != 3)
      throw std::invalid_argument("HsTarget: histograms must hold 3 channels");
    for (int c = 0; c < 3; ++c) {
      const auto& bins = h.at(static_cast<std::size_t>(c));
      if (!bins.is_array() || bins.size() != 256)
        throw std::invalid_argument("HsTarget: each channel needs 256 bins");
      for (int b = 0; b < 256; ++b)
        t.hist[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)] =
            bins.at(static_cast<std::size_t>(b)).get<double>();
    }
    t.validate();
    return t;
  }
};

namespace detail {

inline int bin_of(Real v) {
  return std::min(255, std::max(0, static_cast<int>(std::lround(v * 255.0))));
}

}  // namespace detail

inline HsTarget fit_histograms(const ColorTile& t) {
  validate_color_tile(t, "fit_histograms input");
  HsTarget out;
  const std::size_t plane = static_cast<std::size_t>(t.d) * t.d;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      out.hist[static_cast<std::size_t>(c)]
              [static_cast<std::size_t>(detail::bin_of(t.pix[static_cast<std::size_t>(c) * plane + i]))] +=
          1.0 / static_cast<double>(plane);
  return out;
}

// Pooled fit: every tile contributes every pixel to the channel histograms.
inline HsTarget fit_histograms(const Dataset& ds) {
  ds.validate();
  HsTarget out;
  std::size_t n = 0;
  for (const LabeledTile& t : ds.tiles) n += static_cast<std::size_t>(t.tile.d) * t.tile.d;
  for (const LabeledTile& t : ds.tiles) {
    const std::size_t plane = static_cast<std::size_t>(t.tile.d) * t.tile.d;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        out.hist[static_cast<std::size_t>(c)]
                [static_cast<std::size_t>(detail::bin_of(t.tile.pix[static_cast<std::size_t>(c) * plane + i]))] +=
            1.0 / static_cast<double>(n);
  }
  return out;
}

// Monotone CDF matching per channel over 256 bins. Source bins map through the
// midpoint convention CDF(b) = P(X < b) + P(X = b)/2 to the smallest target
// bin whose cumulative mass reaches that level, which makes self-specification
// the identity up to quantization and sends constant inputs to the target
// median bin.
inline ColorTile histogram_specification(const ColorTile& src, const HsTarget& target) {
  validate_color_tile(src, "histogram_specification input");
  target.validate();
  const HsTarget src_hist = fit_histograms(src);
  ColorTile out(src.d);
  const std::size_t plane = static_cast<std::size_t>(src.d) * src.d;
  for (int c = 0; c < 3; ++c) {
    std::array<double, 256> target_cdf{};
    double acc = 0.0;
    for (int b = 0; b < 256; ++b) {
      acc += target.hist[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)];
      target_cdf[static_cast<std::size_t>(b)] = acc;
    }
    std::array<int, 256> lut{};
    double below = 0.0;
    for (int b = 0; b < 256; ++b) {
      const double mass = src_hist.hist[static_cast<std::size_t>(c)][static_cast<std::size_t>(b)];
      const double level = below + mass / 2.0;
      below += mass;
      int k = 0;
      while (k < 255 && target_cdf[static_cast<std::size_t>(k)] < level - 1e-12) ++k;
      lut[static_cast<std::size_t>(b)] = k;
    }
    for (std::size_t i = 0; i < plane; ++i) {
      const int b = detail::bin_of(src.pix[static_cast<std::size_t>(c) * plane + i]);
      out.pix[static_cast<std::size_t>(c) * plane + i] = static_cast<Real>(lut[static_cast<std::size_t>(b)]) / 255.0;
    }
  }
  return out;
}

}  // namespace sst
