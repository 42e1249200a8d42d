#pragma once

#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "sst/tensor.hpp"

// The three generator-training loss terms and their gradients with respect to
// the quantities the networks expose: pixels, discriminator probabilities and
// feature vectors. Values are reduced by batch mean throughout.

namespace sst {

inline constexpr double kGanEps = 1e-7;  // probability clamp inside logs
inline constexpr double kKlEps = 1e-7;   // floor on the generated distribution

struct LossWeights {
  double lambda_recon = 10.0;
  double lambda_fp = 1.0;

  void validate() const {
    if (!std::isfinite(lambda_recon) || !std::isfinite(lambda_fp) || lambda_recon < 0.0 || lambda_fp < 0.0)
      throw std::invalid_argument("LossWeights: weights must be finite and nonnegative");
  }

  nlohmann::json to_json() const { return {{"lambda_recon", lambda_recon}, {"lambda_fp", lambda_fp}}; }

  static LossWeights from_json(const nlohmann::json& j) {
    LossWeights w;
    w.lambda_recon = j.at("lambda_recon").get<double>();
    w.lambda_fp = j.at("lambda_fp").get<double>();
    w.validate();
    return w;
  }
};

namespace detail {

template <typename S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <typename S>
inline double clamp_prob(S p, const char* what) {
  const double v = static_cast<double>(p);
  if (!(v > -1e-9 && v < 1.0 + 1e-9))
    throw std::invalid_argument(std::string(what) + ": probability outside (0,1): " + std::to_string(v));
  return std::min(1.0 - kGanEps, std::max(kGanEps, v));
}

}  // namespace detail

// Mean over the batch of the per-sample Frobenius norm of the pixel
// difference, divided by sqrt(h*w) so the value is resolution-independent.
template <typename S>
inline double recon_loss(const Tensor<S>& generated, const Tensor<S>& original) {
  detail::require_same_shape(generated, original, "recon_loss");
  if (generated.n == 0) throw std::invalid_argument("recon_loss: empty batch");
  const std::size_t per = generated.size() / static_cast<std::size_t>(generated.n);
  const double root_px = std::sqrt(static_cast<double>(generated.h) * generated.w);
  double total = 0.0;
  for (int i = 0; i < generated.n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      const double d = static_cast<double>(generated.v[static_cast<std::size_t>(i) * per + j]) -
                       static_cast<double>(original.v[static_cast<std::size_t>(i) * per + j]);
      sq += d * d;
    }
    total += std::sqrt(sq) / root_px;
  }
  return total / static_cast<double>(generated.n);
}

template <typename S>
inline Tensor<S> recon_loss_grad(const Tensor<S>& generated, const Tensor<S>& original) {
  detail::require_same_shape(generated, original, "recon_loss_grad");
  if (generated.n == 0) throw std::invalid_argument("recon_loss_grad: empty batch");
  const std::size_t per = generated.size() / static_cast<std::size_t>(generated.n);
  const double root_px = std::sqrt(static_cast<double>(generated.h) * generated.w);
  Tensor<S> g = zeros_like(generated);
  for (int i = 0; i < generated.n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < per; ++j) {
      const double d = static_cast<double>(generated.v[static_cast<std::size_t>(i) * per + j]) -
                       static_cast<double>(original.v[static_cast<std::size_t>(i) * per + j]);
      sq += d * d;
    }
    const double norm = std::sqrt(sq);
    if (norm == 0.0) continue;  // subgradient 0 at the kink
    const double scale = 1.0 / (norm * root_px * generated.n);
    for (std::size_t j = 0; j < per; ++j)
      g.v[static_cast<std::size_t>(i) * per + j] =
          static_cast<S>((static_cast<double>(generated.v[static_cast<std::size_t>(i) * per + j]) -
                          static_cast<double>(original.v[static_cast<std::size_t>(i) * per + j])) *
                         scale);
  }
  return g;
}

// Discriminator objective: -mean log D(real) - mean log(1 - D(fake)).
template <typename S>
inline double gan_loss_d(const Tensor<S>& d_real, const Tensor<S>& d_fake) {
  if (d_real.size() == 0 || d_fake.size() == 0) throw std::invalid_argument("gan_loss_d: empty batch");
  double loss = 0.0;
  for (S p : d_real.v) loss -= std::log(detail::clamp_prob(p, "gan_loss_d")) / static_cast<double>(d_real.size());
  for (S p : d_fake.v)
    loss -= std::log(1.0 - detail::clamp_prob(p, "gan_loss_d")) / static_cast<double>(d_fake.size());
  return loss;
}

// Gradients with respect to the probabilities themselves; chaining through
// the output sigmoid turns these into (p-1)/N on real and p/N on fake logits.
template <typename S>
inline Tensor<S> gan_loss_d_grad_real(const Tensor<S>& d_real) {
  if (d_real.size() == 0) throw std::invalid_argument("gan_loss_d_grad_real: empty batch");
  Tensor<S> g = zeros_like(d_real);
  for (std::size_t i = 0; i < g.size(); ++i)
    g.v[i] = static_cast<S>(-1.0 / (detail::clamp_prob(d_real.v[i], "gan_loss_d_grad_real") *
                                    static_cast<double>(d_real.size())));
  return g;
}

template <typename S>
inline Tensor<S> gan_loss_d_grad_fake(const Tensor<S>& d_fake) {
  if (d_fake.size() == 0) throw std::invalid_argument("gan_loss_d_grad_fake: empty batch");
  Tensor<S> g = zeros_like(d_fake);
  for (std::size_t i = 0; i < g.size(); ++i)
    g.v[i] = static_cast<S>(1.0 / ((1.0 - detail::clamp_prob(d_fake.v[i], "gan_loss_d_grad_fake")) *
                                   static_cast<double>(d_fake.size())));
  return g;
}

// Non-saturating generator objective: -mean log D(fake).
template <typename S>
inline double gan_loss_g(const Tensor<S>& d_fake) {
  if (d_fake.size() == 0) throw std::invalid_argument("gan_loss_g: empty batch");
  double loss = 0.0;
  for (S p : d_fake.v) loss -= std::log(detail::clamp_prob(p, "gan_loss_g")) / static_cast<double>(d_fake.size());
  return loss;
}

template <typename S>
inline Tensor<S> gan_loss_g_grad(const Tensor<S>& d_fake) {
  if (d_fake.size() == 0) throw std::invalid_argument("gan_loss_g_grad: empty batch");
  Tensor<S> g = zeros_like(d_fake);
  for (std::size_t i = 0; i < g.size(); ++i)
    g.v[i] = static_cast<S>(-1.0 /
                            (detail::clamp_prob(d_fake.v[i], "gan_loss_g_grad") * static_cast<double>(d_fake.size())));
  return g;
}

namespace detail {

// Stable softmax of one sample's feature row.
template <typename S>
inline std::vector<double> softmax_row(const Tensor<S>& t, int i, std::size_t dim) {
  std::vector<double> p(dim);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < dim; ++j) {
    const double v = static_cast<double>(t.v[static_cast<std::size_t>(i) * dim + j]);
    if (!std::isfinite(v)) throw std::invalid_argument("feature_preserving_loss: non-finite feature value");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    p[j] = std::exp(static_cast<double>(t.v[static_cast<std::size_t>(i) * dim + j]) - mx);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace detail

// Softmax both feature vectors per sample, then KL(original || generated)
// with the generated distribution floored at kKlEps inside the log.
template <typename S>
inline double feature_preserving_loss(const Tensor<S>& feat_original, const Tensor<S>& feat_generated) {
  detail::require_same_shape(feat_original, feat_generated, "feature_preserving_loss");
  if (feat_original.n == 0) throw std::invalid_argument("feature_preserving_loss: empty batch");
  const std::size_t dim = feat_original.size() / static_cast<std::size_t>(feat_original.n);
  double total = 0.0;
  for (int i = 0; i < feat_original.n; ++i) {
    const std::vector<double> p = detail::softmax_row(feat_original, i, dim);
    const std::vector<double> q = detail::softmax_row(feat_generated, i, dim);
    double kl = 0.0;
    for (std::size_t j = 0; j < dim; ++j)
      if (p[j] > 0.0) kl += p[j] * (std::log(p[j]) - std::log(std::max(q[j], kKlEps)));
    total += kl;
  }
  return total / static_cast<double>(feat_original.n);
}

// Gradient with respect to the generated feature vector (softmax logits):
// (q - p) / batch.
template <typename S>
inline Tensor<S> feature_preserving_loss_grad(const Tensor<S>& feat_original, const Tensor<S>& feat_generated) {
  detail::require_same_shape(feat_original, feat_generated, "feature_preserving_loss_grad");
  if (feat_original.n == 0) throw std::invalid_argument("feature_preserving_loss_grad: empty batch");
  const std::size_t dim = feat_original.size() / static_cast<std::size_t>(feat_original.n);
  Tensor<S> g = zeros_like(feat_generated);
  for (int i = 0; i < feat_original.n; ++i) {
    const std::vector<double> p = detail::softmax_row(feat_original, i, dim);
    const std::vector<double> q = detail::softmax_row(feat_generated, i, dim);
    for (std::size_t j = 0; j < dim; ++j)
      g.v[static_cast<std::size_t>(i) * dim + j] =
          static_cast<S>((q[j] - p[j]) / static_cast<double>(feat_original.n));
  }
  return g;
}

inline double total_generator_loss(double recon, double gan_g, double fp, const LossWeights& w) {
  w.validate();
  if (!std::isfinite(recon) || !std::isfinite(gan_g) || !std::isfinite(fp))
    throw std::invalid_argument("total_generator_loss: non-finite term");
  return w.lambda_recon * recon + gan_g + w.lambda_fp * fp;
}

}  // namespace sst
