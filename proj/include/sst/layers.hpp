#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sst/rng.hpp"
#include "sst/tensor.hpp"

// Layer-based backpropagation. Each layer owns its parameters, their gradient
// accumulators and the cache written by the most recent forward pass. The
// contract is strictly one backward per cached forward: interleaving two
// forwards before a backward overwrites the cache the backward needs.

namespace sst {

// train: batch statistics, cache for backward, update running stats.
// grad_eval: running statistics, cache for backward (frozen normalization).
// infer: running statistics, no cache.
enum class Pass { train, grad_eval, infer };

template <typename S>
struct ParamRef {
  std::string name;
  Tensor<S>* value = nullptr;
  Tensor<S>* grad = nullptr;   // null for non-trainable state
  bool trainable = true;
};

template <typename S>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<S> forward(const Tensor<S>& x, Pass pass) = 0;
  // Consumes the cache of the last forward; accumulates into parameter grads.
  virtual Tensor<S> backward(const Tensor<S>& dy) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) { (void)prefix, (void)out; }
};

namespace detail {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
inline void im2col(const S* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow, S* col) {
  for (int ic = 0; ic < c; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        S* row = col + ((static_cast<std::size_t>(ic) * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            row[static_cast<std::size_t>(oy) * ow + ox] =
                (iy >= 0 && iy < h && ix >= 0 && ix < w)
                    ? x[(static_cast<std::size_t>(ic) * h + iy) * w + ix]
                    : S(0);
          }
        }
      }
}

template <typename S>
inline void col2im_add(const S* col, int c, int h, int w, int k, int stride, int pad, int oh, int ow, S* x) {
  for (int ic = 0; ic < c; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const S* row = col + ((static_cast<std::size_t>(ic) * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w)
              x[(static_cast<std::size_t>(ic) * h + iy) * w + ix] += row[static_cast<std::size_t>(oy) * ow + ox];
          }
        }
      }
}

}  // namespace detail

template <typename S>
class Conv2d : public Layer<S> {
 public:
  Conv2d(int in_c, int out_c, int k, int stride, int pad, bool use_bias, Rng& rng)
      : in_c_(in_c), out_c_(out_c), k_(k), stride_(stride), pad_(pad), use_bias_(use_bias),
        weight_(out_c, in_c, k, k), dweight_(out_c, in_c, k, k) {
    if (in_c <= 0 || out_c <= 0 || k <= 0 || stride <= 0 || pad < 0)
      throw std::invalid_argument("Conv2d: bad configuration");
    const double std = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
    for (S& v : weight_.v) v = static_cast<S>(rng.normal() * std);
    if (use_bias_) {
      bias_ = Tensor<S>(1, out_c, 1, 1);
      dbias_ = Tensor<S>(1, out_c, 1, 1);
    }
  }

  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    if (x.c != in_c_) throw std::invalid_argument("Conv2d: expected " + std::to_string(in_c_) + " channels, got " + x.shape_str());
    const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("Conv2d: input " + x.shape_str() + " too small for kernel");
    Tensor<S> y(x.n, out_c_, oh, ow);
    col_.resize(static_cast<std::size_t>(in_c_) * k_ * k_ * oh * ow);
    const int kk = in_c_ * k_ * k_;
    detail::ConstMatMap<S> W(weight_.v.data(), out_c_, kk);
    for (int i = 0; i < x.n; ++i) {
      detail::im2col(&x.v[static_cast<std::size_t>(i) * in_c_ * x.h * x.w], in_c_, x.h, x.w, k_, stride_, pad_, oh, ow,
                     col_.data());
      detail::ConstMatMap<S> C(col_.data(), kk, oh * ow);
      detail::MatMap<S> Y(&y.v[static_cast<std::size_t>(i) * out_c_ * oh * ow], out_c_, oh * ow);
      Y.noalias() = W * C;
      if (use_bias_)
        for (int oc = 0; oc < out_c_; ++oc) Y.row(oc).array() += bias_.v[static_cast<std::size_t>(oc)];
    }
    if (pass != Pass::infer) x_ = x;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    if (x_.size() == 0) throw std::logic_error("Conv2d: backward without cached forward");
    const int oh = dy.h, ow = dy.w;
    Tensor<S> dx = zeros_like(x_);
    const int kk = in_c_ * k_ * k_;
    std::vector<S> dcol(static_cast<std::size_t>(kk) * oh * ow);
    detail::ConstMatMap<S> W(weight_.v.data(), out_c_, kk);
    detail::MatMap<S> dW(dweight_.v.data(), out_c_, kk);
    for (int i = 0; i < x_.n; ++i) {
      detail::im2col(&x_.v[static_cast<std::size_t>(i) * in_c_ * x_.h * x_.w], in_c_, x_.h, x_.w, k_, stride_, pad_,
                     oh, ow, col_.data());
      detail::ConstMatMap<S> C(col_.data(), kk, oh * ow);
      detail::ConstMatMap<S> dY(&dy.v[static_cast<std::size_t>(i) * out_c_ * oh * ow], out_c_, oh * ow);
      dW.noalias() += dY * C.transpose();
      // Bias grads are summed by a fixed-order scalar loop: Eigen's vectorized
      // redux splits at an alignment-dependent point of the freshly allocated
      // dy buffer, which lets seed-equal runs drift apart by a few ulp.
      if (use_bias_) {
        for (int oc = 0; oc < out_c_; ++oc) {
          S acc = 0;
          for (int p = 0; p < oh * ow; ++p) acc += dY(oc, p);
          dbias_.v[static_cast<std::size_t>(oc)] += acc;
        }
      }
      detail::MatMap<S> dC(dcol.data(), kk, oh * ow);
      dC.noalias() = W.transpose() * dY;
      detail::col2im_add(dcol.data(), in_c_, x_.h, x_.w, k_, stride_, pad_, oh, ow,
                         &dx.v[static_cast<std::size_t>(i) * in_c_ * x_.h * x_.w]);
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) override {
    out.push_back({prefix + ".weight", &weight_, &dweight_, true});
    if (use_bias_) out.push_back({prefix + ".bias", &bias_, &dbias_, true});
  }

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  bool use_bias_;
  Tensor<S> weight_, dweight_, bias_, dbias_;
  Tensor<S> x_;
  std::vector<S> col_;
};

template <typename S>
class Dense : public Layer<S> {
 public:
  Dense(int in, int out, Rng& rng)
      : in_(in), out_(out), weight_(out, in, 1, 1), dweight_(out, in, 1, 1), bias_(1, out, 1, 1), dbias_(1, out, 1, 1) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("Dense: bad configuration");
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    for (S& v : weight_.v) v = static_cast<S>(rng.normal() * std);
  }

  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    if (static_cast<int>(x.size()) / std::max(1, x.n) != in_)
      throw std::invalid_argument("Dense: expected " + std::to_string(in_) + " inputs per sample, got " + x.shape_str());
    Tensor<S> y(x.n, out_, 1, 1);
    detail::ConstMatMap<S> X(x.v.data(), x.n, in_);
    detail::ConstMatMap<S> W(weight_.v.data(), out_, in_);
    detail::MatMap<S> Y(y.v.data(), x.n, out_);
    Y.noalias() = X * W.transpose();
    for (int o = 0; o < out_; ++o) Y.col(o).array() += bias_.v[static_cast<std::size_t>(o)];
    if (pass != Pass::infer) x_ = x;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    if (x_.size() == 0) throw std::logic_error("Dense: backward without cached forward");
    Tensor<S> dx = zeros_like(x_);
    detail::ConstMatMap<S> X(x_.v.data(), x_.n, in_);
    detail::ConstMatMap<S> dY(dy.v.data(), x_.n, out_);
    detail::ConstMatMap<S> W(weight_.v.data(), out_, in_);
    detail::MatMap<S> dW(dweight_.v.data(), out_, in_);
    detail::MatMap<S> dX(dx.v.data(), x_.n, in_);
    dW.noalias() += dY.transpose() * X;
    // fixed-order sum, same reproducibility concern as the Conv2d bias grad
    for (int o = 0; o < out_; ++o) {
      S acc = 0;
      for (int i = 0; i < x_.n; ++i) acc += dY(i, o);
      dbias_.v[static_cast<std::size_t>(o)] += acc;
    }
    dX.noalias() = dY * W;
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) override {
    out.push_back({prefix + ".weight", &weight_, &dweight_, true});
    out.push_back({prefix + ".bias", &bias_, &dbias_, true});
  }

 private:
  int in_, out_;
  Tensor<S> weight_, dweight_, bias_, dbias_;
  Tensor<S> x_;
};

// Channel normalization over (N,H,W) with running statistics for frozen and
// inference passes. Backward differentiates through the batch statistics when
// the forward used them, and treats running statistics as constants otherwise.
template <typename S>
class BatchNorm2d : public Layer<S> {
 public:
  explicit BatchNorm2d(int c, double momentum = 0.1, double eps = 1e-5)
      : c_(c), momentum_(momentum), eps_(eps), gamma_(1, c, 1, 1), dgamma_(1, c, 1, 1), beta_(1, c, 1, 1),
        dbeta_(1, c, 1, 1), running_mean_(1, c, 1, 1), running_var_(1, c, 1, 1) {
    if (c <= 0) throw std::invalid_argument("BatchNorm2d: bad channel count");
    gamma_.fill(S(1));
    running_var_.fill(S(1));
  }

  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    if (x.c != c_) throw std::invalid_argument("BatchNorm2d: expected " + std::to_string(c_) + " channels, got " + x.shape_str());
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const std::size_t m = static_cast<std::size_t>(x.n) * plane;
    Tensor<S> y = zeros_like(x);
    const bool use_batch = pass == Pass::train;
    if (pass != Pass::infer) {
      xhat_ = zeros_like(x);
      inv_std_.assign(static_cast<std::size_t>(c_), S(0));
      batch_backward_ = use_batch;
    }
    for (int ch = 0; ch < c_; ++ch) {
      double mean, var;
      if (use_batch) {
        double sum = 0, sumsq = 0;
        for (int i = 0; i < x.n; ++i) {
          const S* p = &x.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
          for (std::size_t j = 0; j < plane; ++j) {
            sum += p[j];
            sumsq += static_cast<double>(p[j]) * p[j];
          }
        }
        mean = sum / static_cast<double>(m);
        var = std::max(0.0, sumsq / static_cast<double>(m) - mean * mean);
        const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        running_mean_.v[static_cast<std::size_t>(ch)] =
            static_cast<S>((1.0 - momentum_) * running_mean_.v[static_cast<std::size_t>(ch)] + momentum_ * mean);
        running_var_.v[static_cast<std::size_t>(ch)] =
            static_cast<S>((1.0 - momentum_) * running_var_.v[static_cast<std::size_t>(ch)] + momentum_ * unbiased);
      } else {
        mean = running_mean_.v[static_cast<std::size_t>(ch)];
        var = running_var_.v[static_cast<std::size_t>(ch)];
      }
      const double inv = 1.0 / std::sqrt(var + eps_);
      const double g = gamma_.v[static_cast<std::size_t>(ch)], b = beta_.v[static_cast<std::size_t>(ch)];
      if (pass != Pass::infer) inv_std_[static_cast<std::size_t>(ch)] = static_cast<S>(inv);
      for (int i = 0; i < x.n; ++i) {
        const S* p = &x.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        S* q = &y.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        S* xh = pass != Pass::infer ? &xhat_.v[(static_cast<std::size_t>(i) * c_ + ch) * plane] : nullptr;
        for (std::size_t j = 0; j < plane; ++j) {
          const double h = (p[j] - mean) * inv;
          if (xh) xh[j] = static_cast<S>(h);
          q[j] = static_cast<S>(g * h + b);
        }
      }
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    if (xhat_.size() == 0) throw std::logic_error("BatchNorm2d: backward without cached forward");
    const std::size_t plane = static_cast<std::size_t>(dy.h) * dy.w;
    const std::size_t m = static_cast<std::size_t>(dy.n) * plane;
    Tensor<S> dx = zeros_like(dy);
    for (int ch = 0; ch < c_; ++ch) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int i = 0; i < dy.n; ++i) {
        const S* pdy = &dy.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        const S* ph = &xhat_.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        for (std::size_t j = 0; j < plane; ++j) {
          sum_dy += pdy[j];
          sum_dy_xhat += static_cast<double>(pdy[j]) * ph[j];
        }
      }
      dgamma_.v[static_cast<std::size_t>(ch)] += static_cast<S>(sum_dy_xhat);
      dbeta_.v[static_cast<std::size_t>(ch)] += static_cast<S>(sum_dy);
      const double g = gamma_.v[static_cast<std::size_t>(ch)];
      const double inv = inv_std_[static_cast<std::size_t>(ch)];
      for (int i = 0; i < dy.n; ++i) {
        const S* pdy = &dy.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        const S* ph = &xhat_.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        S* pdx = &dx.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        for (std::size_t j = 0; j < plane; ++j) {
          if (batch_backward_) {
            pdx[j] = static_cast<S>(g * inv *
                                    (pdy[j] - sum_dy / static_cast<double>(m) -
                                     ph[j] * sum_dy_xhat / static_cast<double>(m)));
          } else {
            pdx[j] = static_cast<S>(g * inv * pdy[j]);
          }
        }
      }
    }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) override {
    out.push_back({prefix + ".gamma", &gamma_, &dgamma_, true});
    out.push_back({prefix + ".beta", &beta_, &dbeta_, true});
    out.push_back({prefix + ".running_mean", &running_mean_, nullptr, false});
    out.push_back({prefix + ".running_var", &running_var_, nullptr, false});
  }

 private:
  int c_;
  double momentum_, eps_;
  Tensor<S> gamma_, dgamma_, beta_, dbeta_, running_mean_, running_var_;
  Tensor<S> xhat_;
  std::vector<S> inv_std_;
  bool batch_backward_ = false;
};

// Per-sample, per-channel normalization; identical in every pass.
template <typename S>
class InstanceNorm2d : public Layer<S> {
 public:
  explicit InstanceNorm2d(int c, double eps = 1e-5)
      : c_(c), eps_(eps), gamma_(1, c, 1, 1), dgamma_(1, c, 1, 1), beta_(1, c, 1, 1), dbeta_(1, c, 1, 1) {
    if (c <= 0) throw std::invalid_argument("InstanceNorm2d: bad channel count");
    gamma_.fill(S(1));
  }

  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    if (x.c != c_) throw std::invalid_argument("InstanceNorm2d: expected " + std::to_string(c_) + " channels, got " + x.shape_str());
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    Tensor<S> y = zeros_like(x);
    if (pass != Pass::infer) {
      xhat_ = zeros_like(x);
      inv_std_.assign(static_cast<std::size_t>(x.n) * c_, S(0));
    }
    for (int i = 0; i < x.n; ++i)
      for (int ch = 0; ch < c_; ++ch) {
        const S* p = &x.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        double sum = 0, sumsq = 0;
        for (std::size_t j = 0; j < plane; ++j) {
          sum += p[j];
          sumsq += static_cast<double>(p[j]) * p[j];
        }
        const double mean = sum / static_cast<double>(plane);
        const double var = std::max(0.0, sumsq / static_cast<double>(plane) - mean * mean);
        const double inv = 1.0 / std::sqrt(var + eps_);
        const double g = gamma_.v[static_cast<std::size_t>(ch)], b = beta_.v[static_cast<std::size_t>(ch)];
        S* q = &y.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        S* xh = pass != Pass::infer ? &xhat_.v[(static_cast<std::size_t>(i) * c_ + ch) * plane] : nullptr;
        if (pass != Pass::infer) inv_std_[static_cast<std::size_t>(i) * c_ + ch] = static_cast<S>(inv);
        for (std::size_t j = 0; j < plane; ++j) {
          const double h = (p[j] - mean) * inv;
          if (xh) xh[j] = static_cast<S>(h);
          q[j] = static_cast<S>(g * h + b);
        }
      }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    if (xhat_.size() == 0) throw std::logic_error("InstanceNorm2d: backward without cached forward");
    const std::size_t plane = static_cast<std::size_t>(dy.h) * dy.w;
    Tensor<S> dx = zeros_like(dy);
    for (int i = 0; i < dy.n; ++i)
      for (int ch = 0; ch < c_; ++ch) {
        const S* pdy = &dy.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        const S* ph = &xhat_.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (std::size_t j = 0; j < plane; ++j) {
          sum_dy += pdy[j];
          sum_dy_xhat += static_cast<double>(pdy[j]) * ph[j];
        }
        dgamma_.v[static_cast<std::size_t>(ch)] += static_cast<S>(sum_dy_xhat);
        dbeta_.v[static_cast<std::size_t>(ch)] += static_cast<S>(sum_dy);
        const double g = gamma_.v[static_cast<std::size_t>(ch)];
        const double inv = inv_std_[static_cast<std::size_t>(i) * c_ + ch];
        S* pdx = &dx.v[(static_cast<std::size_t>(i) * c_ + ch) * plane];
        for (std::size_t j = 0; j < plane; ++j)
          pdx[j] = static_cast<S>(g * inv *
                                  (pdy[j] - sum_dy / static_cast<double>(plane) -
                                   ph[j] * sum_dy_xhat / static_cast<double>(plane)));
      }
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) override {
    out.push_back({prefix + ".gamma", &gamma_, &dgamma_, true});
    out.push_back({prefix + ".beta", &beta_, &dbeta_, true});
  }

 private:
  int c_;
  double eps_;
  Tensor<S> gamma_, dgamma_, beta_, dbeta_;
  Tensor<S> xhat_;
  std::vector<S> inv_std_;
};

template <typename S>
class LeakyReLU : public Layer<S> {
 public:
  explicit LeakyReLU(double slope = 0.0) : slope_(slope) {}

  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    Tensor<S> y = x;
    for (S& v : y.v) v = v > S(0) ? v : static_cast<S>(slope_ * v);
    if (pass != Pass::infer) x_ = x;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    if (x_.size() == 0) throw std::logic_error("LeakyReLU: backward without cached forward");
    Tensor<S> dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
      if (x_.v[i] <= S(0)) dx.v[i] = static_cast<S>(slope_ * dx.v[i]);
    return dx;
  }

 private:
  double slope_;
  Tensor<S> x_;
};

template <typename S>
class Sigmoid : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    Tensor<S> y = x;
    for (S& v : y.v) v = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    if (pass != Pass::infer) y_ = y;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    if (y_.size() == 0) throw std::logic_error("Sigmoid: backward without cached forward");
    Tensor<S> dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= y_.v[i] * (S(1) - y_.v[i]);
    return dx;
  }

 private:
  Tensor<S> y_;
};

template <typename S>
class UpsampleNearest2x : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    (void)pass;
    Tensor<S> y(x.n, x.c, 2 * x.h, 2 * x.w);
    for (int i = 0; i < x.n; ++i)
      for (int ch = 0; ch < x.c; ++ch)
        for (int iy = 0; iy < x.h; ++iy)
          for (int ix = 0; ix < x.w; ++ix) {
            const S v = x.at(i, ch, iy, ix);
            y.at(i, ch, 2 * iy, 2 * ix) = v;
            y.at(i, ch, 2 * iy, 2 * ix + 1) = v;
            y.at(i, ch, 2 * iy + 1, 2 * ix) = v;
            y.at(i, ch, 2 * iy + 1, 2 * ix + 1) = v;
          }
    in_h_ = x.h;
    in_w_ = x.w;
    in_n_ = x.n;
    in_c_ = x.c;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx(in_n_, in_c_, in_h_, in_w_);
    for (int i = 0; i < in_n_; ++i)
      for (int ch = 0; ch < in_c_; ++ch)
        for (int iy = 0; iy < in_h_; ++iy)
          for (int ix = 0; ix < in_w_; ++ix)
            dx.at(i, ch, iy, ix) = dy.at(i, ch, 2 * iy, 2 * ix) + dy.at(i, ch, 2 * iy, 2 * ix + 1) +
                                   dy.at(i, ch, 2 * iy + 1, 2 * ix) + dy.at(i, ch, 2 * iy + 1, 2 * ix + 1);
    return dx;
  }

 private:
  int in_h_ = 0, in_w_ = 0, in_n_ = 0, in_c_ = 0;
};

template <typename S>
class GlobalAvgPool : public Layer<S> {
 public:
  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    (void)pass;
    Tensor<S> y(x.n, x.c, 1, 1);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int i = 0; i < x.n; ++i)
      for (int ch = 0; ch < x.c; ++ch) {
        double sum = 0;
        const S* p = &x.v[(static_cast<std::size_t>(i) * x.c + ch) * plane];
        for (std::size_t j = 0; j < plane; ++j) sum += p[j];
        y.at(i, ch, 0, 0) = static_cast<S>(sum / static_cast<double>(plane));
      }
    in_h_ = x.h;
    in_w_ = x.w;
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> dx(dy.n, dy.c, in_h_, in_w_);
    const std::size_t plane = static_cast<std::size_t>(in_h_) * in_w_;
    for (int i = 0; i < dy.n; ++i)
      for (int ch = 0; ch < dy.c; ++ch) {
        const S g = static_cast<S>(dy.at(i, ch, 0, 0) / static_cast<S>(plane));
        S* p = &dx.v[(static_cast<std::size_t>(i) * dy.c + ch) * plane];
        for (std::size_t j = 0; j < plane; ++j) p[j] = g;
      }
    return dx;
  }

 private:
  int in_h_ = 0, in_w_ = 0;
};

// Linear chain of named sublayers.
template <typename S>
class Sequential : public Layer<S> {
 public:
  template <typename L, typename... Args>
  L* add(const std::string& name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    names_.push_back(name);
    layers_.push_back(std::move(layer));
    return raw;
  }

  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    Tensor<S> cur = x;
    for (auto& l : layers_) cur = l->forward(cur, pass);
    return cur;
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    Tensor<S> cur = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) cur = layers_[i]->backward(cur);
    return cur;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) override {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_params(prefix.empty() ? names_[i] : prefix + "." + names_[i], out);
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer<S>>> layers_;
};

enum class Norm { batch, instance };

template <typename S>
inline std::unique_ptr<Layer<S>> make_norm(Norm kind, int c) {
  if (kind == Norm::batch) return std::make_unique<BatchNorm2d<S>>(c);
  return std::make_unique<InstanceNorm2d<S>>(c);
}

// Residual block: conv-norm-relu-conv-norm on the main path, identity or
// 1x1-projection shortcut, ReLU after the join. Convolutions feeding a
// normalization carry no bias (the mean subtraction would cancel it, leaving
// a permanently zero-gradient parameter).
template <typename S>
class ResBlock : public Layer<S> {
 public:
  ResBlock(int in_c, int out_c, int stride, Norm norm, Rng& rng)
      : conv1_(in_c, out_c, 3, stride, 1, false, rng), conv2_(out_c, out_c, 3, 1, 1, false, rng),
        norm1_(make_norm<S>(norm, out_c)), norm2_(make_norm<S>(norm, out_c)), relu_(0.0), post_relu_(0.0) {
    if (in_c != out_c || stride != 1) {
      proj_ = std::make_unique<Conv2d<S>>(in_c, out_c, 1, stride, 0, false, rng);
      proj_norm_ = make_norm<S>(norm, out_c);
    }
  }

  Tensor<S> forward(const Tensor<S>& x, Pass pass) override {
    Tensor<S> main = norm2_->forward(conv2_.forward(relu_.forward(norm1_->forward(conv1_.forward(x, pass), pass), pass), pass), pass);
    Tensor<S> skip = proj_ ? proj_norm_->forward(proj_->forward(x, pass), pass) : x;
    main += skip;
    return post_relu_.forward(main, pass);
  }

  Tensor<S> backward(const Tensor<S>& dy) override {
    const Tensor<S> dsum = post_relu_.backward(dy);
    Tensor<S> dx = conv1_.backward(norm1_->backward(relu_.backward(conv2_.backward(norm2_->backward(dsum)))));
    if (proj_)
      dx += proj_->backward(proj_norm_->backward(dsum));
    else
      dx += dsum;
    return dx;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef<S>>& out) override {
    conv1_.collect_params(prefix + ".conv1", out);
    norm1_->collect_params(prefix + ".norm1", out);
    conv2_.collect_params(prefix + ".conv2", out);
    norm2_->collect_params(prefix + ".norm2", out);
    if (proj_) {
      proj_->collect_params(prefix + ".proj", out);
      proj_norm_->collect_params(prefix + ".proj_norm", out);
    }
  }

 private:
  Conv2d<S> conv1_, conv2_;
  std::unique_ptr<Layer<S>> norm1_, norm2_;
  LeakyReLU<S> relu_, post_relu_;
  std::unique_ptr<Conv2d<S>> proj_;
  std::unique_ptr<Layer<S>> proj_norm_;
};

template <typename S>
inline void zero_grads(const std::vector<ParamRef<S>>& params) {
  for (const ParamRef<S>& p : params)
    if (p.grad) p.grad->fill(S(0));
}

}  // namespace sst
