#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sst/layers.hpp"

namespace sst {

// Adam over a fixed parameter list. Holds raw pointers into the owning
// network, which must outlive the optimizer. Moment tensors are keyed by
// position, so the list must not be reordered between steps.
template <typename S>
class Adam {
 public:
  Adam(std::vector<ParamRef<S>> params, double lr, double beta1, double beta2, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0) || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || !(eps > 0.0))
      throw std::invalid_argument("Adam: bad hyperparameters");
    for (const ParamRef<S>& p : params_)
      if (p.trainable && p.grad) {
        m_.push_back(zeros_like(*p.value));
        v_.push_back(zeros_like(*p.value));
        slots_.push_back(&p - params_.data());
      }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t s = 0; s < slots_.size(); ++s) {
      const ParamRef<S>& p = params_[static_cast<std::size_t>(slots_[s])];
      for (std::size_t i = 0; i < p.value->v.size(); ++i) {
        const double g = static_cast<double>(p.grad->v[i]);
        const double m = beta1_ * static_cast<double>(m_[s].v[i]) + (1.0 - beta1_) * g;
        const double v = beta2_ * static_cast<double>(v_[s].v[i]) + (1.0 - beta2_) * g * g;
        m_[s].v[i] = static_cast<S>(m);
        v_[s].v[i] = static_cast<S>(v);
        p.value->v[i] -= static_cast<S>(lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_));
      }
    }
  }

  void zero_grads() { sst::zero_grads(params_); }
  long t() const { return t_; }

 private:
  std::vector<ParamRef<S>> params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<S>> m_, v_;
  std::vector<std::ptrdiff_t> slots_;
};

}  // namespace sst
