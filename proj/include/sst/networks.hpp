#pragma once

#include <memory>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sst/layers.hpp"

// The three architecture contracts: an encoder-decoder generator with long
// addition skips and residual blocks, a strided-convolution conditional
// discriminator, and a residual classifier whose global-average-pooled
// features feed the feature-preserving loss.

namespace sst {

namespace detail {

template <typename S>
inline Tensor<S> label_plane_batch(const std::vector<int>& labels, int d) {
  Tensor<S> t(static_cast<int>(labels.size()), 1, d, d);
  const std::size_t plane = static_cast<std::size_t>(d) * d;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("label_plane_batch: label " + std::to_string(labels[i]) + " outside {0,1}");
    if (labels[i] == 1)
      std::fill(t.v.begin() + static_cast<std::ptrdiff_t>(i * plane),
                t.v.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane), S(1));
  }
  return t;
}

inline void require_spatial(int d, int depth, const char* what) {
  if (depth < 1) throw std::invalid_argument(std::string(what) + ": depth must be at least 1");
  if (d < (1 << depth) || d % (1 << depth) != 0)
    throw std::invalid_argument(std::string(what) + ": tile size " + std::to_string(d) +
                                " not divisible by 2^depth = " + std::to_string(1 << depth));
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct GeneratorConfig {
  int d = 64;
  int depth = 3;
  int base_width = 32;
  bool label_conditioned = false;  // experimental; the condition normally enters only the discriminator

  nlohmann::json to_json() const {
    return {{"d", d}, {"depth", depth}, {"base_width", base_width}, {"label_conditioned", label_conditioned}};
  }
  static GeneratorConfig from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.d = j.at("d").get<int>();
    c.depth = j.at("depth").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.label_conditioned = j.at("label_conditioned").get<bool>();
    return c;
  }
};

template <typename S>
class GeneratorNet {
 public:
  GeneratorNet(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    detail::require_spatial(cfg.d, cfg.depth, "build_generator");
    if (cfg.base_width < 1) throw std::invalid_argument("build_generator: base_width must be positive");
    const int in_ch = cfg.label_conditioned ? 2 : 1;
    stem_.template add<Conv2d<S>>("conv", in_ch, cfg.base_width, 3, 1, 1, false, rng);
    stem_.template add<InstanceNorm2d<S>>("norm", cfg.base_width);
    stem_.template add<LeakyReLU<S>>("relu", 0.0);
    for (int l = 0; l < cfg.depth; ++l) {
      const int ch = cfg.base_width << l;
      enc_res_.push_back(std::make_unique<ResBlock<S>>(ch, ch, 1, Norm::instance, rng));
      auto down = std::make_unique<Sequential<S>>();
      down->template add<Conv2d<S>>("conv", ch, ch * 2, 3, 2, 1, false, rng);
      down->template add<InstanceNorm2d<S>>("norm", ch * 2);
      down->template add<LeakyReLU<S>>("relu", 0.0);
      down_.push_back(std::move(down));
    }
    bridge_ = std::make_unique<ResBlock<S>>(cfg.base_width << cfg.depth, cfg.base_width << cfg.depth, 1,
                                            Norm::instance, rng);
    for (int l = 0; l < cfg.depth; ++l) {
      const int ch = cfg.base_width << l;
      auto up = std::make_unique<Sequential<S>>();
      up->template add<UpsampleNearest2x<S>>("up");
      up->template add<Conv2d<S>>("conv", ch * 2, ch, 3, 1, 1, false, rng);
      up->template add<InstanceNorm2d<S>>("norm", ch);
      up->template add<LeakyReLU<S>>("relu", 0.0);
      up_.push_back(std::move(up));
      dec_res_.push_back(std::make_unique<ResBlock<S>>(ch, ch, 1, Norm::instance, rng));
    }
    head_.template add<Conv2d<S>>("conv", cfg.base_width, 3, 3, 1, 1, true, rng);
    head_.template add<Sigmoid<S>>("sigmoid");
  }

  const GeneratorConfig& config() const { return cfg_; }

  // gray: (N,1,d,d); labels required iff the generator is label-conditioned.
  Tensor<S> forward(const Tensor<S>& gray, Pass pass, const std::vector<int>* labels = nullptr) {
    if (gray.c != 1 || gray.h != cfg_.d || gray.w != cfg_.d)
      throw std::invalid_argument("generator forward: expected (N,1," + std::to_string(cfg_.d) + "," +
                                  std::to_string(cfg_.d) + "), got " + gray.shape_str());
    Tensor<S> x = gray;
    if (cfg_.label_conditioned) {
      if (!labels || static_cast<int>(labels->size()) != gray.n)
        throw std::invalid_argument("generator forward: label-conditioned generator needs one label per sample");
      const Tensor<S> plane = detail::label_plane_batch<S>(*labels, cfg_.d);
      Tensor<S> joined(gray.n, 2, cfg_.d, cfg_.d);
      const std::size_t p = static_cast<std::size_t>(cfg_.d) * cfg_.d;
      for (int i = 0; i < gray.n; ++i) {
        std::copy_n(&gray.v[static_cast<std::size_t>(i) * p], p, &joined.v[static_cast<std::size_t>(i) * 2 * p]);
        std::copy_n(&plane.v[static_cast<std::size_t>(i) * p], p, &joined.v[static_cast<std::size_t>(i) * 2 * p + p]);
      }
      x = std::move(joined);
    }
    Tensor<S> h = stem_.forward(x, pass);
    skips_.clear();
    for (int l = 0; l < cfg_.depth; ++l) {
      h = enc_res_[static_cast<std::size_t>(l)]->forward(h, pass);
      skips_.push_back(h);
      h = down_[static_cast<std::size_t>(l)]->forward(h, pass);
    }
    h = bridge_->forward(h, pass);
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      h = up_[static_cast<std::size_t>(l)]->forward(h, pass);
      h += skips_[static_cast<std::size_t>(l)];
      h = dec_res_[static_cast<std::size_t>(l)]->forward(h, pass);
    }
    return head_.forward(h, pass);
  }

  // Returns the gradient with respect to the gray input (first channel only
  // when label-conditioned).
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dh = head_.backward(dy);
    std::vector<Tensor<S>> dskips(static_cast<std::size_t>(cfg_.depth));
    for (int l = 0; l < cfg_.depth; ++l) {
      dh = dec_res_[static_cast<std::size_t>(l)]->backward(dh);
      dskips[static_cast<std::size_t>(l)] = dh;  // addition join: same grad to both branches
      dh = up_[static_cast<std::size_t>(l)]->backward(dh);
    }
    dh = bridge_->backward(dh);
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      dh = down_[static_cast<std::size_t>(l)]->backward(dh);
      dh += dskips[static_cast<std::size_t>(l)];
      dh = enc_res_[static_cast<std::size_t>(l)]->backward(dh);
    }
    Tensor<S> dx = stem_.backward(dh);
    if (!cfg_.label_conditioned) return dx;
    Tensor<S> dgray(dx.n, 1, dx.h, dx.w);
    const std::size_t p = static_cast<std::size_t>(dx.h) * dx.w;
    for (int i = 0; i < dx.n; ++i)
      std::copy_n(&dx.v[static_cast<std::size_t>(i) * 2 * p], p, &dgray.v[static_cast<std::size_t>(i) * p]);
    return dgray;
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> out;
    stem_.collect_params("stem", out);
    for (int l = 0; l < cfg_.depth; ++l) {
      enc_res_[static_cast<std::size_t>(l)]->collect_params("enc" + std::to_string(l), out);
      down_[static_cast<std::size_t>(l)]->collect_params("down" + std::to_string(l), out);
    }
    bridge_->collect_params("bridge", out);
    for (int l = 0; l < cfg_.depth; ++l) {
      up_[static_cast<std::size_t>(l)]->collect_params("up" + std::to_string(l), out);
      dec_res_[static_cast<std::size_t>(l)]->collect_params("dec" + std::to_string(l), out);
    }
    head_.collect_params("head", out);
    return out;
  }

 private:
  GeneratorConfig cfg_;
  Sequential<S> stem_, head_;
  std::vector<std::unique_ptr<ResBlock<S>>> enc_res_, dec_res_;
  std::vector<std::unique_ptr<Sequential<S>>> down_, up_;
  std::unique_ptr<ResBlock<S>> bridge_;
  std::vector<Tensor<S>> skips_;
};

// ---------------------------------------------------------------------------

struct DiscriminatorConfig {
  int d = 64;
  int depth = 3;
  int base_width = 32;

  nlohmann::json to_json() const { return {{"d", d}, {"depth", depth}, {"base_width", base_width}}; }
  static DiscriminatorConfig from_json(const nlohmann::json& j) {
    DiscriminatorConfig c;
    c.d = j.at("d").get<int>();
    c.depth = j.at("depth").get<int>();
    c.base_width = j.at("base_width").get<int>();
    return c;
  }
};

// Conditional discriminator over (gray condition, color candidate, label
// plane) stacked into 5 input channels. Strided 4x4 convolutions only; the
// first layer carries no normalization.
template <typename S>
class DiscriminatorNet {
 public:
  DiscriminatorNet(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    detail::require_spatial(cfg.d, cfg.depth, "build_discriminator");
    if (cfg.base_width < 1) throw std::invalid_argument("build_discriminator: base_width must be positive");
    body_.template add<Conv2d<S>>("conv0", 5, cfg.base_width, 4, 2, 1, true, rng);
    body_.template add<LeakyReLU<S>>("lrelu0", 0.2);
    for (int l = 1; l < cfg.depth; ++l) {
      const int in = cfg.base_width << (l - 1);
      body_.template add<Conv2d<S>>("conv" + std::to_string(l), in, in * 2, 4, 2, 1, false, rng);
      body_.template add<BatchNorm2d<S>>("norm" + std::to_string(l), in * 2);
      body_.template add<LeakyReLU<S>>("lrelu" + std::to_string(l), 0.2);
    }
    const int final_ch = cfg.base_width << (cfg.depth - 1);
    const int final_sp = cfg.d >> cfg.depth;
    head_.template add<Dense<S>>("dense", final_ch * final_sp * final_sp, 1, rng);
    head_.template add<Sigmoid<S>>("sigmoid");
  }

  const DiscriminatorConfig& config() const { return cfg_; }

  // Returns per-sample probabilities (N,1,1,1).
  Tensor<S> forward(const Tensor<S>& gray, const Tensor<S>& color, const std::vector<int>& labels, Pass pass) {
    if (gray.c != 1 || color.c != 3 || gray.n != color.n || gray.h != cfg_.d || color.h != cfg_.d ||
        gray.w != cfg_.d || color.w != cfg_.d || static_cast<int>(labels.size()) != gray.n)
      throw std::invalid_argument("discriminator forward: mismatched inputs " + gray.shape_str() + " / " +
                                  color.shape_str() + " / " + std::to_string(labels.size()) + " labels");
    const Tensor<S> plane = detail::label_plane_batch<S>(labels, cfg_.d);
    Tensor<S> x(gray.n, 5, cfg_.d, cfg_.d);
    const std::size_t p = static_cast<std::size_t>(cfg_.d) * cfg_.d;
    for (int i = 0; i < gray.n; ++i) {
      S* dst = &x.v[static_cast<std::size_t>(i) * 5 * p];
      std::copy_n(&gray.v[static_cast<std::size_t>(i) * p], p, dst);
      std::copy_n(&color.v[static_cast<std::size_t>(i) * 3 * p], 3 * p, dst + p);
      std::copy_n(&plane.v[static_cast<std::size_t>(i) * p], p, dst + 4 * p);
    }
    return head_.forward(body_.forward(x, pass), pass);
  }

  // Returns the gradient with respect to the color candidate (N,3,d,d); the
  // condition channels' gradients are discarded.
  Tensor<S> backward(const Tensor<S>& dy) {
    const Tensor<S> dx = body_.backward(head_.backward(dy));
    Tensor<S> dcolor(dx.n, 3, dx.h, dx.w);
    const std::size_t p = static_cast<std::size_t>(dx.h) * dx.w;
    for (int i = 0; i < dx.n; ++i)
      std::copy_n(&dx.v[static_cast<std::size_t>(i) * 5 * p + p], 3 * p,
                  &dcolor.v[static_cast<std::size_t>(i) * 3 * p]);
    return dcolor;
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> out;
    body_.collect_params("body", out);
    head_.collect_params("head", out);
    return out;
  }

 private:
  DiscriminatorConfig cfg_;
  Sequential<S> body_, head_;
};

// ---------------------------------------------------------------------------

struct ClassifierConfig {
  int d = 64;
  int blocks_per_stage = 2;
  int base_width = 32;

  int feature_dim() const { return 4 * base_width; }

  nlohmann::json to_json() const {
    return {{"d", d}, {"blocks_per_stage", blocks_per_stage}, {"base_width", base_width}};
  }
  static ClassifierConfig from_json(const nlohmann::json& j) {
    ClassifierConfig c;
    c.d = j.at("d").get<int>();
    c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
    c.base_width = j.at("base_width").get<int>();
    return c;
  }
};

template <typename S>
struct ClassifierOut {
  Tensor<S> features;  // (N, F_dim, 1, 1), pre-activation global average pool
  Tensor<S> probs;     // (N, 1, 1, 1)
};

// Residual classifier: stem plus three stages of residual blocks with
// stride-2 transitions, global average pooling into the feature vector, and
// a sigmoid head on top of it.
template <typename S>
class ClassifierNet {
 public:
  ClassifierNet(const ClassifierConfig& cfg, Rng& rng) : cfg_(cfg) {
    detail::require_spatial(cfg.d, 2, "build_classifier");  // two stride-2 stage transitions
    if (cfg.base_width < 1 || cfg.blocks_per_stage < 1)
      throw std::invalid_argument("build_classifier: base_width and blocks_per_stage must be positive");
    const int w = cfg.base_width;
    trunk_.template add<Conv2d<S>>("stem_conv", 3, w, 3, 1, 1, false, rng);
    trunk_.template add<BatchNorm2d<S>>("stem_norm", w);
    trunk_.template add<LeakyReLU<S>>("stem_relu", 0.0);
    for (int stage = 0; stage < 3; ++stage) {
      const int out = w << stage;
      const int in = stage == 0 ? w : out / 2;
      for (int b = 0; b < cfg.blocks_per_stage; ++b) {
        const bool first = b == 0;
        const std::string name = "s" + std::to_string(stage) + "b" + std::to_string(b);
        trunk_.template add<ResBlock<S>>(name, first ? in : out, out, (first && stage > 0) ? 2 : 1, Norm::batch,
                                         rng);
      }
    }
    head_.template add<Dense<S>>("dense", cfg.feature_dim(), 1, rng);
    head_.template add<Sigmoid<S>>("sigmoid");
  }

  const ClassifierConfig& config() const { return cfg_; }

  ClassifierOut<S> forward(const Tensor<S>& x, Pass pass) {
    if (x.c != 3 || x.h != cfg_.d || x.w != cfg_.d)
      throw std::invalid_argument("classifier forward: expected (N,3," + std::to_string(cfg_.d) + "," +
                                  std::to_string(cfg_.d) + "), got " + x.shape_str());
    ClassifierOut<S> out;
    out.features = gap_.forward(trunk_.forward(x, pass), pass);
    out.probs = head_.forward(out.features, pass);
    return out;
  }

  // Joint backward: dprobs flows through the head into the features, where
  // dfeatures (the feature-preserving route) joins; either may be all-zero.
  Tensor<S> backward(const Tensor<S>& dprobs, const Tensor<S>& dfeatures) {
    Tensor<S> dfeat = head_.backward(dprobs);
    dfeat += dfeatures;
    return trunk_.backward(gap_.backward(dfeat));
  }

  std::vector<ParamRef<S>> params() {
    std::vector<ParamRef<S>> out;
    trunk_.collect_params("trunk", out);
    head_.collect_params("head", out);
    return out;
  }

 private:
  ClassifierConfig cfg_;
  Sequential<S> trunk_, head_;
  GlobalAvgPool<S> gap_;
};

// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
inline void require_live_gradients(std::vector<ParamRef<S>> params, const char* what) {
  for (const ParamRef<S>& p : params) {
    if (!p.trainable || !p.grad) continue;
    bool live = false;
    for (S v : p.grad->v)
      if (v != S(0)) {
        live = true;
        break;
      }
    if (!live) throw std::runtime_error(std::string(what) + ": parameter '" + p.name + "' receives no gradient");
  }
  zero_grads(params);
}

template <typename S>
inline Tensor<S> random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor<S> t(n, c, h, w);
  for (S& v : t.v) v = static_cast<S>(rng.uniform());
  return t;
}

}  // namespace detail

// Builders run a one-off forward/backward on random data and verify that
// every trainable parameter receives a gradient (no dead subgraphs).

template <typename S = float>
inline GeneratorNet<S> build_generator(int d, int depth, int base_width, std::uint64_t seed,
                                       bool label_conditioned = false) {
  GeneratorConfig cfg;
  cfg.d = d;
  cfg.depth = depth;
  cfg.base_width = base_width;
  cfg.label_conditioned = label_conditioned;
  Rng rng(mix_seed(seed, 0x67656e));
  GeneratorNet<S> net(cfg, rng);
  Rng probe(mix_seed(seed, 0x70726f6265));
  const std::vector<int> labels{0, 1};
  const Tensor<S> y = net.forward(detail::random_tensor<S>(2, 1, d, d, probe), Pass::train,
                                  label_conditioned ? &labels : nullptr);
  Tensor<S> ones = zeros_like(y);
  ones.fill(S(1));
  net.backward(ones);
  detail::require_live_gradients(net.params(), "build_generator");
  return net;
}

template <typename S = float>
inline DiscriminatorNet<S> build_discriminator(int d, int depth, int base_width, std::uint64_t seed) {
  DiscriminatorConfig cfg;
  cfg.d = d;
  cfg.depth = depth;
  cfg.base_width = base_width;
  Rng rng(mix_seed(seed, 0x646973));
  DiscriminatorNet<S> net(cfg, rng);
  Rng probe(mix_seed(seed, 0x70726f6265));
  const Tensor<S> y = net.forward(detail::random_tensor<S>(2, 1, d, d, probe),
                                  detail::random_tensor<S>(2, 3, d, d, probe), {0, 1}, Pass::train);
  Tensor<S> ones = zeros_like(y);
  ones.fill(S(1));
  net.backward(ones);
  detail::require_live_gradients(net.params(), "build_discriminator");
  return net;
}

template <typename S = float>
inline ClassifierNet<S> build_classifier(int d, int blocks_per_stage, int base_width, std::uint64_t seed) {
  ClassifierConfig cfg;
  cfg.d = d;
  cfg.blocks_per_stage = blocks_per_stage;
  cfg.base_width = base_width;
  Rng rng(mix_seed(seed, 0x636c73));
  ClassifierNet<S> net(cfg, rng);
  Rng probe(mix_seed(seed, 0x70726f6265));
  const ClassifierOut<S> out = net.forward(detail::random_tensor<S>(2, 3, d, d, probe), Pass::train);
  Tensor<S> dprobs = zeros_like(out.probs);
  dprobs.fill(S(1));
  Tensor<S> dfeat = zeros_like(out.features);
  dfeat.fill(S(1));
  net.backward(dprobs, dfeat);
  detail::require_live_gradients(net.params(), "build_classifier");
  return net;
}

// Batch wrappers over tiles (inference mode).

template <typename S>
inline std::vector<ColorTile> forward_generator(GeneratorNet<S>& g, const std::vector<const GrayTile*>& grays,
                                                const std::vector<int>* labels = nullptr) {
  const Tensor<S> out = g.forward(gray_batch_to_tensor<S>(grays), Pass::infer, labels);
  std::vector<ColorTile> tiles;
  tiles.reserve(static_cast<std::size_t>(out.n));
  for (int i = 0; i < out.n; ++i) tiles.push_back(tensor_to_color_tile(out, i));
  return tiles;
}

template <typename S>
inline Tensor<S> extract_features(ClassifierNet<S>& c, const std::vector<const ColorTile*>& tiles) {
  return c.forward(color_batch_to_tensor<S>(tiles), Pass::infer).features;
}

}  // namespace sst
