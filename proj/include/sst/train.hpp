#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sst/checkpoint.hpp"
#include "sst/colorops.hpp"
#include "sst/losses.hpp"
#include "sst/metrics.hpp"
#include "sst/networks.hpp"
#include "sst/optim.hpp"

// Training loops: classifier pretraining on the target style, then the
// adversarial stain-style transfer loop against that frozen classifier.

namespace sst {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 2e-4;  // DCGAN settings for G and D; classifier runs use 1e-3
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  LossWeights loss_weights;
  std::uint64_t seed = 0;
  std::string checkpoint_dir;  // empty: keep results in memory only
  int d_steps_per_g_step = 1;
  int model_depth = 0;  // 0 picks the role default (3 stages for G/D, 2 blocks per stage for the classifier)
  int model_width = 0;  // 0 picks the role default (32)
  bool label_conditioned_generator = false;

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("TrainConfig: negative epochs");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw std::invalid_argument("TrainConfig: adam betas must lie in [0,1)");
    if (d_steps_per_g_step < 1) throw std::invalid_argument("TrainConfig: d_steps_per_g_step must be positive");
    if (model_depth < 0 || model_width < 0) throw std::invalid_argument("TrainConfig: negative model size");
    loss_weights.validate();
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"loss_weights", loss_weights.to_json()},
            {"seed", seed},
            {"checkpoint_dir", checkpoint_dir},
            {"d_steps_per_g_step", d_steps_per_g_step},
            {"model_depth", model_depth},
            {"model_width", model_width},
            {"label_conditioned_generator", label_conditioned_generator}};
  }

  // Partial objects are fine (missing keys keep `base`); unknown keys are
  // config-file typos and rejected.
  static TrainConfig from_json(const nlohmann::json& j) { return from_json(j, TrainConfig()); }

  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base) {
    static const std::vector<std::string> known{
        "epochs",   "batch_size",    "learning_rate",     "adam_beta1",  "adam_beta2",  "loss_weights",
        "seed",     "checkpoint_dir", "d_steps_per_g_step", "model_depth", "model_width",
        "label_conditioned_generator"};
    for (const auto& [key, _] : j.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw std::invalid_argument("TrainConfig: unknown config key '" + key + "'");
    TrainConfig c = base;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    if (j.contains("loss_weights")) c.loss_weights = LossWeights::from_json(j.at("loss_weights"));
    c.seed = j.value("seed", c.seed);
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.d_steps_per_g_step = j.value("d_steps_per_g_step", c.d_steps_per_g_step);
    c.model_depth = j.value("model_depth", c.model_depth);
    c.model_width = j.value("model_width", c.model_width);
    c.label_conditioned_generator = j.value("label_conditioned_generator", c.label_conditioned_generator);
    c.validate();
    return c;
  }

  static TrainConfig classifier_defaults() {
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.adam_beta1 = 0.9;
    return c;
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;   // classifier: mean cross-entropy; sst: mean total generator loss
  double d_loss = 0.0;       // sst only
  double gan_loss = 0.0;     // sst only
  double recon = 0.0;        // sst only
  double fp = 0.0;           // sst only
  double val_metric = 0.0;   // classifier: val AUC; sst: val total generator loss
  double diversity = 0.0;    // sst only: std of generated channel means across a val batch
  double seconds = 0.0;
  bool best = false;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},   {"train_loss", train_loss}, {"d_loss", d_loss},
            {"gan_loss", gan_loss}, {"recon", recon},       {"fp", fp},
            {"val_metric", val_metric}, {"diversity", diversity}, {"seconds", seconds},
            {"best", best}};
  }
};

struct TrainHistory {
  std::vector<EpochRecord> records;

  void write_jsonl(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("TrainHistory: cannot open " + path);
    for (const EpochRecord& r : records) f << r.to_json().dump() << "\n";
    if (!f) throw std::runtime_error("TrainHistory: write failed for " + path);
  }
};

// Binary cross-entropy against hard labels, probabilities clamped like the
// adversarial losses.
template <typename S>
inline double bce_loss(const Tensor<S>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.size() == 0)
    throw std::invalid_argument("bce_loss: " + std::to_string(probs.size()) + " probabilities vs " +
                                std::to_string(labels.size()) + " labels");
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = detail::clamp_prob(probs.v[i], "bce_loss");
    loss -= (labels[i] == 1 ? std::log(p) : std::log(1.0 - p)) / static_cast<double>(labels.size());
  }
  return loss;
}

template <typename S>
inline Tensor<S> bce_loss_grad(const Tensor<S>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size() || probs.size() == 0)
    throw std::invalid_argument("bce_loss_grad: " + std::to_string(probs.size()) + " probabilities vs " +
                                std::to_string(labels.size()) + " labels");
  Tensor<S> g = zeros_like(probs);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = detail::clamp_prob(probs.v[i], "bce_loss_grad");
    const double d = labels[i] == 1 ? -1.0 / p : 1.0 / (1.0 - p);
    g.v[i] = static_cast<S>(d / static_cast<double>(labels.size()));
  }
  return g;
}

namespace detail {

template <typename S>
inline std::vector<std::vector<S>> snapshot_params(const std::vector<ParamRef<S>>& params) {
  std::vector<std::vector<S>> out;
  out.reserve(params.size());
  for (const ParamRef<S>& p : params) out.push_back(p.value->v);
  return out;
}

template <typename S>
inline void restore_params(const std::vector<ParamRef<S>>& params, const std::vector<std::vector<S>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value->v = snap[i];
}

// Batch index layout for one epoch: seeded shuffle, contiguous slices, a
// trailing singleton dropped (a 1-sample batch starves batch normalization).
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    if (end - start == 1 && !batches.empty()) break;
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

template <typename S>
inline Tensor<S> color_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<const ColorTile*> ptrs;
  ptrs.reserve(idx.size());
  for (std::size_t i : idx) ptrs.push_back(&ds.tiles[i].tile);
  return color_batch_to_tensor<S>(ptrs);
}

template <typename S>
inline Tensor<S> gray_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<GrayTile> grays;
  grays.reserve(idx.size());
  for (std::size_t i : idx) grays.push_back(to_gray(ds.tiles[i].tile));
  std::vector<const GrayTile*> ptrs;
  ptrs.reserve(idx.size());
  for (const GrayTile& g : grays) ptrs.push_back(&g);
  return gray_batch_to_tensor<S>(ptrs);
}

inline std::vector<int> label_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (std::size_t i : idx) labels.push_back(ds.tiles[i].label);
  return labels;
}

inline double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void require_trainable(const Dataset& train, const Dataset& val, const TrainConfig& cfg, const char* what) {
  cfg.validate();
  if (cfg.epochs == 0) throw std::invalid_argument(std::string(what) + ": epochs = 0, no training performed");
  train.validate();
  val.validate();
  if (train.tile_d() != val.tile_d())
    throw std::invalid_argument(std::string(what) + ": train tiles are " + std::to_string(train.tile_d()) +
                                ", val tiles are " + std::to_string(val.tile_d()));
}

}  // namespace detail

struct ClassifierResult {
  ClassifierNet<float> classifier;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline ClassifierResult train_classifier(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                                         const EpochCallback& on_epoch = {}) {
  detail::require_trainable(train, val, cfg, "train_classifier");
  if (val.count(0) == 0 || val.count(1) == 0)
    throw std::invalid_argument("train_classifier: validation set needs both classes");
  const int depth = cfg.model_depth > 0 ? cfg.model_depth : 2;
  const int width = cfg.model_width > 0 ? cfg.model_width : 32;

  ClassifierResult out{build_classifier(train.tile_d(), depth, width, cfg.seed), {}};
  ClassifierNet<float>& cls = out.classifier;
  auto params = cls.params();
  Adam<float> opt(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);

  double best_auc = -1.0;
  std::vector<std::vector<float>> best_params;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng order(mix_seed(cfg.seed, 0x657063, static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (const auto& idx : detail::epoch_batches(train.tiles.size(), cfg.batch_size, order)) {
      const Tensor<float> x = detail::color_batch<float>(train, idx);
      const std::vector<int> labels = detail::label_batch(train, idx);
      const ClassifierOut<float> co = cls.forward(x, Pass::train);
      const double loss = bce_loss(co.probs, labels);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_classifier: non-finite loss at epoch " + std::to_string(epoch));
      cls.backward(bce_loss_grad(co.probs, labels), zeros_like(co.features));
      opt.step();
      opt.zero_grads();
      loss_sum += loss;
      ++n_batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, n_batches));
    rec.val_metric = evaluate(cls, val, nullptr, "val").auc;
    rec.seconds = detail::elapsed_s(t0);
    if (rec.val_metric > best_auc) {
      best_auc = rec.val_metric;
      best_params = detail::snapshot_params(params);
      rec.best = true;
    }
    out.history.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  detail::restore_params(params, best_params);

  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    save_classifier(cls, cfg.checkpoint_dir + "/classifier_best.ckpt");
    out.history.write_jsonl(cfg.checkpoint_dir + "/classifier_history.jsonl");
  }
  return out;
}

struct SstResult {
  GeneratorNet<float> generator;
  DiscriminatorNet<float> discriminator;
  TrainHistory history;
};

// One full stain-style transfer pass: gray-normalize, then recolor with the
// trained generator.
inline ColorTile apply_sst(GeneratorNet<float>& g, const ColorTile& tile) {
  validate_color_tile(tile, "apply_sst");
  if (tile.d != g.config().d)
    throw std::invalid_argument("apply_sst: tile size " + std::to_string(tile.d) + " does not match generator size " +
                                std::to_string(g.config().d));
  const GrayTile gray = to_gray(tile);
  std::vector<ColorTile> out = forward_generator(g, {&gray});
  return std::move(out.front());
}

namespace detail {

// Mean generator loss over a dataset without updating anything.
inline std::array<double, 4> sst_val_losses(GeneratorNet<float>& g, DiscriminatorNet<float>& d,
                                            ClassifierNet<float>& cls, const Dataset& ds, const LossWeights& w,
                                            int batch_size) {
  double recon_sum = 0.0, gan_sum = 0.0, fp_sum = 0.0;
  std::size_t n_batches = 0;
  for (std::size_t start = 0; start < ds.tiles.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(ds.tiles.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<float> gray = gray_batch<float>(ds, idx);
    const Tensor<float> orig = color_batch<float>(ds, idx);
    const std::vector<int> labels = label_batch(ds, idx);
    const Tensor<float> gen =
        g.forward(gray, Pass::infer, g.config().label_conditioned ? &labels : nullptr);
    recon_sum += recon_loss(gen, orig);
    gan_sum += gan_loss_g(d.forward(gray, gen, labels, Pass::infer));
    fp_sum += feature_preserving_loss(cls.forward(orig, Pass::infer).features,
                                      cls.forward(gen, Pass::infer).features);
    ++n_batches;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, n_batches));
  const double recon = recon_sum / n, gan = gan_sum / n, fp = fp_sum / n;
  return {recon, gan, fp, total_generator_loss(recon, gan, fp, w)};
}

// Spread of generated-tile channel means across a batch; near zero when the
// generator collapses to one output.
inline double generation_diversity(GeneratorNet<float>& g, const Dataset& ds, int batch_size) {
  const std::size_t n = std::min<std::size_t>(ds.tiles.size(), static_cast<std::size_t>(batch_size));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  const std::vector<int> labels = label_batch(ds, idx);
  const Tensor<float> gen = g.forward(gray_batch<float>(ds, idx), Pass::infer,
                                      g.config().label_conditioned ? &labels : nullptr);
  const std::size_t plane = static_cast<std::size_t>(gen.h) * gen.w;
  double div = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> means;
    means.reserve(n);
    for (int i = 0; i < gen.n; ++i) {
      double s = 0.0;
      const float* p = &gen.v[(static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)) * plane];
      for (std::size_t j = 0; j < plane; ++j) s += p[j];
      means.push_back(s / static_cast<double>(plane));
    }
    double mu = 0.0;
    for (double m : means) mu += m;
    mu /= static_cast<double>(means.size());
    double var = 0.0;
    for (double m : means) var += (m - mu) * (m - mu);
    div += std::sqrt(var / static_cast<double>(means.size()));
  }
  return div / 3.0;
}

}  // namespace detail

inline SstResult train_sst(const Dataset& train, const Dataset& val, ClassifierNet<float>& classifier,
                           const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  detail::require_trainable(train, val, cfg, "train_sst");
  if (classifier.config().d != train.tile_d())
    throw std::invalid_argument("train_sst: classifier expects " + std::to_string(classifier.config().d) +
                                ", dataset tiles are " + std::to_string(train.tile_d()));
  const int depth = cfg.model_depth > 0 ? cfg.model_depth : 3;
  const int width = cfg.model_width > 0 ? cfg.model_width : 32;
  const int d = train.tile_d();

  SstResult out{build_generator(d, depth, width, mix_seed(cfg.seed, 0x67), cfg.label_conditioned_generator),
                build_discriminator(d, depth, width, mix_seed(cfg.seed, 0x64)),
                {}};
  GeneratorNet<float>& g = out.generator;
  DiscriminatorNet<float>& dnet = out.discriminator;
  auto g_params = g.params();
  auto d_params = dnet.params();
  auto c_params = classifier.params();
  Adam<float> opt_g(g_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
  Adam<float> opt_d(d_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);

  const std::vector<int>* g_labels_arg = nullptr;  // set per batch when the experimental flag is on
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_g, best_d;
  int d_step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng order(mix_seed(cfg.seed, 0x73737465, static_cast<std::uint64_t>(epoch)));
    double d_sum = 0.0, total_sum = 0.0, gan_sum = 0.0, recon_sum = 0.0, fp_sum = 0.0;
    std::size_t d_updates = 0, g_updates = 0;
    for (const auto& idx : detail::epoch_batches(train.tiles.size(), cfg.batch_size, order)) {
      const Tensor<float> gray = detail::gray_batch<float>(train, idx);
      const Tensor<float> orig = detail::color_batch<float>(train, idx);
      const std::vector<int> labels = detail::label_batch(train, idx);
      const std::vector<int>* glab = cfg.label_conditioned_generator ? &labels : g_labels_arg;

      // discriminator update on this batch
      {
        const Tensor<float> fake = g.forward(gray, Pass::infer, glab);  // detached from G
        const Tensor<float> p_real = dnet.forward(gray, orig, labels, Pass::train);
        dnet.backward(gan_loss_d_grad_real(p_real));
        const Tensor<float> p_fake = dnet.forward(gray, fake, labels, Pass::train);
        dnet.backward(gan_loss_d_grad_fake(p_fake));
        const double dl = gan_loss_d(p_real, p_fake);
        if (!std::isfinite(dl))
          throw std::runtime_error("train_sst: non-finite discriminator loss at epoch " + std::to_string(epoch));
        opt_d.step();
        opt_d.zero_grads();
        d_sum += dl;
        ++d_updates;
        ++d_step_counter;
      }
      if (d_step_counter < cfg.d_steps_per_g_step) continue;  // more D steps on fresh batches first
      d_step_counter = 0;

      // generator update
      const Tensor<float> gen = g.forward(gray, Pass::train, glab);
      const double recon = recon_loss(gen, orig);
      Tensor<float> dgen = recon_loss_grad(gen, orig);
      for (float& v : dgen.v) v = static_cast<float>(v * cfg.loss_weights.lambda_recon);

      const Tensor<float> p_fake = dnet.forward(gray, gen, labels, Pass::grad_eval);
      const double gan = gan_loss_g(p_fake);
      dgen += dnet.backward(gan_loss_g_grad(p_fake));

      const Tensor<float> feat_orig = classifier.forward(orig, Pass::infer).features;
      const ClassifierOut<float> co = classifier.forward(gen, Pass::grad_eval);
      const double fp = feature_preserving_loss(feat_orig, co.features);
      Tensor<float> fpg = feature_preserving_loss_grad(feat_orig, co.features);
      for (float& v : fpg.v) v = static_cast<float>(v * cfg.loss_weights.lambda_fp);
      dgen += classifier.backward(zeros_like(co.probs), fpg);

      const double total = total_generator_loss(recon, gan, fp, cfg.loss_weights);
      if (!std::isfinite(total))
        throw std::runtime_error("train_sst: non-finite generator loss at epoch " + std::to_string(epoch));
      g.backward(dgen);
      opt_g.step();
      opt_g.zero_grads();
      // the frozen nets only lent their backward passes; drop the gradients
      // they accumulated so the next D step starts clean
      zero_grads(d_params);
      zero_grads(c_params);
      recon_sum += recon;
      gan_sum += gan;
      fp_sum += fp;
      total_sum += total;
      ++g_updates;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    const double gn = static_cast<double>(std::max<std::size_t>(1, g_updates));
    rec.train_loss = total_sum / gn;
    rec.gan_loss = gan_sum / gn;
    rec.recon = recon_sum / gn;
    rec.fp = fp_sum / gn;
    rec.d_loss = d_sum / static_cast<double>(std::max<std::size_t>(1, d_updates));
    const std::array<double, 4> v = detail::sst_val_losses(g, dnet, classifier, val, cfg.loss_weights,
                                                           cfg.batch_size);
    rec.val_metric = v[3];
    rec.diversity = detail::generation_diversity(g, val, cfg.batch_size);
    if (rec.diversity < 1e-3)
      std::cerr << "warning: generation diversity " << rec.diversity << " at epoch " << epoch
                << " suggests mode collapse\n";
    rec.seconds = detail::elapsed_s(t0);
    if (rec.val_metric < best_val) {
      best_val = rec.val_metric;
      best_g = detail::snapshot_params(g_params);
      best_d = detail::snapshot_params(d_params);
      rec.best = true;
    }
    out.history.records.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  detail::restore_params(g_params, best_g);
  detail::restore_params(d_params, best_d);

  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    save_generator(g, cfg.checkpoint_dir + "/generator_best.ckpt");
    save_discriminator(dnet, cfg.checkpoint_dir + "/discriminator_best.ckpt");
    out.history.write_jsonl(cfg.checkpoint_dir + "/sst_history.jsonl");
  }
  return out;
}

}  // namespace sst
