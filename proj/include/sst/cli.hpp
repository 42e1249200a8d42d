#pragma once

#include <CLI11.hpp>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sst/manifest.hpp"
#include "sst/metrics.hpp"
#include "sst/synth.hpp"
#include "sst/train.hpp"

// Command-line front end. run_cli is the whole program minus the process
// boundary so tests can drive it in-process with captured streams.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

namespace sst {
namespace cli {

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
  if (!f.flush()) throw std::runtime_error("write failed for " + path);
}

// Shared flag bundle for the two training subcommands. CLI values only land
// in the config when the flag was actually given: precedence is CLI flag >
// config file > built-in default.
struct TrainArgs {
  std::string train_manifest, val_manifest, out_dir, config_path, classifier_path;
  int epochs = 0, batch_size = 0, model_depth = 0, model_width = 0, d_steps = 0;
  double learning_rate = 0.0, lambda_recon = 0.0, lambda_fp = 0.0;
  std::uint64_t seed = 0;
  bool json = false, label_conditioned = false;
};

inline void add_common_train_flags(CLI::App* c, TrainArgs& a) {
  c->add_option("--train", a.train_manifest, "training-set manifest CSV")->required();
  c->add_option("--val", a.val_manifest, "validation-set manifest CSV")->required();
  c->add_option("--out", a.out_dir, "directory for checkpoints and history")->required();
  c->add_option("--config", a.config_path, "JSON config file (flags given here override it)");
  c->add_option("--epochs", a.epochs, "training epochs");
  c->add_option("--batch-size", a.batch_size, "samples per batch");
  c->add_option("--learning-rate", a.learning_rate, "Adam learning rate");
  c->add_option("--model-depth", a.model_depth, "network depth (0 = role default)");
  c->add_option("--model-width", a.model_width, "base channel width (0 = role default)");
  c->add_option("--seed", a.seed, "RNG seed");
  c->add_flag("--json", a.json, "print the summary as JSON");
}

// count() throws for options the subcommand never registered; the sst-only
// flags are absent on train-classifier, so probe instead.
inline bool flag_given(const CLI::App& c, const std::string& name) {
  const CLI::Option* o = c.get_option_no_throw(name);
  return o != nullptr && o->count() > 0;
}

inline TrainConfig resolve_train_config(const CLI::App& c, const TrainArgs& a, TrainConfig cfg) {
  if (!a.config_path.empty()) cfg = TrainConfig::from_json(read_json_file(a.config_path), cfg);
  if (flag_given(c, "--epochs")) cfg.epochs = a.epochs;
  if (flag_given(c, "--batch-size")) cfg.batch_size = a.batch_size;
  if (flag_given(c, "--learning-rate")) cfg.learning_rate = a.learning_rate;
  if (flag_given(c, "--model-depth")) cfg.model_depth = a.model_depth;
  if (flag_given(c, "--model-width")) cfg.model_width = a.model_width;
  if (flag_given(c, "--seed")) cfg.seed = a.seed;
  if (flag_given(c, "--lambda-recon")) cfg.loss_weights.lambda_recon = a.lambda_recon;
  if (flag_given(c, "--lambda-fp")) cfg.loss_weights.lambda_fp = a.lambda_fp;
  if (flag_given(c, "--d-steps-per-g-step")) cfg.d_steps_per_g_step = a.d_steps;
  if (flag_given(c, "--label-conditioned")) cfg.label_conditioned_generator = a.label_conditioned;
  cfg.checkpoint_dir = a.out_dir;
  cfg.validate();
  return cfg;
}

inline void print_classifier_epoch(std::ostream& err, const EpochRecord& r) {
  std::ostringstream line;
  line << "epoch " << r.epoch << "  loss " << std::fixed << std::setprecision(4) << r.train_loss << "  val auc "
       << r.val_metric << "  (" << std::setprecision(1) << r.seconds << "s)" << (r.best ? "  *" : "");
  err << line.str() << "\n";
}

inline void print_sst_epoch(std::ostream& err, const EpochRecord& r) {
  std::ostringstream line;
  line << "epoch " << r.epoch << std::fixed << std::setprecision(4) << "  d " << r.d_loss << "  g " << r.train_loss
       << "  recon " << r.recon << "  gan " << r.gan_loss << "  fp " << r.fp << "  val " << r.val_metric << "  div "
       << r.diversity << "  (" << std::setprecision(1) << r.seconds << "s)" << (r.best ? "  *" : "");
  err << line.str() << "\n";
}

inline double best_val(const TrainHistory& h, bool maximize) {
  double best = maximize ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  for (const EpochRecord& r : h.records) best = maximize ? std::max(best, r.val_metric) : std::min(best, r.val_metric);
  return best;
}

inline nlohmann::json history_json(const TrainHistory& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const EpochRecord& r : h.records) arr.push_back(r.to_json());
  return arr;
}

inline void add_synth_data(CLI::App& app, std::ostream& out) {
  struct Args {
    std::string style_a, style_b, out_dir;
    std::vector<int> counts{2000, 400, 1000};
    int tile_size = 64;
    std::uint64_t seed = 0;
  };
  auto a = std::make_shared<Args>();
  CLI::App* c = app.add_subcommand("synth-data", "render a synthetic two-style benchmark to PNG tiles + manifests");
  c->add_option("--style-a", a->style_a, "style JSON for the train/val institute")->required();
  c->add_option("--style-b", a->style_b, "style JSON for the held-out test institute")->required();
  c->add_option("--out", a->out_dir, "output directory")->required();
  c->add_option("--counts", a->counts, "train,val,test tile counts")->delimiter(',')->expected(3);
  c->add_option("--tile-size", a->tile_size, "tile edge length in pixels");
  c->add_option("--seed", a->seed, "RNG seed");
  c->callback([a, &out] {
    const StainStyleParams style_a = StainStyleParams::from_json(read_json_file(a->style_a));
    const StainStyleParams style_b = StainStyleParams::from_json(read_json_file(a->style_b));
    const auto sets = make_synthetic_benchmark(style_a, style_b, a->counts[0], a->counts[1], a->counts[2],
                                               a->tile_size, a->seed);
    const std::array<std::string, 3> names{"train", "val", "test"};
    for (int i = 0; i < 3; ++i)
      out << save_dataset(a->out_dir, names[static_cast<std::size_t>(i)], sets[static_cast<std::size_t>(i)]).string()
          << "\n";
  });
}

inline void add_train_classifier(CLI::App& app, std::ostream& out, std::ostream& err) {
  auto a = std::make_shared<TrainArgs>();
  CLI::App* c = app.add_subcommand("train-classifier", "train the tumor classifier on the target-style set");
  add_common_train_flags(c, *a);
  c->callback([a, c, &out, &err] {
    const Dataset train = load_manifest(a->train_manifest, Split::train);
    const Dataset val = load_manifest(a->val_manifest, Split::val);
    const TrainConfig cfg = resolve_train_config(*c, *a, TrainConfig::classifier_defaults());
    const ClassifierResult res = train_classifier(
        train, val, cfg, [&err](const EpochRecord& r) { print_classifier_epoch(err, r); });
    const double auc = best_val(res.history, true);
    if (a->json) {
      out << nlohmann::json{{"best_val_auc", auc},
                            {"checkpoint", a->out_dir + "/classifier_best.ckpt"},
                            {"history", history_json(res.history)}}
                 .dump(2)
          << "\n";
    } else {
      out << "best val auc " << std::fixed << std::setprecision(4) << auc << "\n";
      out << "wrote " << a->out_dir << "/classifier_best.ckpt\n";
    }
  });
}

inline void add_train_sst(CLI::App& app, std::ostream& out, std::ostream& err) {
  auto a = std::make_shared<TrainArgs>();
  CLI::App* c = app.add_subcommand("train-sst", "train the stain-style transfer generator against a frozen classifier");
  add_common_train_flags(c, *a);
  c->add_option("--classifier", a->classifier_path, "classifier checkpoint for the feature-preserving loss")->required();
  c->add_option("--lambda-recon", a->lambda_recon, "reconstruction loss weight");
  c->add_option("--lambda-fp", a->lambda_fp, "feature-preserving loss weight");
  c->add_option("--d-steps-per-g-step", a->d_steps, "discriminator updates per generator update");
  c->add_flag("--label-conditioned", a->label_conditioned, "condition the generator on tile labels (experimental)");
  c->callback([a, c, &out, &err] {
    const Dataset train = load_manifest(a->train_manifest, Split::train);
    const Dataset val = load_manifest(a->val_manifest, Split::val);
    ClassifierNet<float> cls = load_classifier(a->classifier_path);
    const TrainConfig cfg = resolve_train_config(*c, *a, TrainConfig());
    const SstResult res =
        train_sst(train, val, cls, cfg, [&err](const EpochRecord& r) { print_sst_epoch(err, r); });
    const double loss = best_val(res.history, false);
    if (a->json) {
      out << nlohmann::json{{"best_val_loss", loss},
                            {"generator", a->out_dir + "/generator_best.ckpt"},
                            {"discriminator", a->out_dir + "/discriminator_best.ckpt"},
                            {"history", history_json(res.history)}}
                 .dump(2)
          << "\n";
    } else {
      out << "best val loss " << std::fixed << std::setprecision(4) << loss << "\n";
      out << "wrote " << a->out_dir << "/generator_best.ckpt\n";
    }
  });
}

inline void add_transfer(CLI::App& app, std::ostream& out) {
  struct Args {
    std::string generator, in_path, out_path;
  };
  auto a = std::make_shared<Args>();
  CLI::App* c = app.add_subcommand("transfer", "recolor one PNG tile through a trained generator");
  c->add_option("--generator", a->generator, "generator checkpoint")->required();
  c->add_option("--in", a->in_path, "input tile PNG")->required();
  c->add_option("--out", a->out_path, "output tile PNG")->required();
  c->callback([a, &out] {
    GeneratorNet<float> g = load_generator(a->generator);
    write_png_rgb8(a->out_path, apply_sst(g, read_png_rgb8(a->in_path)));
    out << "wrote " << a->out_path << "\n";
  });
}

// Baseline target artifacts travel as {"method": ..., "target": ...} so a
// file fitted for one method cannot silently feed another.
template <typename T>
inline T load_target(const std::string& method, const std::string& path) {
  const nlohmann::json j = read_json_file(path);
  if (j.value("method", "") != method)
    throw std::runtime_error(path + ": fitted for '" + j.value("method", "?") + "', expected '" + method + "'");
  return T::from_json(j.at("target"));
}

inline void add_fit_baseline(CLI::App& app, std::ostream& out) {
  struct Args {
    std::string data, method, out_path;
    int tile_index = -1;
  };
  auto a = std::make_shared<Args>();
  CLI::App* c = app.add_subcommand("fit-baseline", "fit a classical normalization target from a tile set");
  c->add_option("--data", a->data, "manifest CSV of target-style tiles")->required();
  c->add_option("--method", a->method, "one of reinhard, macenko, hs")
      ->required()
      ->check(CLI::IsMember({"reinhard", "macenko", "hs"}));
  c->add_option("--out", a->out_path, "output target JSON")->required();
  c->add_option("--tile", a->tile_index, "fit from this single tile instead of pooling the whole set");
  c->callback([a, &out] {
    const Dataset ds = load_manifest(a->data, Split::train);
    const bool per_tile = a->tile_index >= 0;
    if (per_tile && static_cast<std::size_t>(a->tile_index) >= ds.tiles.size())
      throw std::runtime_error("fit-baseline: --tile " + std::to_string(a->tile_index) + " out of range, set holds " +
                               std::to_string(ds.tiles.size()) + " tiles");
    nlohmann::json target;
    if (a->method == "reinhard")
      target = (per_tile ? fit_reinhard_stats(ds.tiles[static_cast<std::size_t>(a->tile_index)].tile)
                         : fit_reinhard_stats(ds))
                   .to_json();
    else if (a->method == "macenko")
      target = (per_tile ? estimate_stain_matrix(ds.tiles[static_cast<std::size_t>(a->tile_index)].tile)
                         : fit_stain_matrix(ds))
                   .to_json();
    else
      target = (per_tile ? fit_histograms(ds.tiles[static_cast<std::size_t>(a->tile_index)].tile) : fit_histograms(ds))
                   .to_json();
    write_json_file(a->out_path, {{"method", a->method},
                                  {"target", target},
                                  {"fitted_from", a->data},
                                  {"mode", per_tile ? "tile" : "pooled"}});
    out << "wrote " << a->out_path << "\n";
  });
}

// Flags shared by evaluate and compare.
struct EvalArgs {
  std::string classifier, data, generator, fit_from;
  std::string reinhard_target, macenko_target, hs_target;
  std::string methods = "sst,macenko,reinhard,hs,identity";
  double threshold = 0.5;
  bool json = false;
};

inline std::vector<std::string> split_methods(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string m;
  while (std::getline(ss, m, ','))
    if (!m.empty()) out.push_back(m);
  if (out.empty()) throw std::runtime_error("no methods requested");
  return out;
}

inline TileTransform throwing_transform(const std::string& msg) {
  return [msg](const ColorTile&) -> ColorTile { throw std::runtime_error(msg); };
}

// Builds the per-method transforms. Missing prerequisites become per-row
// errors in the report rather than aborting the whole comparison.
inline std::vector<std::pair<std::string, TileTransform>> build_methods(const EvalArgs& a,
                                                                        const std::vector<std::string>& names) {
  const auto wants = [&names](const std::string& m) {
    return std::find(names.begin(), names.end(), m) != names.end();
  };

  std::shared_ptr<GeneratorNet<float>> gen;
  if (wants("sst") && !a.generator.empty()) gen = std::make_shared<GeneratorNet<float>>(load_generator(a.generator));

  std::optional<ChannelStats> rein;
  std::optional<StainMatrix> mac;
  std::optional<HsTarget> hs;
  if (!a.fit_from.empty()) {
    const Dataset fit_ds = load_manifest(a.fit_from, Split::train);
    if (wants("reinhard")) rein = fit_reinhard_stats(fit_ds);
    if (wants("macenko")) mac = fit_stain_matrix(fit_ds);
    if (wants("hs")) hs = fit_histograms(fit_ds);
  }
  if (!a.reinhard_target.empty()) rein = load_target<ChannelStats>("reinhard", a.reinhard_target);
  if (!a.macenko_target.empty()) mac = load_target<StainMatrix>("macenko", a.macenko_target);
  if (!a.hs_target.empty()) hs = load_target<HsTarget>("hs", a.hs_target);

  std::vector<std::pair<std::string, TileTransform>> methods;
  for (const std::string& m : names) {
    if (m == "identity") {
      methods.emplace_back(m, nullptr);
    } else if (m == "sst") {
      methods.emplace_back(m, gen ? TileTransform([gen](const ColorTile& t) { return apply_sst(*gen, t); })
                                  : throwing_transform("no generator loaded; pass --generator"));
    } else if (m == "reinhard") {
      methods.emplace_back(m, rein ? TileTransform([t = *rein](const ColorTile& s) { return reinhard_normalize(s, t); })
                                   : throwing_transform("no channel stats fitted; pass --reinhard-target or --fit-from"));
    } else if (m == "macenko") {
      methods.emplace_back(m, mac ? TileTransform([t = *mac](const ColorTile& s) { return macenko_normalize(s, t); })
                                  : throwing_transform("no stain matrix fitted; pass --macenko-target or --fit-from"));
    } else if (m == "hs") {
      methods.emplace_back(m, hs ? TileTransform([t = *hs](const ColorTile& s) { return histogram_specification(s, t); })
                                 : throwing_transform("no target histograms fitted; pass --hs-target or --fit-from"));
    } else {
      methods.emplace_back(m, throwing_transform("unknown method '" + m + "'"));
    }
  }
  return methods;
}

inline void require_matching_d(const ClassifierNet<float>& cls, const Dataset& ds) {
  if (cls.config().d != ds.tile_d())
    throw std::runtime_error("classifier expects " + std::to_string(cls.config().d) + "x" +
                             std::to_string(cls.config().d) + " tiles, dataset holds " + std::to_string(ds.tile_d()) +
                             "x" + std::to_string(ds.tile_d()));
}

inline void add_evaluate(CLI::App& app, std::ostream& out) {
  auto a = std::make_shared<EvalArgs>();
  CLI::App* c = app.add_subcommand("evaluate", "score a tile set with a trained classifier");
  c->add_option("--classifier", a->classifier, "classifier checkpoint")->required();
  c->add_option("--data", a->data, "manifest CSV to evaluate")->required();
  c->add_option("--generator", a->generator, "route tiles through this generator first");
  c->add_option("--threshold", a->threshold, "decision threshold for the confusion metrics");
  c->add_flag("--json", a->json, "emit a JSON array of reports");
  c->callback([a, &out] {
    ClassifierNet<float> cls = load_classifier(a->classifier);
    const Dataset ds = load_manifest(a->data, Split::test);
    require_matching_d(cls, ds);
    TileTransform transform;
    std::string name = "identity";
    if (!a->generator.empty()) {
      auto gen = std::make_shared<GeneratorNet<float>>(load_generator(a->generator));
      transform = [gen](const ColorTile& t) { return apply_sst(*gen, t); };
      name = "sst";
    }
    ComparisonReport rep;
    rep.rows.push_back({name, evaluate(cls, ds, transform, name, a->threshold), ""});
    out << (a->json ? rep.to_json().dump(2) + "\n" : rep.render());
  });
}

inline void add_compare(CLI::App& app, std::ostream& out) {
  auto a = std::make_shared<EvalArgs>();
  CLI::App* c = app.add_subcommand("compare", "rank stain-transfer methods by classifier metrics on one tile set");
  c->add_option("--classifier", a->classifier, "classifier checkpoint")->required();
  c->add_option("--data", a->data, "manifest CSV to evaluate")->required();
  c->add_option("--methods", a->methods, "comma list from {sst, macenko, reinhard, hs, identity}");
  c->add_option("--generator", a->generator, "generator checkpoint for the sst method");
  c->add_option("--fit-from", a->fit_from, "manifest of target-style tiles; pooled baseline fitting");
  c->add_option("--reinhard-target", a->reinhard_target, "fitted reinhard target JSON");
  c->add_option("--macenko-target", a->macenko_target, "fitted macenko target JSON");
  c->add_option("--hs-target", a->hs_target, "fitted hs target JSON");
  c->add_option("--threshold", a->threshold, "decision threshold for the confusion metrics");
  c->add_flag("--json", a->json, "emit a JSON array of reports");
  c->callback([a, &out] {
    ClassifierNet<float> cls = load_classifier(a->classifier);
    const Dataset ds = load_manifest(a->data, Split::test);
    require_matching_d(cls, ds);
    const ComparisonReport rep = comparison_report(cls, ds, build_methods(*a, split_methods(a->methods)), a->threshold);
    out << (a->json ? rep.to_json().dump(2) + "\n" : rep.render());
  });
}

}  // namespace cli

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"stain-style transfer toolkit for histopathology tiles", "sst"};
  app.require_subcommand(1);
  cli::add_synth_data(app, out);
  cli::add_train_classifier(app, out, err);
  cli::add_train_sst(app, out, err);
  cli::add_transfer(app, out);
  cli::add_evaluate(app, out);
  cli::add_compare(app, out);
  cli::add_fit_baseline(app, out);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace sst
