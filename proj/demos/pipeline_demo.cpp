// End-to-end miniature of the toolkit: synthesize a two-style benchmark,
// train the tumor classifier on style A, watch it degrade on style B, train
// the stain-style transfer generator, and print the method comparison. Scaled
// to finish in about a minute on a laptop; the real experiment lives in the
// acceptance suite.
//
//   ./pipeline_demo

#include <iostream>

#include "sst/metrics.hpp"
#include "sst/synth.hpp"
#include "sst/train.hpp"

using namespace sst;

int main() {
  const auto sets = make_synthetic_benchmark(default_style_a(), default_style_b(), 200, 60, 100, 32, 42);
  const Dataset& train = sets[0];
  const Dataset& val = sets[1];
  const Dataset& test = sets[2];
  std::cout << "benchmark: " << train.tiles.size() << " train / " << val.tiles.size() << " val (style A), "
            << test.tiles.size() << " test (style B)\n\n";

  TrainConfig ccfg = TrainConfig::classifier_defaults();
  ccfg.epochs = 3;
  ccfg.seed = 1;
  std::cout << "training classifier on style A\n";
  ClassifierResult cls = train_classifier(train, val, ccfg, [](const EpochRecord& r) {
    std::cout << "  epoch " << r.epoch << "  loss " << r.train_loss << "  val auc " << r.val_metric << "\n";
  });

  TrainConfig scfg;
  scfg.epochs = 4;
  scfg.seed = 2;
  scfg.model_width = 16;
  std::cout << "\ntraining stain-style transfer\n";
  SstResult sst = train_sst(train, val, cls.classifier, scfg, [](const EpochRecord& r) {
    std::cout << "  epoch " << r.epoch << "  d " << r.d_loss << "  g " << r.train_loss << "  val " << r.val_metric
              << "  diversity " << r.diversity << "\n";
  });

  auto through_sst = [&](const ColorTile& t) { return apply_sst(sst.generator, t); };
  const ChannelStats rein = fit_reinhard_stats(train);
  const StainMatrix mac = fit_stain_matrix(train);
  const HsTarget hs = fit_histograms(train);

  std::cout << "\nstyle-B test set, classifier trained on style A:\n";
  const ComparisonReport rep = comparison_report(
      cls.classifier, test,
      {{"identity", nullptr},
       {"sst", through_sst},
       {"reinhard", [&](const ColorTile& t) { return reinhard_normalize(t, rein); }},
       {"macenko", [&](const ColorTile& t) { return macenko_normalize(t, mac); }},
       {"hs", [&](const ColorTile& t) { return histogram_specification(t, hs); }}});
  std::cout << rep.render();
  return 0;
}
