#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sst/metrics.hpp"
#include "sst/synth.hpp"

using namespace sst;

namespace {

// All positive/negative pairs compared directly, ties worth half.
double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  for (int l : labels) n_neg += (l == 0) ? 1 : 0;
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

TEST_CASE("roc auc closed examples") {
  CHECK(roc_auc({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0}) == 0.75);
  CHECK(roc_auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
  CHECK(roc_auc({0.1, 0.9}, {0, 1}) == 1.0);
  CHECK(roc_auc({0.9, 0.1}, {0, 1}) == 0.0);
}

TEST_CASE("roc auc matches the pairwise oracle") {
  Rng rng(314);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 49.0);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const bool quantize = rng.uniform() < 0.5;  // force ties half the time
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      scores[i] = quantize ? std::floor(u * 10.0) / 10.0 : u;
      labels[i] = rng.uniform() < 0.5 ? 0 : 1;
    }
    labels[0] = 0;  // guarantee both classes
    labels[1] = 1;
    CHECK(roc_auc(scores, labels) == Catch::Approx(auc_pairwise(scores, labels)).margin(1e-12));
  }
}

TEST_CASE("roc auc invariances") {
  Rng rng(77);
  std::vector<double> scores(30);
  std::vector<int> labels(30);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = std::floor(rng.uniform() * 8.0) / 8.0;
    labels[i] = rng.uniform() < 0.4 ? 1 : 0;
  }
  labels[0] = 0;
  labels[1] = 1;
  const double base = roc_auc(scores, labels);

  SECTION("strictly monotone transforms preserve the value") {
    std::vector<double> affine(scores), expd(scores), atand(scores);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      affine[i] = 3.0 * scores[i] - 4.0;
      expd[i] = std::exp(scores[i]);
      atand[i] = std::atan(scores[i]);
    }
    CHECK(roc_auc(affine, labels) == base);
    CHECK(roc_auc(expd, labels) == base);
    CHECK(roc_auc(atand, labels) == base);
  }
  SECTION("complement symmetry") {
    std::vector<int> flipped(labels);
    for (int& l : flipped) l = 1 - l;
    CHECK(roc_auc(scores, labels) + roc_auc(scores, flipped) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("roc auc input validation") {
  CHECK_THROWS_WITH(roc_auc({0.5, 0.6}, {1, 1}), Catch::Matchers::ContainsSubstring("single-class"));
  CHECK_THROWS_WITH(roc_auc({0.5, 0.6}, {0, 0}), Catch::Matchers::ContainsSubstring("single-class"));
  CHECK_THROWS_WITH(roc_auc({0.5}, {1, 0}), Catch::Matchers::ContainsSubstring("scores"));
  CHECK_THROWS_WITH(roc_auc({}, {}), Catch::Matchers::ContainsSubstring("empty"));
  CHECK_THROWS_WITH(roc_auc({0.5, 0.6}, {0, 2}), Catch::Matchers::ContainsSubstring("outside"));
  CHECK_THROWS_WITH(roc_auc({0.5, std::nan("")}, {0, 1}), Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("confusion metrics") {
  SECTION("perfect separation") {
    const ConfusionMetrics m = confusion_metrics({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}, 0.5);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.specificity == 1.0);
    CHECK_FALSE(m.degenerate);
  }
  SECTION("hand-built confusion matrix") {
    // TP=1 (0.9), FN=1 (0.4), FP=1 (0.6), TN=1 (0.1)
    const ConfusionMetrics m = confusion_metrics({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0}, 0.5);
    CHECK(m.precision == 0.5);
    CHECK(m.recall == 0.5);
    CHECK(m.specificity == 0.5);
    CHECK_FALSE(m.degenerate);
  }
  SECTION("all predicted negative") {
    const ConfusionMetrics m = confusion_metrics({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0}, 2.0);
    CHECK(m.precision == 0.0);
    CHECK(m.degenerate);
    CHECK(m.specificity == 1.0);
    CHECK(m.recall == 0.0);
  }
  SECTION("threshold zero predicts everything positive") {
    const ConfusionMetrics m = confusion_metrics({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0}, 0.0);
    CHECK(m.recall == 1.0);
    CHECK(m.specificity == 0.0);
    CHECK_FALSE(m.degenerate);
  }
  SECTION("single class rejected") {
    CHECK_THROWS_WITH(confusion_metrics({0.5, 0.6}, {1, 1}, 0.5), Catch::Matchers::ContainsSubstring("single-class"));
  }
}

TEST_CASE("evaluate over a dataset") {
  auto cls = build_classifier(16, 1, 4, 5);
  Dataset ds;
  for (int i = 0; i < 8; ++i)
    ds.tiles.push_back(synth_tile(default_style_a(), i % 2, 16, 1000 + static_cast<std::uint64_t>(i)));

  const MetricsReport plain = evaluate(cls, ds, nullptr, "identity");
  CHECK(plain.n_samples == 8);
  CHECK(plain.method_name == "identity");
  CHECK(plain.auc >= 0.0);
  CHECK(plain.auc <= 1.0);

  // a pointwise-identity transform gives exactly the same report
  const MetricsReport wrapped = evaluate(cls, ds, [](const ColorTile& t) { return t; }, "identity");
  CHECK(wrapped.auc == plain.auc);
  CHECK(wrapped.precision == plain.precision);
  CHECK(wrapped.recall == plain.recall);
  CHECK(wrapped.specificity == plain.specificity);

  SECTION("single-class dataset rejected") {
    Dataset one;
    for (int i = 0; i < 4; ++i) one.tiles.push_back(synth_tile(default_style_a(), 1, 16, 2000 + static_cast<std::uint64_t>(i)));
    CHECK_THROWS_WITH(evaluate(cls, one, nullptr, "x"), Catch::Matchers::ContainsSubstring("single class"));
  }
  SECTION("transfer output is validated") {
    const TileTransform bad = [](const ColorTile& t) {
      ColorTile out = t;
      out.pix[0] = std::nan("");
      return out;
    };
    CHECK_THROWS_WITH(evaluate(cls, ds, bad, "bad"), Catch::Matchers::ContainsSubstring("transfer output"));
  }
  SECTION("tile size mismatch surfaces") {
    Dataset big;
    for (int i = 0; i < 4; ++i) big.tiles.push_back(synth_tile(default_style_a(), i % 2, 32, 3000 + static_cast<std::uint64_t>(i)));
    CHECK_THROWS_WITH(evaluate(cls, big, nullptr, "x"), Catch::Matchers::ContainsSubstring("expected"));
  }
}

TEST_CASE("comparison report") {
  auto cls = build_classifier(16, 1, 4, 6);
  Dataset ds;
  for (int i = 0; i < 8; ++i)
    ds.tiles.push_back(synth_tile(default_style_a(), i % 2, 16, 4000 + static_cast<std::uint64_t>(i)));

  SECTION("single identity method equals evaluate") {
    const ComparisonReport rep = comparison_report(cls, ds, {{"identity", nullptr}});
    REQUIRE(rep.rows.size() == 1);
    const MetricsReport direct = evaluate(cls, ds, nullptr, "identity");
    CHECK(rep.rows[0].report.auc == direct.auc);
    CHECK(rep.rows[0].error.empty());
  }
  SECTION("rows sorted by auc, errors annotated") {
    const TileTransform flatten = [](const ColorTile& t) {
      ColorTile out(t.d);
      std::fill(out.pix.begin(), out.pix.end(), 0.5);
      return out;
    };
    const TileTransform broken = [](const ColorTile&) -> ColorTile {
      throw std::runtime_error("no stain matrix fitted");
    };
    const ComparisonReport rep =
        comparison_report(cls, ds, {{"flat", flatten}, {"identity", nullptr}, {"broken", broken}});
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.rows[0].error.empty());
    CHECK(rep.rows[1].error.empty());
    CHECK(rep.rows[0].report.auc >= rep.rows[1].report.auc);
    CHECK(rep.rows[2].method_name == "broken");
    CHECK(rep.rows[2].error == "no stain matrix fitted");

    const std::string table = rep.render();
    CHECK(table.find("tile-level") != std::string::npos);
    CHECK(table.find("identity") != std::string::npos);
    CHECK(table.find("error: no stain matrix fitted") != std::string::npos);

    const nlohmann::json j = rep.to_json();
    REQUIRE(j.is_array());
    REQUIRE(j.size() == 3);
    CHECK(j[2].at("error") == "no stain matrix fitted");
    CHECK(j[0].contains("auc"));
  }
}
