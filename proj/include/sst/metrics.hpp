#pragma once

#include <algorithm>
#include <functional>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sst/networks.hpp"
#include "sst/tile.hpp"

// Tile-level evaluation: rank-based AUC, thresholded confusion metrics and
// the per-method comparison table.

namespace sst {

namespace detail {

inline void require_two_classes(const std::vector<double>& scores, const std::vector<int>& labels,
                                const char* what) {
  if (scores.size() != labels.size())
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  if (scores.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument(std::string(what) + ": label outside {0,1}");
    if (!std::isfinite(scores[i])) throw std::invalid_argument(std::string(what) + ": non-finite score");
    pos += static_cast<std::size_t>(labels[i]);
  }
  if (pos == 0 || pos == labels.size())
    throw std::invalid_argument(std::string(what) + ": single-class input, need both classes");
}

}  // namespace detail

// Probability that a random positive outscores a random negative, ties
// counted half. Computed from average ranks in O(n log n).
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  detail::require_two_classes(scores, labels, "roc_auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));  // 1-based
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k] == 1) {
      pos_rank_sum += rank[k];
      ++n_pos;
    }
  const std::size_t n_neg = n - n_pos;
  return (pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct ConfusionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  bool degenerate = false;  // set when any denominator was zero
};

// score >= threshold predicts positive.
inline ConfusionMetrics confusion_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                                          double threshold = 0.5) {
  detail::require_two_classes(scores, labels, "confusion_metrics");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    else if (pred && labels[i] == 0) ++fp;
    else if (!pred && labels[i] == 0) ++tn;
    else ++fn;
  }
  ConfusionMetrics m;
  auto ratio = [&m](std::size_t num, std::size_t den) {
    if (den == 0) {
      m.degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.specificity = ratio(tn, tn + fp);
  return m;
}

struct MetricsReport {
  std::string method_name;
  double auc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  std::size_t n_samples = 0;
  bool degenerate = false;

  nlohmann::json to_json() const {
    return {{"method", method_name}, {"auc", auc},
            {"precision", precision}, {"recall", recall},
            {"specificity", specificity}, {"n_samples", n_samples},
            {"degenerate", degenerate}};
  }
};

using TileTransform = std::function<ColorTile(const ColorTile&)>;

// Scores every tile (optionally routed through `transfer`) with the frozen
// classifier and reduces to one report. Batched to keep the working set small.
template <typename S>
inline MetricsReport evaluate(ClassifierNet<S>& classifier, const Dataset& dataset, const TileTransform& transfer,
                              const std::string& method_name, double threshold = 0.5) {
  dataset.validate();
  if (dataset.count(0) == 0 || dataset.count(1) == 0)
    throw std::invalid_argument("evaluate: dataset holds a single class, need both");
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(dataset.tiles.size());
  labels.reserve(dataset.tiles.size());
  constexpr std::size_t kBatch = 32;
  std::vector<ColorTile> transformed;
  for (std::size_t start = 0; start < dataset.tiles.size(); start += kBatch) {
    const std::size_t end = std::min(start + kBatch, dataset.tiles.size());
    transformed.clear();
    std::vector<const ColorTile*> batch;
    for (std::size_t i = start; i < end; ++i) {
      if (transfer) {
        transformed.push_back(transfer(dataset.tiles[i].tile));
        validate_color_tile(transformed.back(), "evaluate: transfer output");
      }
      labels.push_back(dataset.tiles[i].label);
    }
    for (std::size_t i = start; i < end; ++i)
      batch.push_back(transfer ? &transformed[i - start] : &dataset.tiles[i].tile);
    const Tensor<S> probs = classifier.forward(color_batch_to_tensor<S>(batch), Pass::infer).probs;
    for (int i = 0; i < probs.n; ++i) scores.push_back(static_cast<double>(probs.v[static_cast<std::size_t>(i)]));
  }
  MetricsReport r;
  r.method_name = method_name;
  r.auc = roc_auc(scores, labels);
  const ConfusionMetrics c = confusion_metrics(scores, labels, threshold);
  r.precision = c.precision;
  r.recall = c.recall;
  r.specificity = c.specificity;
  r.degenerate = c.degenerate;
  r.n_samples = scores.size();
  return r;
}

struct ComparisonRow {
  std::string method_name;
  MetricsReport report;  // valid iff error is empty
  std::string error;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;  // metric rows sorted by AUC descending, then error rows

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const ComparisonRow& row : rows) {
      if (row.error.empty()) {
        arr.push_back(row.report.to_json());
      } else {
        arr.push_back({{"method", row.method_name}, {"error", row.error}});
      }
    }
    return arr;
  }

  // Aligned text table. Metrics are tile-level.
  std::string render() const {
    std::ostringstream out;
    out << "tile-level metrics\n";
    out << std::left << std::setw(14) << "method" << std::right << std::setw(9) << "auc" << std::setw(11)
        << "precision" << std::setw(9) << "recall" << std::setw(13) << "specificity" << std::setw(6) << "n"
        << "\n";
    for (const ComparisonRow& row : rows) {
      if (!row.error.empty()) {
        out << std::left << std::setw(14) << row.method_name << "  error: " << row.error << "\n";
        continue;
      }
      const MetricsReport& r = row.report;
      out << std::left << std::setw(14) << row.method_name << std::right << std::fixed << std::setprecision(4)
          << std::setw(9) << r.auc << std::setw(11) << r.precision << std::setw(9) << r.recall << std::setw(13)
          << r.specificity << std::setw(6) << r.n_samples << (r.degenerate ? "  (degenerate threshold)" : "")
          << "\n";
    }
    return out.str();
  }
};

// Per-method evaluation; a method that throws becomes a table annotation
// instead of aborting the run.
template <typename S>
inline ComparisonReport comparison_report(ClassifierNet<S>& classifier, const Dataset& dataset,
                                          const std::vector<std::pair<std::string, TileTransform>>& methods,
                                          double threshold = 0.5) {
  ComparisonReport rep;
  std::vector<ComparisonRow> errors;
  for (const auto& [name, transform] : methods) {
    ComparisonRow row;
    row.method_name = name;
    try {
      row.report = evaluate(classifier, dataset, transform, name, threshold);
      rep.rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      row.error = e.what();
      errors.push_back(std::move(row));
    }
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) { return a.report.auc > b.report.auc; });
  for (ComparisonRow& row : errors) rep.rows.push_back(std::move(row));
  return rep;
}

}  // namespace sst
