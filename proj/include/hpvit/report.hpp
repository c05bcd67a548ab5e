#pragma once

// Evaluation reports and model comparison.
//
// Report JSON fields (format "hpvit-report/1", schema in schemas/report.schema.json):
//   model_id              run identifier of the evaluated model
//   test_manifest_hash    content hash of the evaluated dataset manifest
//   split                 split label of that manifest
//   classes               class names, index = label
//   samples               number of evaluated images
//   confusion             rows = true class, columns = predicted class
//   accuracy              trace / total
//   precision, recall, f1 headline values (see aggregation)
//   aggregation           "binary-positive-class-1" or "macro-one-vs-rest"
//   macro, weighted       {precision, recall, f1} under each averaging scheme
//   per_class             [{name, accuracy, precision, recall, f1, support, degenerate}]
//   degenerate            true when any headline metric hit a zero denominator
//   auroc                 binary: positive-class AUROC; multiclass: macro one-vs-rest
//   auroc_scheme          "binary" or "macro-one-vs-rest"
//   per_class_auroc       one-vs-rest AUROC per class (null if undefined)
//   roc                   [{threshold, fpr, tpr}] curve used for plots

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpvit/metrics.hpp"

namespace hpvit {

struct MetricsReport {
  std::string model_id;
  std::string test_manifest_hash;
  std::string split;
  std::vector<std::string> classes;
  ConfusionMatrix confusion{2};
  Scores scores;
  double auroc = 0.0;
  std::string auroc_scheme;
  std::vector<std::optional<double>> per_class_auroc;
  RocCurve roc;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

// Builds a full report from labels and class probabilities.
MetricsReport evaluate_predictions(const std::string& model_id, const std::string& manifest_hash,
                                   const std::string& split, const std::vector<std::string>& classes,
                                   std::span<const std::size_t> truth,
                                   const std::vector<std::vector<double>>& probabilities);

// CSV with header `threshold,fpr,tpr`; the origin's threshold is written as inf.
std::string roc_csv(const RocCurve& curve);

struct NamedCurve {
  std::string label;
  RocCurve curve;
};
// Self-contained SVG with a fixed 400x400 viewBox, one polyline per curve and a legend.
std::string roc_svg(const std::vector<NamedCurve>& curves, const std::string& title);

struct ComparisonRow {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // a - b
};

struct Comparison {
  std::string model_a;
  std::string model_b;
  std::vector<ComparisonRow> rows;  // Accuracy, Precision, Recall, F1, AUROC
  std::string overlay_svg;
};

// Throws ConfigError when the reports were computed on different test manifests.
Comparison compare(const MetricsReport& a, const MetricsReport& b);
std::string comparison_text(const Comparison& c);
std::string comparison_csv(const Comparison& c);

// Formats a signed delta with four decimals, e.g. +0.0191.
std::string format_delta(double d);

}  // namespace hpvit
