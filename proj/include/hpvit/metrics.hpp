#pragma once

// Classification metrics.
//
// Binary problems use class 1 as the positive class:
//   accuracy  = (TP + TN) / (TP + TN + FP + FN)
//   precision = TP / (TP + FP)
//   recall    = TP / (TP + FN)
//   F1        = 2 TP / (2 TP + FP + FN)
// Multiclass problems apply the same formulas one-vs-rest per class and
// macro-average them. A zero denominator yields 0 and sets a degenerate flag.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hpvit {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const { return n_; }
  std::uint64_t count(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * n_ + predicted); }
  void add(std::size_t truth, std::size_t predicted);
  std::uint64_t total() const;

  // One-vs-rest counts for class c.
  std::uint64_t tp(std::size_t c) const;
  std::uint64_t fp(std::size_t c) const;
  std::uint64_t fn(std::size_t c) const;
  std::uint64_t tn(std::size_t c) const;

  std::vector<std::vector<std::uint64_t>> rows() const;
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;  // row = truth, col = predicted
};

ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                          std::size_t classes);

struct ClassScores {
  double accuracy = 0.0;  // one-vs-rest
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
};

struct Scores {
  double accuracy = 0.0;  // trace / total
  // Headline numbers: the positive class for binary problems, macro otherwise.
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::string aggregation;  // "binary-positive-class-1" or "macro-one-vs-rest"
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
  double weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
  std::vector<ClassScores> per_class;
  bool degenerate = false;
  std::uint64_t samples = 0;
};

Scores scores(const ConfusionMatrix& cm);

struct RocPoint {
  double threshold = 0.0;  // +inf for the (0, 0) origin
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1)
  double auroc = 0.0;
};

// Sweeps the distinct scores in descending order; tied scores form one step.
// Throws ConfigError unless both classes are present.
RocCurve roc(std::span<const int> positive, std::span<const double> score);

struct MulticlassRoc {
  std::vector<RocCurve> per_class;  // class c vs rest
  std::vector<bool> defined;        // false when a class is absent or universal
  RocCurve macro;                   // mean TPR over the union of FPR knots
  double auroc = 0.0;               // mean of defined per-class AUROCs
};

// probabilities: one row per sample, one column per class.
MulticlassRoc roc_one_vs_rest(std::span<const std::size_t> truth, const std::vector<std::vector<double>>& probabilities);

}  // namespace hpvit
