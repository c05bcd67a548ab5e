#include "hpvit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hpvit/error.hpp"

namespace hpvit {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= n_ || predicted >= n_) {
    throw ShapeError("label out of range: truth " + std::to_string(truth) + ", predicted " +
                     std::to_string(predicted) + " with " + std::to_string(n_) + " classes");
  }
  ++counts_[truth * n_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::tp(std::size_t c) const { return count(c, c); }

std::uint64_t ConfusionMatrix::fp(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < n_; ++t) s += t == c ? 0 : count(t, c);
  return s;
}

std::uint64_t ConfusionMatrix::fn(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += p == c ? 0 : count(c, p);
  return s;
}

std::uint64_t ConfusionMatrix::tn(std::size_t c) const { return total() - tp(c) - fp(c) - fn(c); }

std::vector<std::vector<std::uint64_t>> ConfusionMatrix::rows() const {
  std::vector<std::vector<std::uint64_t>> r(n_, std::vector<std::uint64_t>(n_));
  for (std::size_t t = 0; t < n_; ++t) {
    for (std::size_t p = 0; p < n_; ++p) r[t][p] = count(t, p);
  }
  return r;
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != rows.size()) throw ShapeError("confusion matrix rows must be square");
    for (std::size_t p = 0; p < rows.size(); ++p) cm.counts_[t * cm.n_ + p] = rows[t][p];
  }
  return cm;
}

ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                          std::size_t classes) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("label arrays differ in length: " + std::to_string(truth.size()) + " vs " +
                     std::to_string(predicted.size()));
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Scores scores(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw ConfigError("cannot score an empty confusion matrix");
  Scores s;
  s.samples = total;
  std::uint64_t diag = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) diag += cm.tp(c);
  s.accuracy = static_cast<double>(diag) / static_cast<double>(total);

  for (std::size_t c = 0; c < cm.classes(); ++c) {
    ClassScores cs;
    const auto tp = cm.tp(c), fp = cm.fp(c), fn = cm.fn(c), tn = cm.tn(c);
    cs.support = tp + fn;
    cs.accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + tn + fp + fn);
    cs.precision = ratio(tp, tp + fp, cs.precision_degenerate);
    cs.recall = ratio(tp, tp + fn, cs.recall_degenerate);
    cs.f1 = ratio(2 * tp, 2 * tp + fp + fn, cs.f1_degenerate);
    s.per_class.push_back(cs);
  }

  const double k = static_cast<double>(cm.classes());
  double mp = 0.0, mr = 0.0, mf = 0.0, wp = 0.0, wr = 0.0, wf = 0.0;
  for (const auto& cs : s.per_class) {
    mp += cs.precision;
    mr += cs.recall;
    mf += cs.f1;
    const double w = static_cast<double>(cs.support);
    wp += w * cs.precision;
    wr += w * cs.recall;
    wf += w * cs.f1;
  }
  s.macro_precision = mp / k;
  s.macro_recall = mr / k;
  s.macro_f1 = mf / k;
  const double n = static_cast<double>(total);
  s.weighted_precision = wp / n;
  s.weighted_recall = wr / n;
  s.weighted_f1 = wf / n;

  if (cm.classes() == 2) {
    const ClassScores& pos = s.per_class[1];
    s.aggregation = "binary-positive-class-1";
    s.precision = pos.precision;
    s.recall = pos.recall;
    s.f1 = pos.f1;
    s.degenerate = pos.precision_degenerate || pos.recall_degenerate || pos.f1_degenerate;
  } else {
    s.aggregation = "macro-one-vs-rest";
    s.precision = s.macro_precision;
    s.recall = s.macro_recall;
    s.f1 = s.macro_f1;
    for (const auto& cs : s.per_class) {
      s.degenerate = s.degenerate || cs.precision_degenerate || cs.recall_degenerate || cs.f1_degenerate;
    }
  }
  return s;
}

RocCurve roc(std::span<const int> positive, std::span<const double> score) {
  if (positive.size() != score.size()) throw ShapeError("labels and scores differ in length");
  const std::size_t n = score.size();
  std::size_t pos = 0;
  for (int p : positive) pos += p ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw ConfigError("ROC needs at least one positive and one negative sample");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < n;) {
    const double thr = score[order[i]];
    std::size_t j = i;
    for (; j < n && score[order[j]] == thr; ++j) {
      (positive[order[j]] ? tp : fp) += 1;
    }
    const RocPoint prev = curve.points.back();
    const RocPoint next{thr, static_cast<double>(fp) / static_cast<double>(neg),
                        static_cast<double>(tp) / static_cast<double>(pos)};
    area += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) / 2.0;
    curve.points.push_back(next);
    i = j;
  }
  curve.auroc = area;
  return curve;
}

namespace {

double tpr_at(const RocCurve& c, double x) {
  const auto& p = c.points;
  double best = -1.0;
  for (const auto& q : p) {
    if (q.fpr == x) best = std::max(best, q.tpr);
  }
  if (best >= 0.0) return best;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i - 1].fpr < x && x < p[i].fpr) {
      const double t = (x - p[i - 1].fpr) / (p[i].fpr - p[i - 1].fpr);
      return p[i - 1].tpr + t * (p[i].tpr - p[i - 1].tpr);
    }
  }
  return 1.0;
}

}  // namespace

MulticlassRoc roc_one_vs_rest(std::span<const std::size_t> truth, const std::vector<std::vector<double>>& probabilities) {
  if (truth.size() != probabilities.size()) throw ShapeError("labels and probability rows differ in length");
  if (probabilities.empty()) throw ConfigError("ROC of an empty sample");
  const std::size_t classes = probabilities.front().size();
  MulticlassRoc out;
  out.per_class.resize(classes);
  out.defined.assign(classes, false);
  double sum = 0.0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<int> positive(truth.size());
    std::vector<double> score(truth.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (probabilities[i].size() != classes) throw ShapeError("ragged probability matrix");
      positive[i] = truth[i] == c ? 1 : 0;
      pos += static_cast<std::size_t>(positive[i]);
      score[i] = probabilities[i][c];
    }
    if (pos == 0 || pos == truth.size()) continue;
    out.per_class[c] = roc(positive, score);
    out.defined[c] = true;
    sum += out.per_class[c].auroc;
    ++defined;
  }
  if (defined == 0) throw ConfigError("no class has both positive and negative samples");
  out.auroc = sum / static_cast<double>(defined);

  std::vector<double> knots;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!out.defined[c]) continue;
    for (const auto& p : out.per_class[c].points) knots.push_back(p.fpr);
  }
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  out.macro.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  for (double x : knots) {
    double t = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (out.defined[c]) t += tpr_at(out.per_class[c], x);
    }
    out.macro.points.push_back({std::numeric_limits<double>::quiet_NaN(), x, t / static_cast<double>(defined)});
  }
  double area = 0.0;
  for (std::size_t i = 1; i < out.macro.points.size(); ++i) {
    const auto& a = out.macro.points[i - 1];
    const auto& b = out.macro.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  out.macro.auroc = area;
  return out;
}

}  // namespace hpvit
