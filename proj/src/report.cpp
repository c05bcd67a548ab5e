#include "hpvit/report.hpp"

#include <cmath>
#include <cstdio>
#include <iterator>
#include <limits>

#include "hpvit/error.hpp"

namespace hpvit {

namespace {

using nlohmann::json;

json threshold_json(double t) {
  if (std::isfinite(t)) return t;
  return nullptr;
}

json curve_json(const RocCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({{"threshold", threshold_json(p.threshold)}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  return pts;
}

RocCurve curve_from_json(const json& j, double auroc) {
  RocCurve c;
  c.auroc = auroc;
  for (const auto& p : j) {
    RocPoint q;
    if (p.at("threshold").is_null()) {
      q.threshold = c.points.empty() ? std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
    } else {
      q.threshold = p.at("threshold").get<double>();
    }
    q.fpr = p.at("fpr").get<double>();
    q.tpr = p.at("tpr").get<double>();
    c.points.push_back(q);
  }
  return c;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

json MetricsReport::to_json() const {
  json per = json::array();
  for (std::size_t c = 0; c < scores.per_class.size(); ++c) {
    const auto& s = scores.per_class[c];
    per.push_back({{"name", c < classes.size() ? classes[c] : std::to_string(c)},
                   {"accuracy", s.accuracy},
                   {"precision", s.precision},
                   {"recall", s.recall},
                   {"f1", s.f1},
                   {"support", s.support},
                   {"degenerate", s.precision_degenerate || s.recall_degenerate || s.f1_degenerate}});
  }
  json aurocs = json::array();
  for (const auto& a : per_class_auroc) aurocs.push_back(a ? json(*a) : json(nullptr));
  return {{"format", "hpvit-report/1"},
          {"model_id", model_id},
          {"test_manifest_hash", test_manifest_hash},
          {"split", split},
          {"classes", classes},
          {"samples", scores.samples},
          {"confusion", confusion.rows()},
          {"accuracy", scores.accuracy},
          {"precision", scores.precision},
          {"recall", scores.recall},
          {"f1", scores.f1},
          {"aggregation", scores.aggregation},
          {"macro", {{"precision", scores.macro_precision}, {"recall", scores.macro_recall}, {"f1", scores.macro_f1}}},
          {"weighted",
           {{"precision", scores.weighted_precision}, {"recall", scores.weighted_recall}, {"f1", scores.weighted_f1}}},
          {"per_class", std::move(per)},
          {"degenerate", scores.degenerate},
          {"auroc", auroc},
          {"auroc_scheme", auroc_scheme},
          {"per_class_auroc", std::move(aurocs)},
          {"roc", curve_json(roc)}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  try {
    if (j.at("format").get<std::string>() != "hpvit-report/1") throw ConfigError("not an hpvit report");
    r.model_id = j.at("model_id").get<std::string>();
    r.test_manifest_hash = j.at("test_manifest_hash").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.classes = j.at("classes").get<std::vector<std::string>>();
    r.confusion = ConfusionMatrix::from_rows(j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>());
    Scores& s = r.scores;
    s.samples = j.at("samples").get<std::uint64_t>();
    s.accuracy = j.at("accuracy").get<double>();
    s.precision = j.at("precision").get<double>();
    s.recall = j.at("recall").get<double>();
    s.f1 = j.at("f1").get<double>();
    s.aggregation = j.at("aggregation").get<std::string>();
    s.macro_precision = j.at("macro").at("precision").get<double>();
    s.macro_recall = j.at("macro").at("recall").get<double>();
    s.macro_f1 = j.at("macro").at("f1").get<double>();
    s.weighted_precision = j.at("weighted").at("precision").get<double>();
    s.weighted_recall = j.at("weighted").at("recall").get<double>();
    s.weighted_f1 = j.at("weighted").at("f1").get<double>();
    s.degenerate = j.at("degenerate").get<bool>();
    for (const auto& pc : j.at("per_class")) {
      ClassScores cs;
      cs.accuracy = pc.at("accuracy").get<double>();
      cs.precision = pc.at("precision").get<double>();
      cs.recall = pc.at("recall").get<double>();
      cs.f1 = pc.at("f1").get<double>();
      cs.support = pc.at("support").get<std::uint64_t>();
      // The file keeps one flag per class; restore it on all three.
      const bool d = pc.at("degenerate").get<bool>();
      cs.precision_degenerate = cs.recall_degenerate = cs.f1_degenerate = d;
      s.per_class.push_back(cs);
    }
    r.auroc = j.at("auroc").get<double>();
    r.auroc_scheme = j.at("auroc_scheme").get<std::string>();
    for (const auto& a : j.at("per_class_auroc")) {
      r.per_class_auroc.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
    }
    r.roc = curve_from_json(j.at("roc"), r.auroc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed report: ") + e.what());
  }
  return r;
}

MetricsReport evaluate_predictions(const std::string& model_id, const std::string& manifest_hash,
                                   const std::string& split, const std::vector<std::string>& classes,
                                   std::span<const std::size_t> truth,
                                   const std::vector<std::vector<double>>& probabilities) {
  if (truth.size() != probabilities.size()) throw ShapeError("labels and probability rows differ in length");
  if (truth.empty()) throw ConfigError("nothing to evaluate");
  const std::size_t k = classes.size();
  std::vector<std::size_t> predicted;
  predicted.reserve(truth.size());
  for (const auto& row : probabilities) {
    if (row.size() != k) throw ShapeError("probability row has " + std::to_string(row.size()) + " columns, expected " + std::to_string(k));
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) best = row[c] > row[best] ? c : best;
    predicted.push_back(best);
  }

  MetricsReport r;
  r.model_id = model_id;
  r.test_manifest_hash = manifest_hash;
  r.split = split;
  r.classes = classes;
  r.confusion = confusion(truth, predicted, k);
  r.scores = scores(r.confusion);

  const MulticlassRoc m = roc_one_vs_rest(truth, probabilities);
  for (std::size_t c = 0; c < k; ++c) {
    r.per_class_auroc.push_back(m.defined[c] ? std::optional<double>(m.per_class[c].auroc) : std::nullopt);
  }
  if (k == 2) {
    if (!m.defined[1]) throw ConfigError("binary evaluation needs both classes in the test set");
    r.auroc_scheme = "binary";
    r.roc = m.per_class[1];
    r.auroc = r.roc.auroc;
  } else {
    r.auroc_scheme = "macro-one-vs-rest";
    r.auroc = m.auroc;
    r.roc = m.macro;
  }
  return r;
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr\n";
  char buf[128];
  for (const auto& p : curve.points) {
    std::string t = std::isnan(p.threshold) ? "" : std::isinf(p.threshold) ? "inf" : fmt("%.17g", p.threshold);
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", p.fpr, p.tpr);
    out += t + buf;
  }
  return out;
}

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f5fbf", "#d2572a", "#2a9d4b", "#8a3fb5"};

}  // namespace

std::string roc_svg(const std::vector<NamedCurve>& curves, const std::string& title) {
  // Plot area: x in [50, 370], y in [30, 350]; FPR right, TPR up.
  const double x0 = 50, y0 = 350, side = 320;
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 400 400\" width=\"400\" height=\"400\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"400\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"200\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" + escape_xml(title) +
       "</text>\n";
  s += "<rect x=\"50\" y=\"30\" width=\"320\" height=\"320\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<line x1=\"50\" y1=\"350\" x2=\"370\" y2=\"30\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    const std::string label = fmt("%.2f", v);
    s += "<text x=\"" + fmt("%.1f", x0 + v * side) + "\" y=\"366\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
         label + "</text>\n";
    s += "<text x=\"44\" y=\"" + fmt("%.1f", y0 - v * side + 3) + "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" +
         label + "</text>\n";
  }
  s += "<text x=\"210\" y=\"386\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">False positive rate</text>\n";
  s += "<text x=\"14\" y=\"190\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 190)\">True positive rate</text>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    std::string pts;
    for (const auto& p : curves[i].curve.points) {
      if (!pts.empty()) pts += ' ';
      pts += fmt("%.3f", x0 + p.fpr * side) + "," + fmt("%.3f", y0 - p.tpr * side);
    }
    s += "<polyline class=\"roc\" fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  }
  s += "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    const std::string y = fmt("%.0f", 330.0 - 16.0 * static_cast<double>(curves.size() - 1 - i));
    s += "<line x1=\"190\" y1=\"" + y + "\" x2=\"210\" y2=\"" + y + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"215\" y=\"" + fmt("%.0f", std::stod(y) + 4) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
         escape_xml(curves[i].label + " (AUROC " + fmt("%.4f", curves[i].curve.auroc) + ")") + "</text>\n";
  }
  s += "</g>\n</svg>\n";
  return s;
}

std::string format_delta(double d) {
  if (d == 0.0) d = 0.0;  // no "-0.0000"
  std::string s = fmt("%+.4f", d);
  return s == "-0.0000" ? "+0.0000" : s;
}

Comparison compare(const MetricsReport& a, const MetricsReport& b) {
  if (a.test_manifest_hash != b.test_manifest_hash) {
    throw ConfigError("reports were computed on different test sets (manifest " + a.test_manifest_hash.substr(0, 12) +
                      " vs " + b.test_manifest_hash.substr(0, 12) + "); refusing to compare");
  }
  if (a.classes != b.classes) throw ConfigError("reports use different class lists; refusing to compare");
  Comparison c;
  c.model_a = a.model_id;
  c.model_b = b.model_id;
  auto row = [&](const char* name, double va, double vb) { c.rows.push_back({name, va, vb, va - vb}); };
  row("Accuracy", a.scores.accuracy, b.scores.accuracy);
  row("Precision", a.scores.precision, b.scores.precision);
  row("Recall", a.scores.recall, b.scores.recall);
  row("F1", a.scores.f1, b.scores.f1);
  row("AUROC", a.auroc, b.auroc);
  c.overlay_svg = roc_svg({{a.model_id, a.roc}, {b.model_id, b.roc}}, "ROC: " + a.model_id + " vs " + b.model_id);
  return c;
}

std::string comparison_text(const Comparison& c) {
  std::size_t wa = std::max<std::size_t>(c.model_a.size(), 8), wb = std::max<std::size_t>(c.model_b.size(), 8);
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-10s  %*s  %*s  %9s\n", "Metric", static_cast<int>(wa), c.model_a.c_str(),
                static_cast<int>(wb), c.model_b.c_str(), "Delta");
  std::string out = buf;
  for (const auto& r : c.rows) {
    std::snprintf(buf, sizeof buf, "%-10s  %*.4f  %*.4f  %9s\n", r.metric.c_str(), static_cast<int>(wa), r.a,
                  static_cast<int>(wb), r.b, format_delta(r.delta).c_str());
    out += buf;
  }
  return out;
}

std::string comparison_csv(const Comparison& c) {
  std::string out = "metric," + c.model_a + "," + c.model_b + ",delta\n";
  char buf[160];
  for (const auto& r : c.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g\n", r.metric.c_str(), r.a, r.b, r.delta);
    out += buf;
  }
  return out;
}

}  // namespace hpvit
