#include "hpvit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "hpvit/curriculum.hpp"
#include "hpvit/error.hpp"

namespace hpvit {

namespace {
const std::vector<std::string> kClasses = {"blobs", "stripes"};
constexpr std::uint64_t kSynthTag = 0x73796e74;  // "synt"
}  // namespace

Image synth_image(std::size_t label, const SyntheticConfig& cfg, std::uint64_t stream) {
  std::mt19937_64 rng(mix_seed(cfg.seed, kSynthTag, stream, label));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double h = static_cast<double>(cfg.height);
  const double w = static_cast<double>(cfg.width);
  const double scale = std::min(h, w) / 32.0;

  std::vector<double> raw(cfg.height * cfg.width, 0.0);
  if (label == 0) {
    const int blobs = 1 + static_cast<int>(unit(rng) * 3.0);
    for (int b = 0; b < blobs; ++b) {
      const double cy = uniform(0.15, 0.85) * h;
      const double cx = uniform(0.15, 0.85) * w;
      const double s = uniform(2.5, 5.0) * scale;
      const double amp = uniform(0.6, 1.0);
      for (std::size_t y = 0; y < cfg.height; ++y) {
        for (std::size_t x = 0; x < cfg.width; ++x) {
          const double dy = static_cast<double>(y) - cy;
          const double dx = static_cast<double>(x) - cx;
          raw[y * cfg.width + x] += amp * std::exp(-(dy * dy + dx * dx) / (2.0 * s * s));
        }
      }
    }
  } else {
    const double theta = uniform(0.0, M_PI);
    const double period = uniform(6.0, 12.0) * scale;
    const double phase = uniform(0.0, 2.0 * M_PI);
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double u = static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta);
        raw[y * cfg.width + x] = std::sin(2.0 * M_PI * u / period + phase);
      }
    }
  }

  const double n = static_cast<double>(raw.size());
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / n;
  double var = 0.0;
  for (double v : raw) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  const double target_mean = uniform(0.35, 0.65);
  const double target_sd = uniform(0.12, 0.2);
  std::normal_distribution<double> noise(0.0, 0.03);

  Image img(cfg.height, cfg.width, cfg.channels);
  std::vector<double> tint(cfg.channels, 1.0);
  for (auto& t : tint) t = cfg.channels == 1 ? 1.0 : uniform(0.85, 1.15);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double z = sd > 0 ? (raw[i] - mean) / sd : 0.0;
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const double v = (target_mean + target_sd * z) * tint[c] + noise(rng);
      img.pixels[i * cfg.channels + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

SyntheticSet make_synthetic_images(const SyntheticConfig& cfg) {
  if (cfg.train_per_class == 0) throw ConfigError("synthetic dataset needs at least one image per class");
  if (cfg.height == 0 || cfg.width == 0) throw ConfigError("synthetic image size must be positive");
  if (cfg.channels != 1 && cfg.channels != 3) throw ConfigError("synthetic channels must be 1 or 3");
  SyntheticSet set;
  auto fill = [&](LabeledImages& dst, std::size_t per_class, std::uint64_t split_tag) {
    dst.classes = kClasses;
    for (std::size_t label = 0; label < kClasses.size(); ++label) {
      for (std::size_t i = 0; i < per_class; ++i) {
        dst.images.push_back(quantize8(synth_image(label, cfg, split_tag * 1000003 + i)));
        dst.labels.push_back(label);
        char name[64];
        std::snprintf(name, sizeof name, "%s/%s_%04zu.png", kClasses[label].c_str(), kClasses[label].c_str(), i);
        dst.sources.push_back(name);
      }
    }
  };
  fill(set.train, cfg.train_per_class, 1);
  fill(set.test, cfg.test_per_class, 2);
  return set;
}

double mean_threshold_accuracy(const LabeledImages& data) {
  const std::size_t n = data.images.size();
  if (n == 0) return 0.0;
  std::vector<std::pair<double, std::size_t>> means;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& px = data.images[i].pixels;
    means.emplace_back(std::accumulate(px.begin(), px.end(), 0.0) / static_cast<double>(px.size()),
                       data.labels[i]);
  }
  std::sort(means.begin(), means.end());
  const std::size_t positives =
      static_cast<std::size_t>(std::count_if(means.begin(), means.end(), [](const auto& m) { return m.second == 1; }));
  // Predict 1 above the cut; cut after position i (i = 0 means everything is 1).
  std::size_t ones_below = 0;
  std::size_t zeros_below = 0;
  double best = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    // A threshold cannot separate equal means.
    const bool cut_ok = i == 0 || i == n || means[i].first != means[i - 1].first;
    if (cut_ok) {
      const std::size_t correct = zeros_below + (positives - ones_below);
      const double acc = static_cast<double>(correct) / static_cast<double>(n);
      best = std::max({best, acc, 1.0 - acc});
    }
    if (i < n) ++(means[i].second == 1 ? ones_below : zeros_below);
  }
  return best;
}

SyntheticSummary make_synthetic(const std::filesystem::path& out, const SyntheticConfig& cfg) {
  const SyntheticSet set = make_synthetic_images(cfg);
  auto write = [&](const LabeledImages& d, const std::string& split) {
    for (std::size_t i = 0; i < d.images.size(); ++i) write_image(out / split / d.sources[i], d.images[i]);
  };
  write(set.train, "train");
  if (cfg.test_per_class > 0) write(set.test, "test");
  SyntheticSummary s;
  s.train = scan_folder(out / "train", "train").manifest;
  if (cfg.test_per_class > 0) s.test = scan_folder(out / "test", "test").manifest;
  LabeledImages all = set.train;
  all.images.insert(all.images.end(), set.test.images.begin(), set.test.images.end());
  all.labels.insert(all.labels.end(), set.test.labels.begin(), set.test.labels.end());
  s.mean_threshold_accuracy = mean_threshold_accuracy(all);
  return s;
}

}  // namespace hpvit
