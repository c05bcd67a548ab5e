#pragma once

// Desk-scale two-class image generator.
//
// Class 0 ("blobs") is a sum of a few Gaussian blobs; class 1 ("stripes") is a
// randomly oriented sinusoidal grating. Every image is renormalized to a random
// mean and contrast drawn from the same distribution for both classes, then
// jittered with pixel noise, so global brightness carries no label signal.

#include <cstdint>
#include <filesystem>

#include "hpvit/dataset.hpp"
#include "hpvit/image.hpp"

namespace hpvit {

struct SyntheticConfig {
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 25;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::uint64_t seed = 0;
};

struct SyntheticSet {
  LabeledImages train;
  LabeledImages test;
};

Image synth_image(std::size_t label, const SyntheticConfig& cfg, std::uint64_t stream);
SyntheticSet make_synthetic_images(const SyntheticConfig& cfg);

// Best accuracy of a single threshold on the per-image pixel mean, either
// polarity, swept over all midpoints between sorted means.
double mean_threshold_accuracy(const LabeledImages& data);

struct SyntheticSummary {
  DatasetManifest train;
  DatasetManifest test;
  double mean_threshold_accuracy = 0.0;
};

// Writes <out>/train/<class>/*.png and <out>/test/<class>/*.png (8-bit) and
// returns the scanned manifests.
SyntheticSummary make_synthetic(const std::filesystem::path& out, const SyntheticConfig& cfg);

}  // namespace hpvit
