#pragma once

// Gaussian blur levels used by the curriculum.
//
// Level b in [0, k) uses a kernel radius y = 2b + 1 (taps i, j in [-y, y])
// and standard deviation sigma = 0.3 b + 0.5, so blur grows linearly with b.

#include <cstddef>
#include <vector>

#include "hpvit/image.hpp"

namespace hpvit {

struct BlurLevel {
  std::size_t b = 0;
  std::size_t radius = 0;  // y
  double sigma = 0.0;

  friend bool operator==(const BlurLevel&, const BlurLevel&) = default;
};

struct BlurSchedule {
  std::vector<BlurLevel> levels;  // ordered by b ascending

  std::size_t k() const { return levels.size(); }
  // Order in which training consumes levels: most blurred (b = k-1) first.
  std::vector<std::size_t> consumption_order() const;
};

BlurLevel blur_level(std::size_t b);
BlurSchedule make_schedule(std::size_t k);

struct GaussianKernel {
  double sigma = 0.0;
  std::size_t radius = 0;
  std::vector<double> weights;  // (2r+1)^2, row-major, normalized to sum 1

  std::size_t size() const { return 2 * radius + 1; }
  // i, j in [-radius, radius]
  double at(long i, long j) const {
    const long r = static_cast<long>(radius);
    return weights[static_cast<std::size_t>((i + r) * static_cast<long>(size()) + (j + r))];
  }
};

GaussianKernel gaussian_kernel(double sigma, std::size_t radius);
GaussianKernel gaussian_kernel(const BlurLevel& level);

// Symmetric reflection (edge sample repeated): ... c b a | a b c ... c | c b a ...
// Valid for any offset and any n >= 1.
std::size_t reflect_index(long i, std::size_t n);

// B(x, y) = sum_{i,j} I(x+i, y+j) G(i, j) per channel with reflected borders.
Image blur_image(const Image& img, const GaussianKernel& kernel);

}  // namespace hpvit
