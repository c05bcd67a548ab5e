#include "hpvit/blur.hpp"

#include <cmath>
#include <numeric>

#include "hpvit/error.hpp"

namespace hpvit {

std::vector<std::size_t> BlurSchedule::consumption_order() const {
  std::vector<std::size_t> order(levels.size());
  std::iota(order.rbegin(), order.rend(), std::size_t{0});
  return order;
}

BlurLevel blur_level(std::size_t b) {
  return BlurLevel{b, 2 * b + 1, static_cast<double>(b) * 0.3 + 0.5};
}

BlurSchedule make_schedule(std::size_t k) {
  if (k == 0) throw ConfigError("blur schedule needs at least one level (k >= 1)");
  BlurSchedule s;
  s.levels.reserve(k);
  for (std::size_t b = 0; b < k; ++b) s.levels.push_back(blur_level(b));
  return s;
}

GaussianKernel gaussian_kernel(double sigma, std::size_t radius) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("Gaussian sigma must be positive, got " + std::to_string(sigma));
  }
  GaussianKernel k;
  k.sigma = sigma;
  k.radius = radius;
  const long r = static_cast<long>(radius);
  const std::size_t n = k.size();
  k.weights.resize(n * n);
  const double two_var = 2.0 * sigma * sigma;
  const double norm = 1.0 / (M_PI * two_var);
  double total = 0.0;
  for (long i = -r; i <= r; ++i) {
    for (long j = -r; j <= r; ++j) {
      const double w = norm * std::exp(-static_cast<double>(i * i + j * j) / two_var);
      k.weights[static_cast<std::size_t>((i + r) * static_cast<long>(n) + (j + r))] = w;
      total += w;
    }
  }
  for (double& w : k.weights) w /= total;
  return k;
}

GaussianKernel gaussian_kernel(const BlurLevel& level) { return gaussian_kernel(level.sigma, level.radius); }

std::size_t reflect_index(long i, std::size_t n) {
  const long len = static_cast<long>(n);
  const long period = 2 * len;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < len ? m : period - 1 - m);
}

Image blur_image(const Image& img, const GaussianKernel& kernel) {
  if (img.empty() || img.height == 0 || img.width == 0) throw ShapeError("cannot blur an empty image");
  Image out(img.height, img.width, img.channels);
  out.source_bit_depth = img.source_bit_depth;
  const long r = static_cast<long>(kernel.radius);
  const std::size_t taps = kernel.size();
  // Reflected source columns for every output column, in tap order.
  std::vector<std::size_t> cols(img.width * taps);
  for (std::size_t x = 0; x < img.width; ++x) {
    for (long j = -r; j <= r; ++j) {
      cols[x * taps + static_cast<std::size_t>(j + r)] = reflect_index(static_cast<long>(x) + j, img.width);
    }
  }
  std::vector<std::size_t> rows(taps);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (long i = -r; i <= r; ++i) rows[static_cast<std::size_t>(i + r)] = reflect_index(static_cast<long>(y) + i, img.height);
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t* xs = cols.data() + x * taps;
      for (std::size_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (std::size_t ti = 0; ti < taps; ++ti) {
          const double* wrow = kernel.weights.data() + ti * taps;
          for (std::size_t tj = 0; tj < taps; ++tj) acc += img.at(rows[ti], xs[tj], c) * wrow[tj];
        }
        out.at(y, x, c) = std::min(1.0, std::max(0.0, acc));
      }
    }
  }
  return out;
}

}  // namespace hpvit
