#pragma once

// Reference implementations shared by unit and acceptance tests. Each is the
// slowest obvious way to compute the thing, written without the library's code.

#include <algorithm>
#include <random>
#include <vector>

#include "hpvit/blur.hpp"
#include "hpvit/image.hpp"

namespace testing {

using hpvit::GaussianKernel;
using hpvit::Image;

inline Image random_image(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, c);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

// Mirror by folding until the index lands inside [0, n).
inline long fold(long i, long n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// Direct double loop over the kernel window, same tap order as the definition.
inline Image naive_blur(const Image& img, const GaussianKernel& k) {
  Image out(img.height, img.width, img.channels);
  const long r = static_cast<long>(k.radius);
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (long i = -r; i <= r; ++i) {
          for (long j = -r; j <= r; ++j) {
            acc += img.at(static_cast<std::size_t>(fold(y + i, h)), static_cast<std::size_t>(fold(x + j, w)), c) * k.at(i, j);
          }
        }
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = std::clamp(acc, 0.0, 1.0);
      }
    }
  }
  return out;
}

// P(s+ > s-) + 0.5 P(s+ == s-) over every positive/negative pair.
inline double pairwise_auroc(const std::vector<int>& pos, const std::vector<double>& s) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

}  // namespace testing
