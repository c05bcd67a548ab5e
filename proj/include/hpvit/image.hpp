#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace hpvit {

// H x W x C raster, interleaved row-major (HWC). Pixel values live in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> pixels;
  int source_bit_depth = 8;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  bool empty() const { return pixels.empty(); }
  std::size_t index(std::size_t y, std::size_t x, std::size_t c) const { return (y * width + x) * channels + c; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[index(y, x, c)]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[index(y, x, c)]; }

  friend bool operator==(const Image&, const Image&) = default;
};

// Throws ShapeError unless C is 1 or 3, the buffer matches H*W*C and all values are in [0, 1].
void check_image(const Image& img);

// Binary PPM (P6). Maxval up to 65535 on decode; encode writes 8-bit.
std::string encode_ppm(const Image& img);
Image decode_ppm(const std::string& bytes);

// 8-bit gray or RGB PNG.
std::string encode_png(const Image& img);
Image decode_png(const std::string& bytes);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

// Chooses the codec from the file's magic bytes.
Image read_image(const std::filesystem::path& path);
// Chooses the codec from the extension (.png or .ppm).
void write_image(const std::filesystem::path& path, const Image& img);

// True if the file starts with a PNG or P6 signature.
bool looks_like_supported_image(const std::filesystem::path& path);

// Bilinear, half-pixel centres, edge clamp, no antialias pre-filter.
Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

// Gray <-> RGB. Gray is replicated; RGB collapses with Rec. 601 luma weights.
Image convert_channels(const Image& img, std::size_t channels);

Image decode_and_resize(const std::filesystem::path& path, std::size_t height, std::size_t width,
                        std::size_t channels);

// Rounds each value to the nearest multiple of 1/255.
Image quantize8(const Image& img);

}  // namespace hpvit
