#include "hpvit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hpvit/error.hpp"

namespace hpvit {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string lower_ext(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

void check_image(const Image& img) {
  if (img.height == 0 || img.width == 0) throw ShapeError("empty image");
  if (img.channels != 1 && img.channels != 3) {
    throw ShapeError("images must have 1 or 3 channels, got " + std::to_string(img.channels));
  }
  if (img.pixels.size() != img.height * img.width * img.channels) {
    throw ShapeError("pixel buffer does not match image dimensions");
  }
  for (double v : img.pixels) {
    if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("pixel value outside [0, 1]: " + std::to_string(v));
  }
}

// ---------------------------------------------------------------------------
// PPM

std::string encode_ppm(const Image& img) {
  check_image(img);
  if (img.channels != 3) return encode_ppm(convert_channels(img, 3));
  std::ostringstream os;
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + img.pixels.size());
  for (double v : img.pixels) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto fail = [](const std::string& why) { return IoError("corrupt PPM: " + why); };
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_ws();
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) throw fail("header value too large");
      ++pos;
    }
    if (pos == start) throw fail("malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw fail("missing P6 signature");
  pos = 2;
  const std::size_t width = read_uint();
  const std::size_t height = read_uint();
  const std::size_t maxval = read_uint();
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) throw fail("bad dimensions or maxval");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("bad header end");
  ++pos;
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t count = width * height * 3;
  if (bytes.size() - pos < count * bps) throw fail("truncated pixel data");
  Image img(height, width, 3);
  img.source_bit_depth = bps == 1 ? 8 : 16;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t raw = bps == 1 ? p[i] : (static_cast<std::size_t>(p[2 * i]) << 8) | p[2 * i + 1];
    if (raw > maxval) throw fail("sample exceeds maxval");
    img.pixels[i] = static_cast<double>(raw) / static_cast<double>(maxval);
  }
  return img;
}

// ---------------------------------------------------------------------------
// PNG

std::string encode_png(const Image& img) {
  check_image(img);
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.pixels[i]);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + pi.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + pi.message);
  }
  out.resize(size);
  return out;
}

Image decode_png(const std::string& bytes) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size())) {
    throw IoError(std::string("corrupt PNG: ") + pi.message);
  }
  const bool color = (pi.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const int depth = PNG_IMAGE_SAMPLE_COMPONENT_SIZE(pi.format) == 2 ? 16 : 8;
  pi.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> raw(PNG_IMAGE_SIZE(pi));
  png_color black{0, 0, 0};
  if (!png_image_finish_read(&pi, &black, raw.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw IoError(std::string("corrupt PNG: ") + pi.message);
  }
  Image img(pi.height, pi.width, color ? 3 : 1);
  img.source_bit_depth = depth;
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

// ---------------------------------------------------------------------------
// Files

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Image read_image(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  try {
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) == 0) return decode_png(bytes);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  throw IoError(path.string() + ": unsupported image format (PNG and binary PPM only)");
}

void write_image(const std::filesystem::path& path, const Image& img) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") {
    write_file_bytes(path, encode_png(img));
  } else if (ext == ".ppm") {
    write_file_bytes(path, encode_ppm(img));
  } else {
    throw IoError("unsupported output format: " + path.string());
  }
}

bool looks_like_supported_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  char head[8] = {};
  in.read(head, 8);
  const auto got = in.gcount();
  if (got >= 8 && std::memcmp(head, "\x89PNG\r\n\x1a\n", 8) == 0) return true;
  return got >= 2 && head[0] == 'P' && head[1] == '6';
}

// ---------------------------------------------------------------------------
// Geometry

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  if (img.empty()) throw ShapeError("resize of an empty image");
  if (height == 0 || width == 0) throw ShapeError("resize target must be nonempty");
  Image out(height, width, img.channels);
  out.source_bit_depth = img.source_bit_depth;
  const double sy = static_cast<double>(img.height) / static_cast<double>(height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(width);
  auto coord = [](std::size_t dst, double scale, std::size_t src_len, std::size_t& lo, std::size_t& hi,
                  double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src_len - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, src_len - 1);
    frac = s - static_cast<double>(lo);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, sy, img.height, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, sx, img.width, x0, x1, fx);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
        const double bot = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
        out.at(y, x, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Image convert_channels(const Image& img, std::size_t channels) {
  if (channels != 1 && channels != 3) throw ShapeError("channels must be 1 or 3");
  if (img.channels == channels) return img;
  Image out(img.height, img.width, channels);
  out.source_bit_depth = img.source_bit_depth;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      if (channels == 3) {
        for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, 0);
      } else {
        const double l = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
        out.at(y, x, 0) = std::clamp(l, 0.0, 1.0);
      }
    }
  }
  return out;
}

Image decode_and_resize(const std::filesystem::path& path, std::size_t height, std::size_t width,
                        std::size_t channels) {
  Image img = convert_channels(read_image(path), channels);
  if (img.height != height || img.width != width) img = resize_bilinear(img, height, width);
  return img;
}

Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.pixels) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace hpvit
