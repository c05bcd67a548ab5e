#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "hpvit/dataset.hpp"
#include "hpvit/error.hpp"
#include "hpvit/image.hpp"
#include "hpvit/synthetic.hpp"
#include "support.hpp"

using namespace hpvit;
namespace fs = std::filesystem;

namespace {

Image noise_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 255);
  Image img(h, w, c);
  for (double& v : img.pixels) v = level(rng) / 255.0;
  return img;
}

void put(const fs::path& file, const Image& img) {
  fs::create_directories(file.parent_path());
  write_image(file, img);
}

// Brute force: every observed mean as a threshold, both polarities.
double threshold_oracle(const LabeledImages& d) {
  std::vector<double> means;
  for (const Image& img : d.images) {
    means.push_back(std::accumulate(img.pixels.begin(), img.pixels.end(), 0.0) / img.pixels.size());
  }
  const double n = static_cast<double>(means.size());
  double best = 0.0;
  std::vector<double> cuts = means;
  cuts.push_back(-1.0);
  for (double t : cuts) {
    double hits = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) hits += (means[i] > t) == (d.labels[i] == 1);
    best = std::max({best, hits / n, (n - hits) / n});
  }
  return best;
}

}  // namespace

TEST_CASE("ppm and png codecs") {
  const Image img = noise_image(5, 7, 3, 1);
  CHECK(decode_ppm(encode_ppm(img)) == img);
  const Image gray = noise_image(4, 3, 1, 2);
  // PPM is always RGB; gray comes back replicated.
  CHECK(convert_channels(decode_ppm(encode_ppm(gray)), 1).pixels.size() == gray.pixels.size());

  for (const Image& src : {img, gray}) {
    const Image back = decode_png(encode_png(src));
    REQUIRE(back.height == src.height);
    REQUIRE(back.width == src.width);
    REQUIRE(back.channels == src.channels);
    for (std::size_t i = 0; i < src.pixels.size(); ++i) CHECK(std::abs(back.pixels[i] - src.pixels[i]) <= 1.0 / 255);
  }
  // Off-grid values still land within one step.
  Image smooth(2, 2, 1);
  smooth.pixels = {0.1234, 0.5, 0.99999, 0.0001};
  const Image q = decode_png(encode_png(smooth));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(q.pixels[i] - smooth.pixels[i]) <= 1.0 / 255);

  // 16-bit PPM decodes with its own maxval.
  const std::string p16 = std::string("P6\n1 1\n65535\n") + std::string("\xff\xff\x80\x00\x00\x00", 6);
  const Image wide = decode_ppm(p16);
  CHECK(wide.pixels[0] == 1.0);
  CHECK(wide.pixels[1] == doctest::Approx(32768.0 / 65535));
  CHECK(wide.source_bit_depth == 16);

  CHECK_THROWS_AS(decode_ppm("P5\n1 1\n255\n\x00"), IoError);
  CHECK_THROWS_AS(decode_ppm("P6\n2 2\n255\nabc"), IoError);
  CHECK_THROWS_AS(decode_png("\x89PNG\r\n\x1a\nnot really"), IoError);

  Image bad(2, 2, 2);
  CHECK_THROWS_AS(check_image(bad), ShapeError);
  Image hot(1, 1, 1, 1.5);
  CHECK_THROWS_AS(check_image(hot), ShapeError);
}

TEST_CASE("decode and resize") {
  testing::TempDir tmp;
  Image solid(6, 9, 3);
  for (std::size_t i = 0; i < solid.pixels.size(); i += 3) {
    solid.pixels[i] = 51 / 255.0;
    solid.pixels[i + 1] = 102 / 255.0;
    solid.pixels[i + 2] = 204 / 255.0;
  }
  put(tmp / "solid.png", solid);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {6, 9}, {13, 4}, {224, 224}}) {
    const Image out = decode_and_resize(tmp / "solid.png", h, w, 3);
    REQUIRE(out.pixels.size() == h * w * 3);
    for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
      CHECK(std::abs(out.pixels[i] - 0.2) < 1e-12);
      CHECK(std::abs(out.pixels[i + 1] - 0.4) < 1e-12);
      CHECK(std::abs(out.pixels[i + 2] - 0.8) < 1e-12);
    }
  }

  const Image noisy = noise_image(5, 8, 3, 3);
  const Image same = resize_bilinear(noisy, 5, 8);
  for (std::size_t i = 0; i < noisy.pixels.size(); ++i) CHECK(std::abs(same.pixels[i] - noisy.pixels[i]) < 1e-12);

  // Half-pixel centres put the 4x4 samples at source coordinates
  // {-0.25, 0.25, 0.75, 1.25}, clamped to {0, 0.25, 0.75, 1}; the bilinear
  // blend of [[0,1],[1,0]] at (u, v) is u + v - 2uv.
  Image checker(2, 2, 1);
  checker.pixels = {0, 1, 1, 0};
  const Image up = resize_bilinear(checker, 4, 4);
  const double coord[] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t y = 0; y < 4; ++y) {
    for (std::size_t x = 0; x < 4; ++x) {
      const double u = coord[y], v = coord[x];
      CHECK(up.at(y, x, 0) == doctest::Approx(u + v - 2 * u * v).epsilon(1e-14));
    }
  }
  CHECK(up.at(1, 1, 0) == doctest::Approx(0.375));
  CHECK(up.at(1, 2, 0) == doctest::Approx(0.625));

  const Image rgb = convert_channels(checker, 3);
  CHECK(rgb.at(0, 1, 2) == 1.0);
  CHECK(convert_channels(rgb, 1).at(0, 1, 0) == doctest::Approx(1.0));

  write_file_bytes(tmp / "fake.png", "not an image");
  CHECK_THROWS_AS(decode_and_resize(tmp / "fake.png", 4, 4, 3), IoError);
  CHECK_THROWS_AS(read_image(tmp / "absent.png"), IoError);
  CHECK_THROWS_AS(resize_bilinear(checker, 0, 3), ShapeError);
}

TEST_CASE("folder scans") {
  testing::TempDir tmp;
  const fs::path root = tmp / "data";
  for (int i = 0; i < 3; ++i) put(root / "bio" / ("b" + std::to_string(i) + ".png"), noise_image(4, 4, 3, i));
  for (int i = 0; i < 2; ++i) put(root / "nonbio" / ("n" + std::to_string(i) + ".ppm"), noise_image(4, 4, 3, 10 + i));
  const ScanResult r = scan_folder(root);
  CHECK(r.manifest.classes == std::vector<std::string>{"bio", "nonbio"});
  CHECK(r.manifest.samples.size() == 5);
  CHECK(r.manifest.class_counts() == std::vector<std::size_t>{3, 2});
  CHECK(r.manifest.samples[3] == DatasetSample{"nonbio/n0.ppm", 1});
  CHECK(r.unreadable.empty());
  CHECK_NOTHROW(r.manifest.validate());

  const std::string hash = r.manifest.content_hash();
  CHECK(hash.size() == 64);
  CHECK(scan_folder(root).manifest.content_hash() == hash);

  // Location does not matter, contents do.
  fs::copy(root, tmp / "moved", fs::copy_options::recursive);
  CHECK(scan_folder(tmp / "moved").manifest.content_hash() == hash);
  write_file_bytes(root / "bio" / "README.txt", "notes");
  const ScanResult with_junk = scan_folder(root);
  CHECK(with_junk.unreadable == std::vector<std::string>{"bio/README.txt"});
  CHECK(with_junk.manifest.content_hash() == hash);
  put(root / "bio" / "b9.png", noise_image(4, 4, 3, 9));
  CHECK(scan_folder(root).manifest.content_hash() != hash);
  fs::remove(root / "nonbio" / "n1.ppm");
  fs::remove(root / "bio" / "b9.png");
  CHECK(scan_folder(root).manifest.content_hash() != hash);

  fs::create_directories(tmp / "empty");
  CHECK_THROWS_AS(scan_folder(tmp / "empty"), ConfigError);
  CHECK_THROWS_AS(scan_folder(tmp / "nowhere"), ConfigError);
  fs::create_directories(tmp / "hollow" / "a");
  write_file_bytes(tmp / "hollow" / "a" / "x.txt", "?");
  CHECK_THROWS_AS(scan_folder(tmp / "hollow"), ConfigError);
}

TEST_CASE("manifest invariants and persistence") {
  testing::TempDir tmp;
  DatasetManifest m;
  m.root = tmp.path();
  m.classes = {"a", "b"};
  m.samples = {{"a/1.png", 0}, {"b/1.png", 1}};
  CHECK_NOTHROW(m.validate());

  DatasetManifest bad = m;
  bad.samples.push_back({"a/1.png", 0});
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = m;
  bad.samples[1].label = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = m;
  bad.classes.push_back("c");
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  save_manifest(m, tmp / "m.json");
  const DatasetManifest back = load_manifest(tmp / "m.json");
  CHECK(back.classes == m.classes);
  CHECK(back.samples == m.samples);
  CHECK(back.content_hash() == m.content_hash());

  nlohmann::json j = read_json_file(tmp / "m.json");
  j["samples"][0]["path"] = "a/2.png";
  write_json_file(tmp / "edited.json", j);
  CHECK_THROWS_AS(load_manifest(tmp / "edited.json"), ChecksumError);
  CHECK_THROWS_AS(load_manifest(tmp / "missing.json"), ConfigError);
  write_file_bytes(tmp / "junk.json", "{not json");
  CHECK_THROWS_AS(load_manifest(tmp / "junk.json"), ConfigError);

  const std::string text = read_file_bytes(tmp / "m.json");
  CHECK(text.back() == '\n');
}

TEST_CASE("stratified split reproduces the trashnet test size") {
  // Per-class image counts of the public trashnet release.
  const std::vector<std::size_t> counts{403, 501, 410, 594, 482, 137};
  const std::vector<std::string> names{"cardboard", "glass", "metal", "paper", "plastic", "trash"};
  testing::TempDir tmp;
  const fs::path root = tmp / "trashnet";
  const std::string pixel = encode_ppm(Image(1, 1, 3, 0.5));
  for (std::size_t c = 0; c < counts.size(); ++c) {
    fs::create_directories(root / names[c]);
    for (std::size_t i = 0; i < counts[c]; ++i) {
      write_file_bytes(root / names[c] / (names[c] + std::to_string(i) + ".ppm"), pixel);
    }
  }
  const DatasetManifest m = scan_folder(root).manifest;
  CHECK(m.classes.size() == 6);
  CHECK(m.samples.size() == 2527);

  const auto [train, test] = split_manifest(m, 0.1, 0);
  CHECK(train.samples.size() == 2275);
  CHECK(test.samples.size() == 252);
  CHECK(test.class_counts() == std::vector<std::size_t>{40, 50, 41, 59, 48, 14});
  CHECK(train.split == "train");
  CHECK(test.split == "test");
  CHECK_NOTHROW(train.validate());
  CHECK_NOTHROW(test.validate());

  std::set<std::string> seen;
  for (const auto& s : train.samples) seen.insert(s.path);
  for (const auto& s : test.samples) CHECK(seen.insert(s.path).second);
  CHECK(seen.size() == 2527);

  const auto again = split_manifest(m, 0.1, 0);
  CHECK(again.second.samples == test.samples);
  CHECK(split_manifest(m, 0.1, 1).second.samples != test.samples);
  CHECK_THROWS_AS(split_manifest(m, 0.0, 0), ConfigError);
  CHECK_THROWS_AS(split_manifest(m, 1.0, 0), ConfigError);
}

TEST_CASE("synthetic generator") {
  SyntheticConfig cfg;
  cfg.seed = 5;
  const SyntheticSet a = make_synthetic_images(cfg);
  const SyntheticSet b = make_synthetic_images(cfg);
  CHECK(a.train.images == b.train.images);
  CHECK(a.test.images == b.test.images);
  CHECK(a.train.images.size() == 200);
  CHECK(a.test.images.size() == 50);
  for (const Image& img : a.train.images) {
    CHECK(img.height == 32);
    CHECK(img.width == 32);
    CHECK(img.channels == 1);
    CHECK_NOTHROW(check_image(img));
  }
  cfg.seed = 6;
  CHECK(make_synthetic_images(cfg).train.images != a.train.images);

  const double acc = mean_threshold_accuracy(a.train);
  CHECK(acc == doctest::Approx(threshold_oracle(a.train)));
  CHECK(acc < 0.7);
  CHECK(mean_threshold_accuracy(a.test) < 0.7);

  cfg.channels = 3;
  cfg.train_per_class = 3;
  CHECK(make_synthetic_images(cfg).train.images[0].channels == 3);
  cfg.train_per_class = 0;
  CHECK_THROWS_AS(make_synthetic_images(cfg), ConfigError);
}

TEST_CASE("synthetic folders hash the same on regeneration") {
  testing::TempDir tmp;
  SyntheticConfig cfg;
  cfg.train_per_class = 10;
  cfg.test_per_class = 4;
  cfg.height = cfg.width = 16;
  cfg.seed = 2;
  const SyntheticSummary a = make_synthetic(tmp / "a", cfg);
  const SyntheticSummary b = make_synthetic(tmp / "b", cfg);
  CHECK(a.train.content_hash() == b.train.content_hash());
  CHECK(a.train.samples.size() == 20);
  CHECK(a.test.samples.size() == 8);
  CHECK(a.train.split == "train");
  for (std::size_t i = 0; i < a.train.samples.size(); ++i) {
    CHECK(read_file_bytes(a.train.resolve(a.train.samples[i])) == read_file_bytes(b.train.resolve(b.train.samples[i])));
  }

  // Files on disk decode to the in-memory images.
  const SyntheticSet mem = make_synthetic_images(cfg);
  const LabeledImages disk = load_images(a.train, 16, 16, 1);
  CHECK(disk.labels == mem.train.labels);
  for (std::size_t i = 0; i < disk.images.size(); ++i) {
    for (std::size_t p = 0; p < disk.images[i].pixels.size(); ++p) {
      CHECK(std::abs(disk.images[i].pixels[p] - mem.train.images[i].pixels[p]) < 1e-12);
    }
  }
}
