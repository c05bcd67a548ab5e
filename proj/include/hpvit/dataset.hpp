#pragma once

// Folder-per-class datasets: <root>/<class>/<image>.
//
// A DatasetManifest freezes the class list and sample order so that everything
// downstream is independent of filesystem iteration order. Sample paths are
// stored relative to the manifest root; the content hash covers the class
// names and every (label, path) pair, not the root, so a dataset hashes the
// same wherever it lives.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpvit/image.hpp"

namespace hpvit {

struct DatasetSample {
  std::string path;  // relative to root
  std::size_t label = 0;

  friend bool operator==(const DatasetSample&, const DatasetSample&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<DatasetSample> samples;
  std::string split = "all";  // train | test | all

  std::string content_hash() const;
  std::filesystem::path resolve(const DatasetSample& s) const { return root / s.path; }
  std::vector<std::size_t> class_counts() const;

  // Dense labels, no duplicate paths, nonempty classes.
  void validate() const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j, const std::filesystem::path& base);
};

struct ScanResult {
  DatasetManifest manifest;
  std::vector<std::string> unreadable;  // files present but not decodable as PNG/PPM
};

// Classes and files in lexicographic order. Throws ConfigError for an empty
// root or a class with no readable images.
ScanResult scan_folder(const std::filesystem::path& root, const std::string& split = "");

// Stratified split: each class contributes round(test_fraction * count) test
// samples chosen by a seeded shuffle; both halves keep the original order.
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& m, double test_fraction,
                                                           std::uint64_t seed);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

// A directory is scanned; a .json file is read as a saved manifest.
DatasetManifest open_dataset(const std::filesystem::path& path, const std::string& split = "");

struct LabeledImages {
  std::vector<std::string> classes;
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::vector<std::string> sources;
};

LabeledImages load_images(const DatasetManifest& m, std::size_t height, std::size_t width, std::size_t channels);

// Writes JSON with sorted keys, two-space indent and a trailing newline.
void write_json_file(const std::filesystem::path& file, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& file);

}  // namespace hpvit
