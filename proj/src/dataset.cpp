#include "hpvit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "hpvit/error.hpp"
#include "hpvit/hash.hpp"

namespace hpvit {

namespace fs = std::filesystem;

std::string DatasetManifest::content_hash() const {
  Sha256 h;
  h.update("classes\n");
  for (const auto& c : classes) h.update(c).update("\n");
  h.update("samples\n");
  for (const auto& s : samples) h.update(std::to_string(s.label)).update("\t").update(s.path).update("\n");
  return h.hex_digest();
}

std::vector<std::size_t> DatasetManifest::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& s : samples) ++counts.at(s.label);
  return counts;
}

void DatasetManifest::validate() const {
  if (classes.empty()) throw ConfigError("dataset has no classes");
  std::set<std::string> paths;
  for (const auto& s : samples) {
    if (s.label >= classes.size()) {
      throw ConfigError("sample " + s.path + " has label " + std::to_string(s.label) + " but only " +
                        std::to_string(classes.size()) + " classes exist");
    }
    if (!paths.insert(s.path).second) throw ConfigError("duplicate sample path " + s.path);
  }
  const auto counts = class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw ConfigError("class '" + classes[c] + "' has no samples");
  }
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json j;
  j["format"] = "hpvit-dataset-manifest/1";
  j["root"] = root.generic_string();
  j["split"] = split;
  j["classes"] = classes;
  j["content_hash"] = content_hash();
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : samples) arr.push_back({{"path", s.path}, {"label", s.label}});
  j["samples"] = std::move(arr);
  return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j, const fs::path& base) {
  DatasetManifest m;
  try {
    if (j.at("format").get<std::string>() != "hpvit-dataset-manifest/1") {
      throw ConfigError("unsupported dataset manifest format");
    }
    fs::path root = j.at("root").get<std::string>();
    m.root = root.is_absolute() ? root : base / root;
    m.split = j.at("split").get<std::string>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("path").get<std::string>(), s.at("label").get<std::size_t>()});
    }
    if (j.contains("content_hash") && j["content_hash"].get<std::string>() != m.content_hash()) {
      throw ChecksumError("dataset manifest content hash does not match its sample list");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dataset manifest: ") + e.what());
  }
  m.validate();
  return m;
}

ScanResult scan_folder(const fs::path& root, const std::string& split) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root is not a directory: " + root.string());
  ScanResult r;
  r.manifest.root = root;
  if (!split.empty()) {
    r.manifest.split = split;
  } else {
    const std::string leaf = fs::absolute(root).lexically_normal().filename().string();
    const std::string base = leaf.empty() ? fs::absolute(root).lexically_normal().parent_path().filename().string() : leaf;
    r.manifest.split = (base == "train" || base == "test") ? base : "all";
  }
  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw ConfigError("dataset root has no class subdirectories: " + root.string());
  for (const auto& cls : class_dirs) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(root / cls)) {
      if (entry.is_regular_file()) files.push_back(entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    const std::size_t label = r.manifest.classes.size();
    std::size_t found = 0;
    for (const auto& f : files) {
      const std::string rel = cls + "/" + f;
      if (!looks_like_supported_image(root / rel)) {
        r.unreadable.push_back(rel);
        continue;
      }
      r.manifest.samples.push_back({rel, label});
      ++found;
    }
    if (found == 0) throw ConfigError("class '" + cls + "' has no readable images");
    r.manifest.classes.push_back(cls);
  }
  return r;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& m, double test_fraction,
                                                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must be in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(m.classes.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) by_class.at(m.samples[i].label).push_back(i);
  std::vector<bool> is_test(m.samples.size(), false);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto members = by_class[c];
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(c), 0x5e1u};
    std::mt19937_64 rng(seq);
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < n_test; ++i) is_test[members[i]] = true;
  }
  DatasetManifest train, test;
  for (DatasetManifest* d : {&train, &test}) {
    d->root = m.root;
    d->classes = m.classes;
  }
  train.split = "train";
  test.split = "test";
  for (std::size_t i = 0; i < m.samples.size(); ++i) (is_test[i] ? test : train).samples.push_back(m.samples[i]);
  return {train, test};
}

void write_json_file(const fs::path& file, const nlohmann::json& j) {
  write_file_bytes(file, j.dump(2) + "\n");
}

nlohmann::json read_json_file(const fs::path& file) {
  if (!fs::exists(file)) throw ConfigError("file not found: " + file.string());
  try {
    return nlohmann::json::parse(read_file_bytes(file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(file.string() + ": invalid JSON: " + e.what());
  }
}

void save_manifest(const DatasetManifest& m, const fs::path& file) {
  nlohmann::json j = m.to_json();
  // Store the root relative to the manifest's directory when possible.
  const fs::path dir = fs::absolute(file).parent_path();
  const fs::path rel = fs::absolute(m.root).lexically_normal().lexically_relative(dir);
  j["root"] = rel.empty() ? m.root.generic_string() : rel.generic_string();
  write_json_file(file, j);
}

DatasetManifest load_manifest(const fs::path& file) {
  return DatasetManifest::from_json(read_json_file(file), fs::absolute(file).parent_path());
}

DatasetManifest open_dataset(const fs::path& path, const std::string& split) {
  if (fs::is_directory(path)) return scan_folder(path, split).manifest;
  if (fs::is_regular_file(path)) {
    DatasetManifest m = load_manifest(path);
    if (!split.empty()) m.split = split;
    return m;
  }
  throw ConfigError("dataset not found: " + path.string());
}

LabeledImages load_images(const DatasetManifest& m, std::size_t height, std::size_t width, std::size_t channels) {
  LabeledImages out;
  out.classes = m.classes;
  out.images.reserve(m.samples.size());
  for (const auto& s : m.samples) {
    Image img = decode_and_resize(m.resolve(s), height, width, channels);
    check_image(img);
    out.images.push_back(std::move(img));
    out.labels.push_back(s.label);
    out.sources.push_back(s.path);
  }
  return out;
}

}  // namespace hpvit
