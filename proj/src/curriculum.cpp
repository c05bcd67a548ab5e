#include "hpvit/curriculum.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <thread>

#include "hpvit/error.hpp"

namespace hpvit {

namespace fs = std::filesystem;

namespace {
constexpr std::uint64_t kPartitionTag = 0x70617274;  // "part"
constexpr std::uint64_t kEpochTag = 0x65706f63;      // "epoc"

std::string sample_file(std::size_t group, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "group_%zu/%06zu.png", group, index);
  return buf;
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t a, std::uint64_t b) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(tag), hi(tag), lo(a), hi(a), lo(b), hi(b)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

std::vector<std::vector<std::size_t>> CurriculumPartition::groups() const {
  std::vector<std::vector<std::size_t>> g(k);
  for (std::size_t i = 0; i < assignment.size(); ++i) g.at(assignment[i]).push_back(i);
  return g;
}

CurriculumPartition partition(std::size_t n_samples, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("partition needs k >= 1");
  if (k > n_samples) {
    throw ConfigError("cannot split " + std::to_string(n_samples) + " samples into " + std::to_string(k) +
                      " nonempty groups");
  }
  std::vector<std::size_t> perm(n_samples);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, kPartitionTag));
  std::shuffle(perm.begin(), perm.end(), rng);

  CurriculumPartition p;
  p.k = k;
  p.seed = seed;
  p.assignment.assign(n_samples, 0);
  const std::size_t base = n_samples / k;
  const std::size_t extra = n_samples % k;
  std::size_t pos = 0;
  for (std::size_t g = 0; g < k; ++g) {
    const std::size_t size = base + (g < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) p.assignment[perm[pos++]] = g;
  }
  p.group_order.resize(k);
  std::iota(p.group_order.rbegin(), p.group_order.rend(), std::size_t{0});
  return p;
}

std::vector<std::vector<std::size_t>> CurriculumDataset::group_members() const {
  std::vector<std::vector<std::size_t>> g(k());
  for (std::size_t i = 0; i < samples.size(); ++i) g.at(samples[i].group).push_back(i);
  return g;
}

std::vector<std::size_t> CurriculumDataset::epoch_order(std::size_t group, std::uint64_t shuffle_seed,
                                                        std::size_t epoch) const {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].group == group) members.push_back(i);
  }
  std::mt19937_64 rng(mix_seed(shuffle_seed, kEpochTag, epoch, group));
  std::shuffle(members.begin(), members.end(), rng);
  return members;
}

std::vector<std::size_t> CurriculumDataset::epoch_sequence(std::uint64_t shuffle_seed, std::size_t epoch) const {
  std::vector<std::size_t> seq;
  seq.reserve(samples.size());
  for (std::size_t g : group_order) {
    const auto part = epoch_order(g, shuffle_seed, epoch);
    seq.insert(seq.end(), part.begin(), part.end());
  }
  return seq;
}

CurriculumDataset apply_curriculum(const LabeledImages& data, const BlurSchedule& schedule,
                                   const CurriculumPartition& part, unsigned threads) {
  const std::size_t n = data.images.size();
  if (data.labels.size() != n) throw ShapeError("image and label counts differ");
  if (part.assignment.size() != n) {
    throw ConfigError("partition covers " + std::to_string(part.assignment.size()) + " samples but dataset has " +
                      std::to_string(n));
  }
  if (part.k != schedule.k()) {
    throw ConfigError("partition has " + std::to_string(part.k) + " groups but schedule has " +
                      std::to_string(schedule.k()) + " levels");
  }
  std::vector<GaussianKernel> kernels;
  for (const auto& level : schedule.levels) kernels.push_back(gaussian_kernel(level));

  CurriculumDataset ds;
  ds.schedule = schedule;
  ds.classes = data.classes;
  ds.group_order = part.group_order;
  ds.seed = part.seed;
  ds.samples.resize(n);

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  auto work = [&](std::size_t begin) {
    for (std::size_t i = begin; i < n; i += threads) {
      CurriculumSample& s = ds.samples[i];
      s.index = i;
      s.label = data.labels[i];
      s.group = part.assignment[i];
      s.source = i < data.sources.size() ? data.sources[i] : std::string();
      s.image = blur_image(data.images[i], kernels[s.group]);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  return ds;
}

nlohmann::json curriculum_manifest(const CurriculumDataset& ds) {
  nlohmann::json j;
  j["format"] = "hpvit-curriculum/1";
  j["k"] = ds.k();
  j["seed"] = ds.seed;
  j["source_hash"] = ds.source_hash;
  j["classes"] = ds.classes;
  j["group_order"] = ds.group_order;
  const Image* first = ds.samples.empty() ? nullptr : &ds.samples.front().image;
  j["image"] = {{"height", first ? first->height : 0},
                {"width", first ? first->width : 0},
                {"channels", first ? first->channels : 0}};
  nlohmann::json levels = nlohmann::json::array();
  const auto members = ds.group_members();
  for (const auto& l : ds.schedule.levels) {
    levels.push_back({{"b", l.b}, {"y", l.radius}, {"sigma", l.sigma}, {"count", members.at(l.b).size()}});
  }
  j["levels"] = std::move(levels);
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : ds.samples) {
    samples.push_back({{"index", s.index},
                       {"label", s.label},
                       {"group", s.group},
                       {"source", s.source},
                       {"path", sample_file(s.group, s.index)}});
  }
  j["samples"] = std::move(samples);
  return j;
}

void write_curriculum(const CurriculumDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t b = 0; b < ds.k(); ++b) fs::create_directories(dir / ("group_" + std::to_string(b)));
  for (const auto& s : ds.samples) write_image(dir / sample_file(s.group, s.index), s.image);
  write_json_file(dir / "manifest.json", curriculum_manifest(ds));
}

CurriculumDataset load_curriculum(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  if (!fs::exists(file)) {
    throw ConfigError("no curriculum manifest at " + file.string() + " (run `hpvit prepare` first)");
  }
  const nlohmann::json j = read_json_file(file);
  CurriculumDataset ds;
  try {
    if (j.at("format").get<std::string>() != "hpvit-curriculum/1") throw ConfigError("unsupported curriculum format");
    const std::size_t k = j.at("k").get<std::size_t>();
    ds.schedule = make_schedule(k);
    for (const auto& l : j.at("levels")) {
      const BlurLevel stored{l.at("b").get<std::size_t>(), l.at("y").get<std::size_t>(), l.at("sigma").get<double>()};
      if (stored.b >= k || !(stored == ds.schedule.levels[stored.b])) {
        throw ConfigError("curriculum manifest level table does not match the blur schedule");
      }
    }
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.source_hash = j.at("source_hash").get<std::string>();
    ds.classes = j.at("classes").get<std::vector<std::string>>();
    ds.group_order = j.at("group_order").get<std::vector<std::size_t>>();
    const std::size_t channels = j.at("image").at("channels").get<std::size_t>();
    for (const auto& s : j.at("samples")) {
      CurriculumSample cs;
      cs.index = s.at("index").get<std::size_t>();
      cs.label = s.at("label").get<std::size_t>();
      cs.group = s.at("group").get<std::size_t>();
      cs.source = s.at("source").get<std::string>();
      if (cs.group >= k || cs.label >= ds.classes.size()) throw ConfigError("curriculum sample out of range");
      cs.image = convert_channels(read_image(dir / s.at("path").get<std::string>()), channels);
      ds.samples.push_back(std::move(cs));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed curriculum manifest: ") + e.what());
  }
  if (ds.samples.empty()) throw ConfigError("curriculum at " + dir.string() + " is empty");
  return ds;
}

}  // namespace hpvit
