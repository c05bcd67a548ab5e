#pragma once

// Blur curriculum: the training set is split into k disjoint groups, group g
// is blurred at level b = g, and training visits groups from the most blurred
// (b = k-1) to the least blurred (b = 0).
//
// On disk a prepared curriculum is a directory with one `group_<b>/` folder of
// PNGs per level and a `manifest.json` that is the single source of truth for
// training order (see write_curriculum).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpvit/blur.hpp"
#include "hpvit/dataset.hpp"
#include "hpvit/image.hpp"

namespace hpvit {

struct CurriculumPartition {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> assignment;   // sample index -> group
  std::vector<std::size_t> group_order;  // k-1, ..., 0

  // Members of each group in ascending sample-index order.
  std::vector<std::vector<std::size_t>> groups() const;
};

// Seeded shuffle of [0, n) cut into k contiguous runs; the first n mod k
// groups get one extra sample.
CurriculumPartition partition(std::size_t n_samples, std::size_t k, std::uint64_t seed);

struct CurriculumSample {
  std::size_t index = 0;  // position in the source dataset
  std::size_t label = 0;
  std::size_t group = 0;
  std::string source;
  Image image;  // already blurred at its group's level
};

struct CurriculumDataset {
  BlurSchedule schedule;
  std::vector<std::string> classes;
  std::vector<CurriculumSample> samples;  // ordered by index
  std::vector<std::size_t> group_order;
  std::uint64_t seed = 0;
  std::string source_hash;

  std::size_t k() const { return schedule.k(); }
  // Positions into `samples`, per group, ascending.
  std::vector<std::vector<std::size_t>> group_members() const;
  // Members of `group` shuffled for `epoch`; depends only on (seed, epoch, group).
  std::vector<std::size_t> epoch_order(std::size_t group, std::uint64_t shuffle_seed, std::size_t epoch) const;
  // Full ordered-epoch sequence: groups in group_order, each shuffled.
  std::vector<std::size_t> epoch_sequence(std::uint64_t shuffle_seed, std::size_t epoch) const;
};

// Blurs every sample once at its group's level. Work fans out over `threads`
// workers (0 = hardware concurrency); results are keyed by sample index.
CurriculumDataset apply_curriculum(const LabeledImages& data, const BlurSchedule& schedule,
                                   const CurriculumPartition& part, unsigned threads = 0);

nlohmann::json curriculum_manifest(const CurriculumDataset& ds);
// Writes group_<b>/<index>.png plus manifest.json into `dir`.
void write_curriculum(const CurriculumDataset& ds, const std::filesystem::path& dir);
// Reads manifest.json and the cached PNGs it lists.
CurriculumDataset load_curriculum(const std::filesystem::path& dir);

// Deterministic RNG for (seed, tag, a, b) streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0, std::uint64_t b = 0);

}  // namespace hpvit
