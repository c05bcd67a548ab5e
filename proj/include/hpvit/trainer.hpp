#pragma once

// Curriculum training loop.
//
// ordered-epoch (default): every epoch visits all groups, most blurred first,
// each group reshuffled per epoch. staged: epochs are divided evenly across
// groups, group k-1 first, one group per epoch. A batch never mixes groups.
// Shuffles depend only on (seed, epoch, group), so resuming at an epoch
// boundary replays the uninterrupted run exactly.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpvit/curriculum.hpp"
#include "hpvit/optim.hpp"
#include "hpvit/vit.hpp"

namespace hpvit {

enum class CurriculumMode { staged, ordered_epoch };

std::string to_string(CurriculumMode m);
CurriculumMode curriculum_mode_from_string(const std::string& s);
std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  CurriculumMode mode = CurriculumMode::ordered_epoch;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints
  Precision precision = Precision::f64;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct StepRecord {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  std::size_t group = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  std::size_t samples = 0;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::uint64_t seed = 0;
  std::string config_hash;

  static std::string csv_header();
  // One line per step; doubles printed with 17 significant digits.
  std::string steps_csv() const;
  nlohmann::json to_json() const;
};

struct TrainState {
  ViTParams params;
  AdamState optimizer;
  std::size_t next_epoch = 0;
};

struct TrainHooks {
  // Called after every epoch with the state needed to resume from it.
  std::function<void(const TrainState&, const RunLog&)> on_epoch_end;
};

struct TrainResult {
  TrainState state;
  RunLog log;
};

struct BatchPlan {
  std::size_t group = 0;
  std::vector<std::size_t> members;  // positions into CurriculumDataset::samples
};

// The batches of one epoch, in training order.
std::vector<BatchPlan> plan_epoch(const CurriculumDataset& data, const TrainConfig& cfg, std::size_t epoch);

// Hash of the canonical JSON of both configs.
std::string config_hash(const ViTConfig& model, const TrainConfig& train);

// Validates both configs against the data before any compute.
void check_training_inputs(const CurriculumDataset& data, const ViTConfig& model, const TrainConfig& train);

TrainResult train(const CurriculumDataset& data, const ViTConfig& model, const TrainConfig& cfg,
                  const TrainHooks& hooks = {}, std::optional<TrainState> resume = std::nullopt);

}  // namespace hpvit
