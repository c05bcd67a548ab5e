#include "hpvit/trainer.hpp"

#include <algorithm>
#include <cstdio>

#include "hpvit/error.hpp"
#include "hpvit/hash.hpp"

namespace hpvit {

std::string to_string(CurriculumMode m) { return m == CurriculumMode::staged ? "staged" : "ordered-epoch"; }

CurriculumMode curriculum_mode_from_string(const std::string& s) {
  if (s == "staged") return CurriculumMode::staged;
  if (s == "ordered-epoch") return CurriculumMode::ordered_epoch;
  throw ConfigError("unknown curriculum mode '" + s + "' (expected ordered-epoch or staged)");
}

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
  if (s == "f64") return Precision::f64;
  if (s == "f32") return Precision::f32;
  throw ConfigError("unknown precision '" + s + "' (expected f64 or f32)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.lr > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (optimizer.kind == OptimizerKind::adam) {
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) || !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
      throw ConfigError("Adam betas must be in [0, 1)");
    }
    if (!(optimizer.eps > 0.0)) throw ConfigError("Adam eps must be > 0");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", optimizer.lr},
          {"optimizer", to_string(optimizer.kind)},
          {"beta1", optimizer.beta1},
          {"beta2", optimizer.beta2},
          {"adam_eps", optimizer.eps},
          {"seed", seed},
          {"curriculum_mode", to_string(mode)},
          {"checkpoint_every", checkpoint_every},
          {"precision", to_string(precision)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.optimizer.lr = j.at("learning_rate").get<double>();
    c.optimizer.kind = optimizer_from_string(j.at("optimizer").get<std::string>());
    c.optimizer.beta1 = j.at("beta1").get<double>();
    c.optimizer.beta2 = j.at("beta2").get<double>();
    c.optimizer.eps = j.at("adam_eps").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.mode = curriculum_mode_from_string(j.at("curriculum_mode").get<std::string>());
    c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    c.precision = precision_from_string(j.at("precision").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  return c;
}

std::string RunLog::csv_header() { return "epoch,step,group,batch,loss,lr\n"; }

std::string RunLog::steps_csv() const {
  std::string out;
  char buf[160];
  for (const auto& s : steps) {
    std::snprintf(buf, sizeof buf, "%zu,%llu,%zu,%zu,%.17g,%.17g\n", s.epoch, static_cast<unsigned long long>(s.step),
                  s.group, s.batch, s.loss, s.lr);
    out += buf;
  }
  return out;
}

nlohmann::json RunLog::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"mean_loss", e.mean_loss},
                           {"train_accuracy", e.train_accuracy},
                           {"samples", e.samples}});
  }
  return {{"seed", seed}, {"config_hash", config_hash}, {"steps", steps.size()}, {"epochs", std::move(epochs_json)}};
}

std::string config_hash(const ViTConfig& model, const TrainConfig& train) {
  const nlohmann::json j = {{"model", model.to_json()}, {"train", train.to_json()}};
  return sha256_hex(j.dump());
}

void check_training_inputs(const CurriculumDataset& data, const ViTConfig& model, const TrainConfig& cfg) {
  model.validate();
  cfg.validate();
  if (data.samples.empty()) throw ConfigError("curriculum is empty");
  if (data.classes.size() != model.classes) {
    throw ConfigError("model has " + std::to_string(model.classes) + " classes but the curriculum has " +
                      std::to_string(data.classes.size()));
  }
  const Image& img = data.samples.front().image;
  if (img.height != model.height || img.width != model.width || img.channels != model.channels) {
    throw ConfigError("curriculum images are " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                      std::to_string(img.channels) + " but the model expects " + std::to_string(model.height) + "x" +
                      std::to_string(model.width) + "x" + std::to_string(model.channels));
  }
  if (cfg.mode == CurriculumMode::staged) {
    const auto members = data.group_members();
    std::size_t smallest = members.front().size();
    for (const auto& m : members) smallest = std::min(smallest, m.size());
    if (cfg.batch_size > smallest) {
      throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds the smallest curriculum group (" +
                        std::to_string(smallest) + " samples) in staged mode");
    }
    if (cfg.epochs < data.k()) {
      throw ConfigError("staged mode needs at least one epoch per blur group (epochs >= k = " +
                        std::to_string(data.k()) + ")");
    }
  }
}

std::vector<BatchPlan> plan_epoch(const CurriculumDataset& data, const TrainConfig& cfg, std::size_t epoch) {
  std::vector<std::size_t> groups;
  if (cfg.mode == CurriculumMode::ordered_epoch) {
    groups = data.group_order;
  } else {
    const std::size_t k = data.k();
    const std::size_t stage = std::min(k - 1, epoch * k / cfg.epochs);
    groups.push_back(data.group_order.at(stage));
  }
  std::vector<BatchPlan> plan;
  for (std::size_t g : groups) {
    const auto order = data.epoch_order(g, cfg.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      plan.push_back({g, std::vector<std::size_t>(order.begin() + static_cast<long>(start),
                                                  order.begin() + static_cast<long>(end))});
    }
  }
  return plan;
}

TrainResult train(const CurriculumDataset& data, const ViTConfig& model, const TrainConfig& cfg,
                  const TrainHooks& hooks, std::optional<TrainState> resume) {
  check_training_inputs(data, model, cfg);

  TrainResult result;
  result.log.seed = cfg.seed;
  result.log.config_hash = config_hash(model, cfg);
  TrainState& st = result.state;
  if (resume) {
    st = std::move(*resume);
    check_params(st.params, model);
  } else {
    st.params = init_params(model, cfg.seed);
  }
  if (cfg.precision == Precision::f32) {
    // Frozen tables included; the optimizer only re-rounds what it updates.
    for (auto& [name, t] : st.params.named()) {
      for (double& v : t.mutable_data()) v = static_cast<float>(v);
    }
  }
  auto named = st.params.trainable();
  std::vector<Tensor> params;
  for (auto& [name, t] : named) params.push_back(t);
  if (cfg.optimizer.kind == OptimizerKind::adam && st.optimizer.m.empty()) {
    const auto step = st.optimizer.step;
    st.optimizer.init(params);
    st.optimizer.step = step;
  }

  // Patch matrices are fixed per sample; build them once.
  const std::size_t per_sample = model.num_patches() * model.patch_dim();
  std::vector<std::vector<double>> patches;
  patches.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    Tensor p = patchify(s.image, model.patch);
    patches.emplace_back(p.data().begin(), p.data().end());
  }

  for (std::size_t epoch = st.next_epoch; epoch < cfg.epochs; ++epoch) {
    const auto plan = plan_epoch(data, cfg, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < plan.size(); ++bi) {
      const BatchPlan& batch = plan[bi];
      const std::size_t n = batch.members.size();
      std::vector<double> flat;
      flat.reserve(n * per_sample);
      std::vector<std::size_t> labels;
      for (std::size_t pos : batch.members) {
        flat.insert(flat.end(), patches[pos].begin(), patches[pos].end());
        labels.push_back(data.samples[pos].label);
      }
      Tensor input = Tensor::from({n, model.num_patches(), model.patch_dim()}, std::move(flat));
      if (cfg.precision == Precision::f32) {
        for (double& v : input.mutable_data()) v = static_cast<float>(v);
      }

      Graph g(cfg.precision);
      Tensor logits = forward(g, input, st.params, model);
      Tensor loss = g.cross_entropy(logits, labels);
      g.backward(loss);
      optimizer_step(params, st.optimizer, cfg.optimizer, cfg.precision);
      for (Tensor& p : params) p.zero_grad();

      const auto lv = logits.data();
      for (std::size_t b = 0; b < n; ++b) {
        const auto row = lv.subspan(b * model.classes, model.classes);
        const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        correct += pred == labels[b] ? 1 : 0;
      }
      seen += n;
      loss_sum += loss.item() * static_cast<double>(n);
      result.log.steps.push_back({epoch, st.optimizer.step, batch.group, bi, loss.item(), cfg.optimizer.lr});
    }
    result.log.epochs.push_back({epoch, loss_sum / static_cast<double>(seen),
                                 static_cast<double>(correct) / static_cast<double>(seen), seen});
    st.next_epoch = epoch + 1;
    if (hooks.on_epoch_end) hooks.on_epoch_end(st, result.log);
  }
  return result;
}

}  // namespace hpvit
