#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "hpvit/checkpoint.hpp"
#include "hpvit/error.hpp"
#include "hpvit/synthetic.hpp"
#include "hpvit/trainer.hpp"
#include "support.hpp"

using namespace hpvit;

namespace {

ViTConfig small_model() {
  ViTConfig c;
  c.height = c.width = 16;
  c.channels = 1;
  c.patch = 8;
  c.dim = 8;
  c.heads = 2;
  c.blocks = 1;
  c.mlp_ratio = 2;
  c.classes = 2;
  return c;
}

LabeledImages synthetic(std::size_t per_class, std::size_t size, std::uint64_t seed) {
  SyntheticConfig sc;
  sc.train_per_class = per_class;
  sc.test_per_class = 0;
  sc.height = sc.width = size;
  sc.seed = seed;
  return make_synthetic_images(sc).train;
}

CurriculumDataset curriculum(const LabeledImages& data, std::size_t k, std::uint64_t seed = 0) {
  return apply_curriculum(data, make_schedule(k), partition(data.images.size(), k, seed), 1);
}

std::vector<double> flat(const ViTParams& p) {
  std::vector<double> out;
  for (const auto& [name, t] : p.named()) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::vector<double> losses(const RunLog& log) {
  std::vector<double> out;
  for (const auto& s : log.steps) out.push_back(s.loss);
  return out;
}

}  // namespace

TEST_CASE("sgd and adam steps") {
  SUBCASE("sgd moves by lr * g") {
    Tensor p = Tensor::from({2}, {0.5, -1.25}, true);
    Graph g;
    g.backward(g.sum(p));
    std::vector<Tensor> ps{p};
    sgd_step(ps, 0.1);
    CHECK(p.data()[0] == 0.5 - 0.1);
    CHECK(p.data()[1] == -1.25 - 0.1);
  }
  SUBCASE("adam hand trace") {
    // p = 1, g = 0.5, lr = 0.1, default betas: 1 - 0.1 * 0.5 / (0.5 + 1e-8)
    // = 0.90000000199999996..., worked out at 40 digits with Python decimals.
    Tensor p = Tensor::from({1}, {1.0}, true);
    std::vector<Tensor> ps{p};
    AdamState st;
    OptimizerConfig hyper;
    hyper.lr = 0.1;
    {
      Graph g;
      g.backward(g.scale(g.sum(p), 0.5));
    }
    adam_step(ps, st, hyper);
    CHECK(st.step == 1);
    CHECK(std::abs(p.data()[0] - 0.90000000199999996) < 1e-15);
    // Second identical gradient: 0.8000000040000005 from the same script.
    adam_step(ps, st, hyper);
    CHECK(std::abs(p.data()[0] - 0.8000000040000005) < 1e-15);
  }
  SUBCASE("zero gradient leaves adam state and params alone") {
    Tensor p = Tensor::from({3}, {1, 2, 3}, true);
    std::vector<Tensor> ps{p};
    AdamState st;
    adam_step(ps, st, OptimizerConfig{});
    CHECK(std::vector<double>(p.data().begin(), p.data().end()) == std::vector<double>{1, 2, 3});
    for (double m : st.m[0]) CHECK(m == 0.0);
    for (double v : st.v[0]) CHECK(v == 0.0);
  }
  SUBCASE("state must match params") {
    Tensor a = Tensor::zeros({2}, true), b = Tensor::zeros({3}, true);
    std::vector<Tensor> one{a}, two{a, b};
    AdamState st;
    adam_step(one, st, OptimizerConfig{});
    CHECK_THROWS_AS(adam_step(two, st, OptimizerConfig{}), ShapeError);
  }
}

TEST_CASE("config validation and serialization") {
  TrainConfig c;
  CHECK(c.optimizer.kind == OptimizerKind::adam);
  CHECK(c.optimizer.lr == 3e-4);
  CHECK(c.mode == CurriculumMode::ordered_epoch);
  CHECK_NOTHROW(c.validate());
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  TrainConfig bad = c;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.optimizer.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(curriculum_mode_from_string("shuffled"), ConfigError);
  CHECK(curriculum_mode_from_string("staged") == CurriculumMode::staged);
}

TEST_CASE("checkpoint round trip and corruption") {
  testing::TempDir tmp;
  const ViTConfig c = small_model();
  ModelCheckpoint ck{c, init_params(c, 3), {}, {{"note", "x"}}};
  std::vector<Tensor> ps;
  for (auto& [name, t] : ck.params.trainable()) ps.push_back(t);
  ck.optimizer.init(ps);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& m : ck.optimizer.m) {
    for (double& v : m) v = n(rng);
  }
  for (auto& [name, t] : ck.params.named()) {
    for (double& v : t.mutable_data()) v = n(rng) * 1e-3 + std::ldexp(1.0, -1060);  // subnormals too
  }
  ck.optimizer.step = 17;
  const auto path = tmp / "a.ckpt";
  save_checkpoint(path, ck);
  const ModelCheckpoint back = load_checkpoint(path, &c);
  CHECK(back.model == c);
  CHECK(back.optimizer == ck.optimizer);
  CHECK(back.meta == ck.meta);
  const auto x = flat(ck.params), y = flat(back.params);
  REQUIRE(x.size() == y.size());
  CHECK(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0);
  CHECK(back.params.pos.requires_grad() == ck.params.pos.requires_grad());

  const std::string bytes = read_file_bytes(path);
  write_file_bytes(tmp / "short.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(tmp / "short.ckpt"), ChecksumError);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  write_file_bytes(tmp / "flip.ckpt", flipped);
  CHECK_THROWS_AS(load_checkpoint(tmp / "flip.ckpt"), ChecksumError);
  write_file_bytes(tmp / "empty.ckpt", "");
  CHECK_THROWS_AS(load_checkpoint(tmp / "empty.ckpt"), ChecksumError);

  ViTConfig other = c;
  other.dim = 16;
  CHECK_THROWS_AS(load_checkpoint(path, &other), ConfigError);
  CHECK_THROWS_AS(load_checkpoint(tmp / "missing.ckpt"), ConfigError);

  // Same content, same bytes.
  save_checkpoint(tmp / "b.ckpt", back);
  CHECK(read_file_bytes(tmp / "b.ckpt") == bytes);
}

TEST_CASE("epoch plans respect the blur order") {
  const LabeledImages data = synthetic(15, 16, 1);
  const CurriculumDataset ds = curriculum(data, 5);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 10;
  for (std::size_t e = 0; e < 3; ++e) {
    const auto plan = plan_epoch(ds, cfg, e);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      seen += plan[i].members.size();
      for (std::size_t m : plan[i].members) CHECK(ds.samples[m].group == plan[i].group);
      if (i > 0) CHECK(plan[i].group <= plan[i - 1].group);
    }
    CHECK(seen == 30);
    CHECK(plan.front().group == 4);
    CHECK(plan.back().group == 0);
  }
  cfg.mode = CurriculumMode::staged;
  std::vector<std::size_t> stage_groups;
  for (std::size_t e = 0; e < 10; ++e) {
    const auto plan = plan_epoch(ds, cfg, e);
    for (const auto& b : plan) CHECK(b.group == plan.front().group);
    stage_groups.push_back(plan.front().group);
  }
  CHECK(stage_groups == std::vector<std::size_t>{4, 4, 3, 3, 2, 2, 1, 1, 0, 0});
}

TEST_CASE("training input checks") {
  const LabeledImages data = synthetic(6, 16, 2);
  const CurriculumDataset ds = curriculum(data, 4);
  const ViTConfig m = small_model();
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.epochs = 4;
  CHECK_NOTHROW(check_training_inputs(ds, m, cfg));

  CurriculumDataset empty = ds;
  empty.samples.clear();
  CHECK_THROWS_AS(train(empty, m, cfg), ConfigError);

  TrainConfig staged = cfg;
  staged.mode = CurriculumMode::staged;
  staged.batch_size = 4;  // smallest group holds 3
  CHECK_THROWS_AS(train(ds, m, staged), ConfigError);
  staged.batch_size = 2;
  staged.epochs = 3;
  CHECK_THROWS_AS(train(ds, m, staged), ConfigError);

  ViTConfig wrong = m;
  wrong.height = wrong.width = 24;
  CHECK_THROWS_AS(train(ds, wrong, cfg), ConfigError);
  wrong = m;
  wrong.classes = 3;
  CHECK_THROWS_AS(train(ds, wrong, cfg), ConfigError);
}

TEST_CASE("training is deterministic and logs the blur order") {
  const LabeledImages data = synthetic(12, 16, 3);
  const CurriculumDataset ds = curriculum(data, 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 7;
  const TrainResult a = train(ds, small_model(), cfg);
  const TrainResult b = train(ds, small_model(), cfg);
  CHECK(a.log.steps_csv() == b.log.steps_csv());
  CHECK(flat(a.state.params) == flat(b.state.params));
  CHECK(a.log.config_hash == b.log.config_hash);

  std::uint64_t prev_step = 0;
  for (std::size_t i = 0; i < a.log.steps.size(); ++i) {
    const StepRecord& s = a.log.steps[i];
    CHECK(s.step > prev_step);
    prev_step = s.step;
    if (i > 0 && a.log.steps[i - 1].epoch == s.epoch) CHECK(s.group <= a.log.steps[i - 1].group);
  }
  CHECK(a.log.epochs.size() == 3);

  cfg.seed = 8;
  const TrainResult c = train(ds, small_model(), cfg);
  CHECK(losses(c.log) != losses(a.log));
}

TEST_CASE("k = 1 matches a plain training loop") {
  const LabeledImages data = synthetic(10, 16, 4);
  const CurriculumDataset ds = curriculum(data, 1);
  const ViTConfig m = small_model();
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 6;
  cfg.seed = 11;
  cfg.optimizer.lr = 1e-3;
  const TrainResult r = train(ds, m, cfg);

  // Reference: blur everything at sigma 0.5, shuffle each epoch, minibatch Adam.
  const GaussianKernel k = gaussian_kernel(0.5, 1);
  std::vector<Image> blurred;
  for (const Image& img : data.images) blurred.push_back(blur_image(img, k));
  ViTParams p = init_params(m, cfg.seed);
  std::vector<Tensor> ps;
  for (auto& [name, t] : p.trainable()) ps.push_back(t);
  AdamState st;
  std::vector<double> ref;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::vector<std::size_t> order(data.images.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x65706f63, e, 0));  // "epoc"
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<Image> batch;
      std::vector<std::size_t> labels;
      for (std::size_t i = s; i < std::min(order.size(), s + cfg.batch_size); ++i) {
        batch.push_back(blurred[order[i]]);
        labels.push_back(data.labels[order[i]]);
      }
      Graph g;
      const Tensor loss = g.cross_entropy(forward_images(g, batch, p, m), labels);
      g.backward(loss);
      adam_step(ps, st, cfg.optimizer);
      for (Tensor& t : ps) t.zero_grad();
      ref.push_back(loss.item());
    }
  }
  CHECK(losses(r.log) == ref);
  CHECK(flat(r.state.params) == flat(p));
}

TEST_CASE("resuming at an epoch boundary replays the run") {
  const LabeledImages data = synthetic(10, 16, 5);
  const CurriculumDataset ds = curriculum(data, 2);
  const ViTConfig m = small_model();
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 5;
  cfg.seed = 3;

  std::optional<TrainState> saved;
  TrainHooks hooks;
  hooks.on_epoch_end = [&](const TrainState& st, const RunLog&) {
    if (st.next_epoch == 2) saved = TrainState{st.params.clone(), st.optimizer, st.next_epoch};
  };
  const TrainResult full = train(ds, m, cfg, hooks);
  REQUIRE(saved.has_value());

  // Through a checkpoint file, as the CLI does.
  testing::TempDir tmp;
  save_checkpoint(tmp / "e2.ckpt", {m, saved->params, saved->optimizer, {}});
  ModelCheckpoint ck = load_checkpoint(tmp / "e2.ckpt", &m);
  const TrainResult resumed = train(ds, m, cfg, {}, TrainState{ck.params, ck.optimizer, 2});

  std::vector<double> tail;
  for (const auto& s : full.log.steps) {
    if (s.epoch >= 2) tail.push_back(s.loss);
  }
  CHECK(losses(resumed.log) == tail);
  CHECK(flat(resumed.state.params) == flat(full.state.params));
  CHECK(resumed.state.optimizer == full.state.optimizer);
}

TEST_CASE("overfitting one batch drives the loss down") {
  const LabeledImages data = synthetic(4, 16, 6);
  const ViTConfig m = small_model();
  ViTParams p = init_params(m, 1);
  std::vector<Tensor> ps;
  for (auto& [name, t] : p.trainable()) ps.push_back(t);
  AdamState st;
  OptimizerConfig opt;
  opt.lr = 3e-3;
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    Graph g;
    const Tensor loss = g.cross_entropy(forward_images(g, data.images, p, m), data.labels);
    g.backward(loss);
    adam_step(ps, st, opt);
    for (Tensor& t : ps) t.zero_grad();
    if (step == 0) first = loss.item();
    last = loss.item();
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("f32 training keeps parameters float-representable") {
  const LabeledImages data = synthetic(4, 16, 7);
  const CurriculumDataset ds = curriculum(data, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.precision = Precision::f32;
  const TrainResult r = train(ds, small_model(), cfg);
  for (double v : flat(r.state.params)) CHECK(v == static_cast<double>(static_cast<float>(v)));
  const TrainResult again = train(ds, small_model(), cfg);
  CHECK(losses(r.log) == losses(again.log));
}

TEST_CASE("desk-scale synthetic set is learnable within 30 epochs") {
  SyntheticConfig sc;
  sc.seed = 1;
  const LabeledImages data = make_synthetic_images(sc).train;
  const CurriculumDataset ds = curriculum(data, 10);
  ViTConfig m;
  m.height = m.width = 32;
  m.channels = 1;
  m.patch = 8;
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 20;
  cfg.optimizer.lr = 1e-3;
  const TrainResult r = train(ds, m, cfg);
  CHECK(r.log.epochs.back().train_accuracy >= 0.95);
}
