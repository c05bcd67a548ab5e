#include "hpvit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "hpvit/blur.hpp"
#include "hpvit/checkpoint.hpp"
#include "hpvit/curriculum.hpp"
#include "hpvit/dataset.hpp"
#include "hpvit/error.hpp"
#include "hpvit/hash.hpp"
#include "hpvit/report.hpp"
#include "hpvit/synthetic.hpp"
#include "hpvit/trainer.hpp"

namespace hpvit {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  const ViTConfig m;
  return {{"run_id", ""},
          {"data", {{"height", 224}, {"width", 224}, {"channels", 3}, {"threads", 0}}},
          {"curriculum", {{"k", 10}, {"seed", 0}}},
          {"model",
           {{"patch", m.patch},
            {"dim", m.dim},
            {"heads", m.heads},
            {"blocks", m.blocks},
            {"mlp_ratio", m.mlp_ratio},
            {"pos_mode", to_string(m.pos_mode)},
            {"ln_eps", m.ln_eps}}},
          {"train", TrainConfig{}.to_json()},
          {"eval", {{"batch_size", 32}}}};
}

void merge_config(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError("config " + (prefix.empty() ? std::string("root") : prefix) + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else if (value.is_object() || value.is_array()) {
      throw ConfigError("config key '" + path + "' takes a scalar");
    } else {
      slot = value;
    }
  }
}

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  merge_config(cfg, patch);
}

namespace {

// Options shared by the commands that read the layered config.
struct ConfigOptions {
  std::string file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigOptions& o) {
  cmd->add_option("--config", o.file, "JSON config file (see README for keys)");
  cmd->add_option("--set", o.sets, "Override one config key, e.g. --set train.epochs=40 (repeatable)");
}

json resolve_config(const ConfigOptions& o) {
  json cfg = default_config();
  if (!o.file.empty()) {
    if (!fs::exists(o.file)) throw ConfigError("config file not found: " + o.file);
    merge_config(cfg, read_json_file(o.file));
  }
  for (const auto& s : o.sets) apply_override(cfg, s);
  return cfg;
}

template <class T>
void flag_into(json& cfg, const CLI::Option* opt, const char* section, const char* key, const T& value) {
  if (opt->count() > 0) cfg[section][key] = value;
}

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

// Ensures `dir` exists and is empty; an occupied directory needs --force and is then cleared.
void claim_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError("output directory " + dir.string() + " is not empty; pass --force to overwrite it");
      for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
    }
  }
  fs::create_directories(dir);
}

ViTConfig model_from(const json& cfg, std::size_t height, std::size_t width, std::size_t channels, std::size_t classes) {
  const json& m = cfg.at("model");
  ViTConfig v;
  try {
    v.height = height;
    v.width = width;
    v.channels = channels;
    v.classes = classes;
    v.patch = m.at("patch").get<std::size_t>();
    v.dim = m.at("dim").get<std::size_t>();
    v.heads = m.at("heads").get<std::size_t>();
    v.blocks = m.at("blocks").get<std::size_t>();
    v.mlp_ratio = m.at("mlp_ratio").get<std::size_t>();
    v.pos_mode = pos_mode_from_string(m.at("pos_mode").get<std::string>());
    v.ln_eps = m.at("ln_eps").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  v.validate();
  return v;
}

template <class T>
T get_as(const json& cfg, const char* section, const char* key) {
  try {
    return cfg.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for ") + section + "." + key + ": " + e.what());
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void print_levels(std::ostream& out, const CurriculumDataset& ds) {
  const auto members = ds.group_members();
  out << "  b    y   sigma  samples\n";
  for (const auto& l : ds.schedule.levels) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%3zu  %3zu  %6.2f  %7zu\n", l.b, l.radius, l.sigma, members[l.b].size());
    out << buf;
  }
}

// ---- prepare --------------------------------------------------------------

struct PrepareArgs {
  std::string dataset, out;
  std::size_t k = 0, height = 0, width = 0, channels = 0;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool force = false;
  ConfigOptions config;
  CLI::Option *k_opt, *seed_opt, *h_opt, *w_opt, *c_opt, *t_opt;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  json cfg = resolve_config(a.config);
  flag_into(cfg, a.k_opt, "curriculum", "k", a.k);
  flag_into(cfg, a.seed_opt, "curriculum", "seed", a.seed);
  flag_into(cfg, a.h_opt, "data", "height", a.height);
  flag_into(cfg, a.w_opt, "data", "width", a.width);
  flag_into(cfg, a.c_opt, "data", "channels", a.channels);
  flag_into(cfg, a.t_opt, "data", "threads", a.threads);

  const auto k = get_as<std::size_t>(cfg, "curriculum", "k");
  const auto seed = get_as<std::uint64_t>(cfg, "curriculum", "seed");
  const auto h = get_as<std::size_t>(cfg, "data", "height");
  const auto w = get_as<std::size_t>(cfg, "data", "width");
  const auto c = get_as<std::size_t>(cfg, "data", "channels");
  const auto threads = get_as<unsigned>(cfg, "data", "threads");
  if (k == 0) throw ConfigError("curriculum.k must be >= 1");
  if (h == 0 || w == 0) throw ConfigError("data.height and data.width must be positive");
  if (c != 1 && c != 3) throw ConfigError("data.channels must be 1 or 3");
  if (!fs::exists(a.dataset)) throw ConfigError("dataset not found: " + a.dataset);

  const DatasetManifest m = open_dataset(a.dataset);
  if (k > m.samples.size()) {
    throw ConfigError("k = " + std::to_string(k) + " exceeds the " + std::to_string(m.samples.size()) + " samples");
  }
  const fs::path dir = a.out.empty() ? output_root() / ("curriculum-k" + std::to_string(k) + "-s" + std::to_string(seed)) : fs::path(a.out);
  claim_output_dir(dir, a.force);

  err << "loading " << m.samples.size() << " images (" << m.classes.size() << " classes) at " << h << "x" << w << "x" << c << "\n";
  const LabeledImages data = load_images(m, h, w, c);
  const CurriculumDataset ds = apply_curriculum(data, make_schedule(k), partition(m.samples.size(), k, seed), threads);
  CurriculumDataset stamped = ds;
  stamped.source_hash = m.content_hash();
  write_curriculum(stamped, dir);
  write_json_file(dir / "config.json", cfg);

  out << "prepared " << ds.samples.size() << " samples in " << k << " blur groups -> " << dir.string() << "\n";
  print_levels(out, ds);
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string curriculum, out, resume, run_id;
  std::size_t epochs = 0, batch = 0, patch = 0, dim = 0, heads = 0, blocks = 0, checkpoint_every = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::string optimizer, mode, precision;
  bool force = false;
  ConfigOptions config;
  CLI::Option *epochs_opt, *batch_opt, *lr_opt, *seed_opt, *opt_opt, *mode_opt, *prec_opt, *ckpt_opt, *patch_opt,
      *dim_opt, *heads_opt, *blocks_opt, *run_opt;
};

std::string steps_csv_rows(const RunLog& log, std::size_t from_step) {
  RunLog part;
  part.steps.assign(log.steps.begin() + static_cast<long>(from_step), log.steps.end());
  return part.steps_csv();
}

json epochs_json(const std::vector<EpochRecord>& epochs) {
  RunLog l;
  l.epochs = epochs;
  return l.to_json().at("epochs");
}

std::vector<EpochRecord> epochs_from_json(const json& j) {
  std::vector<EpochRecord> out;
  for (const auto& e : j) {
    out.push_back({e.at("epoch").get<std::size_t>(), e.at("mean_loss").get<double>(), e.at("train_accuracy").get<double>(),
                   e.at("samples").get<std::size_t>()});
  }
  return out;
}

// Keeps the CSV header and every row from epochs before `epoch`.
std::string truncate_steps_csv(const fs::path& file, std::size_t epoch) {
  std::string kept = RunLog::csv_header();
  if (!fs::exists(file)) return kept;
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) < epoch) kept += line + "\n";
  }
  return kept;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  json cfg = resolve_config(a.config);
  flag_into(cfg, a.epochs_opt, "train", "epochs", a.epochs);
  flag_into(cfg, a.batch_opt, "train", "batch_size", a.batch);
  flag_into(cfg, a.lr_opt, "train", "learning_rate", a.lr);
  flag_into(cfg, a.seed_opt, "train", "seed", a.seed);
  flag_into(cfg, a.opt_opt, "train", "optimizer", a.optimizer);
  flag_into(cfg, a.mode_opt, "train", "curriculum_mode", a.mode);
  flag_into(cfg, a.prec_opt, "train", "precision", a.precision);
  flag_into(cfg, a.ckpt_opt, "train", "checkpoint_every", a.checkpoint_every);
  flag_into(cfg, a.patch_opt, "model", "patch", a.patch);
  flag_into(cfg, a.dim_opt, "model", "dim", a.dim);
  flag_into(cfg, a.heads_opt, "model", "heads", a.heads);
  flag_into(cfg, a.blocks_opt, "model", "blocks", a.blocks);
  if (a.run_opt->count() > 0) cfg["run_id"] = a.run_id;

  const TrainConfig tc = TrainConfig::from_json(cfg.at("train"));
  tc.validate();
  const CurriculumDataset data = load_curriculum(a.curriculum);
  const Image& first = data.samples.front().image;
  const ViTConfig model = model_from(cfg, first.height, first.width, first.channels, data.classes.size());
  check_training_inputs(data, model, tc);

  std::string run_id = cfg.at("run_id").get<std::string>();
  if (run_id.empty()) run_id = "vit-k" + std::to_string(data.k()) + "-s" + std::to_string(tc.seed);
  cfg["run_id"] = run_id;
  const std::string chash = config_hash(model, tc);

  const fs::path dir = a.out.empty() ? output_root() / run_id : fs::path(a.out);
  std::optional<TrainState> resume;
  std::vector<EpochRecord> history;
  if (!a.resume.empty()) {
    ModelCheckpoint ck = load_checkpoint(a.resume, &model);
    if (ck.meta.value("config_hash", "") != chash) {
      throw ConfigError("checkpoint " + a.resume + " was written with a different model or training config");
    }
    TrainState st;
    st.params = std::move(ck.params);
    st.optimizer = std::move(ck.optimizer);
    st.next_epoch = ck.meta.at("next_epoch").get<std::size_t>();
    history = epochs_from_json(ck.meta.at("history"));
    resume = std::move(st);
    fs::create_directories(dir);
    write_file_bytes(dir / "steps.csv", truncate_steps_csv(dir / "steps.csv", resume->next_epoch));
    err << "resuming " << run_id << " at epoch " << resume->next_epoch << "\n";
  } else {
    claim_output_dir(dir, a.force);
    write_file_bytes(dir / "steps.csv", RunLog::csv_header());
  }
  write_json_file(dir / "config.json", cfg);

  auto make_meta = [&](const TrainState& st, const std::vector<EpochRecord>& hist) {
    return json{{"run_id", run_id},
                {"classes", data.classes},
                {"train_source_hash", data.source_hash},
                {"curriculum_k", data.k()},
                {"curriculum_seed", data.seed},
                {"config_hash", chash},
                {"train", tc.to_json()},
                {"next_epoch", st.next_epoch},
                {"history", epochs_json(hist)}};
  };

  std::size_t written_steps = 0;
  TrainHooks hooks;
  hooks.on_epoch_end = [&](const TrainState& st, const RunLog& log) {
    const EpochRecord& e = log.epochs.back();
    history.push_back(e);
    std::ofstream csv(dir / "steps.csv", std::ios::binary | std::ios::app);
    csv << steps_csv_rows(log, written_steps);
    written_steps = log.steps.size();
    if (tc.checkpoint_every > 0 && st.next_epoch % tc.checkpoint_every == 0 && st.next_epoch < tc.epochs) {
      char name[40];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", st.next_epoch);
      save_checkpoint(dir / "checkpoints" / name, {model, st.params, st.optimizer, make_meta(st, history)});
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch %3zu/%zu  loss %.4f  train-acc %.4f\n", e.epoch + 1, tc.epochs, e.mean_loss,
                  e.train_accuracy);
    err << buf << std::flush;
  };

  const TrainResult result = train(data, model, tc, hooks, std::move(resume));
  save_checkpoint(dir / "model.ckpt", {model, result.state.params, result.state.optimizer, make_meta(result.state, history)});

  RunLog full = result.log;
  full.epochs = history;
  json summary = {{"run_id", run_id},
                  {"config", cfg},
                  {"config_hash", chash},
                  {"curriculum", {{"k", data.k()}, {"seed", data.seed}, {"source_hash", data.source_hash}, {"samples", data.samples.size()}}},
                  {"log", full.to_json()},
                  {"final", history.empty() ? json(nullptr) : epochs_json({history.back()}).at(0)},
                  {"checkpoint_sha256", sha256_file(dir / "model.ckpt")},
                  {"steps_csv_sha256", sha256_file(dir / "steps.csv")}};
  summary["log"]["steps"] = result.state.optimizer.step;
  write_json_file(dir / "run.json", summary);

  out << "trained " << run_id << " for " << tc.epochs << " epochs (" << result.state.optimizer.step << " steps) -> "
      << dir.string() << "\n";
  if (!history.empty()) {
    out << "final loss " << fmt("%.4f", history.back().mean_loss) << ", train accuracy "
        << fmt("%.4f", history.back().train_accuracy) << "\n";
  }
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, dataset, out, model_id;
  std::size_t batch = 32;
  bool force = false;
};

void warn_banner(std::ostream& err, const std::string& why) {
  const std::string bar(72, '!');
  err << bar << "\n!! WARNING: evaluating on TRAINING data (" << why << ").\n"
      << "!! These numbers measure fit, not generalization.\n"
      << bar << "\n";
}

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint not found: " + a.checkpoint);
  if (!fs::exists(a.dataset)) throw ConfigError("dataset not found: " + a.dataset);
  if (a.batch == 0) throw ConfigError("--batch-size must be >= 1");
  const ModelCheckpoint ck = load_checkpoint(a.checkpoint);
  const DatasetManifest m = open_dataset(a.dataset);
  const auto classes = ck.meta.value("classes", std::vector<std::string>{});
  if (m.classes.size() != ck.model.classes) {
    throw ShapeError("model predicts " + std::to_string(ck.model.classes) + " classes but the dataset has " +
                     std::to_string(m.classes.size()));
  }
  if (!classes.empty() && classes != m.classes) {
    throw ConfigError("dataset class names differ from the ones the model was trained on");
  }
  const std::string model_id = a.model_id.empty() ? ck.meta.value("run_id", std::string("model")) : a.model_id;
  const std::string hash = m.content_hash();
  if (hash == ck.meta.value("train_source_hash", std::string())) {
    warn_banner(err, "dataset matches the curriculum source");
  } else if (m.split == "train") {
    warn_banner(err, "dataset split is 'train'");
  }

  const fs::path dir = a.out.empty() ? output_root() / ("eval-" + model_id) : fs::path(a.out);
  claim_output_dir(dir, a.force);

  const LabeledImages data = load_images(m, ck.model.height, ck.model.width, ck.model.channels);
  const auto probs = predict_proba(data.images, ck.params, ck.model, a.batch);
  const MetricsReport report = evaluate_predictions(model_id, hash, m.split, m.classes, data.labels, probs);

  write_json_file(dir / "report.json", report.to_json());
  write_file_bytes(dir / "roc.csv", roc_csv(report.roc));
  write_file_bytes(dir / "roc.svg", roc_svg({{model_id, report.roc}}, "ROC: " + model_id));
  std::string dump = "index,path,label";
  for (const auto& c : m.classes) dump += ",p_" + c;
  dump += "\n";
  for (std::size_t i = 0; i < probs.size(); ++i) {
    dump += std::to_string(i) + "," + data.sources[i] + "," + std::to_string(data.labels[i]);
    for (double p : probs[i]) dump += fmt(",%.17g", p);
    dump += "\n";
  }
  write_file_bytes(dir / "scores.csv", dump);

  const Scores& s = report.scores;
  out << "evaluated " << model_id << " on " << s.samples << " images (" << m.split << ")\n"
      << "accuracy " << fmt("%.4f", s.accuracy) << "  precision " << fmt("%.4f", s.precision) << "  recall "
      << fmt("%.4f", s.recall) << "  f1 " << fmt("%.4f", s.f1) << "  auroc " << fmt("%.4f", report.auroc) << "\n";
  if (s.degenerate) out << "note: some metrics hit a zero denominator and were set to 0\n";
  out << "report -> " << (dir / "report.json").string() << "\n";
  return kExitOk;
}

// ---- compare --------------------------------------------------------------

struct CompareArgs {
  std::string a, b, out;
  bool force = false;
};

MetricsReport read_report(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("report not found: " + path);
  return MetricsReport::from_json(read_json_file(path));
}

int cmd_compare(const CompareArgs& a, std::ostream& out, std::ostream&) {
  const MetricsReport ra = read_report(a.a);
  const MetricsReport rb = read_report(a.b);
  const Comparison c = compare(ra, rb);
  const fs::path dir = a.out.empty() ? output_root() / ("compare-" + ra.model_id + "-vs-" + rb.model_id) : fs::path(a.out);
  claim_output_dir(dir, a.force);
  const std::string table = comparison_text(c);
  write_file_bytes(dir / "comparison.txt", table);
  write_file_bytes(dir / "comparison.csv", comparison_csv(c));
  write_file_bytes(dir / "roc_overlay.svg", c.overlay_svg);
  out << table;
  return kExitOk;
}

// ---- preview-blur ---------------------------------------------------------

struct PreviewArgs {
  std::string image, out;
  std::size_t k = 10, height = 0, width = 0;
  bool force = false;
};

int cmd_preview(const PreviewArgs& a, std::ostream& out, std::ostream&) {
  if (!fs::exists(a.image)) throw ConfigError("image not found: " + a.image);
  if (a.k == 0) throw ConfigError("--k must be >= 1");
  Image src = read_image(a.image);
  if (a.height > 0 || a.width > 0) src = resize_bilinear(src, a.height ? a.height : src.height, a.width ? a.width : src.width);
  const fs::path file = a.out.empty() ? output_root() / "preview-blur.png" : fs::path(a.out);
  if (fs::exists(file) && !a.force) throw ConfigError(file.string() + " exists; pass --force to overwrite it");

  // Least blurred on the left, matching b = 0 .. k-1.
  Image strip;
  strip.height = src.height;
  strip.width = src.width * a.k;
  strip.channels = src.channels;
  strip.pixels.assign(strip.height * strip.width * strip.channels, 0.0);
  const BlurSchedule sched = make_schedule(a.k);
  for (std::size_t b = 0; b < a.k; ++b) {
    const Image blurred = blur_image(src, gaussian_kernel(sched.levels[b]));
    for (std::size_t y = 0; y < src.height; ++y) {
      for (std::size_t x = 0; x < src.width; ++x) {
        for (std::size_t c = 0; c < src.channels; ++c) {
          strip.pixels[(y * strip.width + b * src.width + x) * strip.channels + c] = blurred.at(y, x, c);
        }
      }
    }
  }
  write_image(file, strip);
  out << "wrote " << a.k << "-level blur strip -> " << file.string() << "\n";
  return kExitOk;
}

// ---- synth / split --------------------------------------------------------

struct SynthArgs {
  std::string out;
  SyntheticConfig cfg;
  std::size_t size = 32;
  bool force = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream&) {
  const fs::path dir = a.out.empty() ? output_root() / "synthetic" : fs::path(a.out);
  if (a.cfg.train_per_class == 0) throw ConfigError("--train-per-class must be >= 1");
  if (a.cfg.channels != 1 && a.cfg.channels != 3) throw ConfigError("--channels must be 1 or 3");
  if (a.size == 0) throw ConfigError("--size must be >= 1");
  claim_output_dir(dir, a.force);
  SyntheticConfig cfg = a.cfg;
  cfg.height = cfg.width = a.size;
  const SyntheticSummary s = make_synthetic(dir, cfg);
  save_manifest(s.train, dir / "train.json");
  if (!s.test.samples.empty()) save_manifest(s.test, dir / "test.json");
  out << "synthetic dataset -> " << dir.string() << ": " << s.train.samples.size() << " train, " << s.test.samples.size()
      << " test; pixel-mean threshold accuracy " << fmt("%.4f", s.mean_threshold_accuracy) << "\n";
  return kExitOk;
}

struct SplitArgs {
  std::string dataset, out;
  double fraction = 0.1;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_split(const SplitArgs& a, std::ostream& out, std::ostream&) {
  if (!fs::exists(a.dataset)) throw ConfigError("dataset not found: " + a.dataset);
  if (!(a.fraction > 0.0 && a.fraction < 1.0)) throw ConfigError("--test-fraction must be in (0, 1)");
  const DatasetManifest m = open_dataset(a.dataset);
  const auto [train, test] = split_manifest(m, a.fraction, a.seed);
  const fs::path dir = a.out.empty() ? output_root() / "split" : fs::path(a.out);
  for (const char* f : {"train.json", "test.json"}) {
    if (fs::exists(dir / f) && !a.force) throw ConfigError((dir / f).string() + " exists; pass --force to overwrite it");
  }
  save_manifest(train, dir / "train.json");
  save_manifest(test, dir / "test.json");
  out << "split " << m.samples.size() << " samples: " << train.samples.size() << " train, " << test.samples.size()
      << " test -> " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blur-curriculum Vision Transformer toolkit", "hpvit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  PrepareArgs pa;
  auto* prep = app.add_subcommand("prepare", "Blur a dataset into k curriculum groups");
  prep->add_option("dataset", pa.dataset, "Dataset folder (<root>/<class>/<image>) or saved manifest .json")->required();
  prep->add_option("--out,-o", pa.out, "Output curriculum directory (default: $HPVIT_OUTPUT_ROOT/curriculum-k<k>-s<seed>)");
  pa.k_opt = prep->add_option("--k", pa.k, "Number of blur levels [curriculum.k, default 10]");
  pa.seed_opt = prep->add_option("--seed", pa.seed, "Partition seed [curriculum.seed, default 0]");
  pa.h_opt = prep->add_option("--height", pa.height, "Resize height [data.height, default 224]");
  pa.w_opt = prep->add_option("--width", pa.width, "Resize width [data.width, default 224]");
  pa.c_opt = prep->add_option("--channels", pa.channels, "1 (gray) or 3 (RGB) [data.channels, default 3]");
  pa.t_opt = prep->add_option("--threads", pa.threads, "Blur workers, 0 = all cores [data.threads]");
  prep->add_flag("--force", pa.force, "Overwrite a nonempty output directory");
  add_config_options(prep, pa.config);

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a ViT on a prepared curriculum");
  tr->add_option("curriculum", ta.curriculum, "Curriculum directory written by `hpvit prepare`")->required();
  tr->add_option("--out,-o", ta.out, "Run directory (default: $HPVIT_OUTPUT_ROOT/<run id>)");
  ta.run_opt = tr->add_option("--run-id", ta.run_id, "Run identifier [run_id, default vit-k<k>-s<seed>]");
  ta.epochs_opt = tr->add_option("--epochs", ta.epochs, "Epochs [train.epochs, default 30]");
  ta.batch_opt = tr->add_option("--batch-size", ta.batch, "Batch size [train.batch_size, default 16]");
  ta.lr_opt = tr->add_option("--lr", ta.lr, "Learning rate [train.learning_rate, default 3e-4]");
  ta.seed_opt = tr->add_option("--seed", ta.seed, "Init and shuffle seed [train.seed, default 0]");
  ta.opt_opt = tr->add_option("--optimizer", ta.optimizer, "adam or sgd [train.optimizer]");
  ta.mode_opt = tr->add_option("--curriculum-mode", ta.mode, "ordered-epoch or staged [train.curriculum_mode]");
  ta.prec_opt = tr->add_option("--precision", ta.precision, "f64 or f32 [train.precision]");
  ta.ckpt_opt = tr->add_option("--checkpoint-every", ta.checkpoint_every, "Save a resumable checkpoint every N epochs [train.checkpoint_every]");
  ta.patch_opt = tr->add_option("--patch", ta.patch, "Patch size [model.patch, default 16]");
  ta.dim_opt = tr->add_option("--dim", ta.dim, "Embedding width [model.dim, default 32]");
  ta.heads_opt = tr->add_option("--heads", ta.heads, "Attention heads [model.heads, default 4]");
  ta.blocks_opt = tr->add_option("--blocks", ta.blocks, "Encoder blocks [model.blocks, default 4]");
  tr->add_option("--resume", ta.resume, "Continue from a checkpoint written by this run");
  tr->add_flag("--force", ta.force, "Overwrite a nonempty run directory");
  add_config_options(tr, ta.config);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on an unblurred test set");
  ev->add_option("checkpoint", ea.checkpoint, "Checkpoint file (model.ckpt)")->required();
  ev->add_option("dataset", ea.dataset, "Test dataset folder or manifest .json")->required();
  ev->add_option("--out,-o", ea.out, "Report directory (default: $HPVIT_OUTPUT_ROOT/eval-<model id>)");
  ev->add_option("--model-id", ea.model_id, "Name used in the report (default: the run id)");
  ev->add_option("--batch-size", ea.batch, "Inference batch size")->capture_default_str();
  ev->add_flag("--force", ea.force, "Overwrite a nonempty report directory");

  CompareArgs ca;
  auto* cmp = app.add_subcommand("compare", "Side-by-side metrics and ROC overlay of two reports");
  cmp->add_option("report_a", ca.a, "First report.json")->required();
  cmp->add_option("report_b", ca.b, "Second report.json")->required();
  cmp->add_option("--out,-o", ca.out, "Output directory (default: $HPVIT_OUTPUT_ROOT/compare-<a>-vs-<b>)");
  cmp->add_flag("--force", ca.force, "Overwrite a nonempty output directory");

  PreviewArgs va;
  auto* pv = app.add_subcommand("preview-blur", "Write a strip of one image at every blur level");
  pv->add_option("image", va.image, "PNG or PPM image")->required();
  pv->add_option("--k", va.k, "Number of blur levels")->capture_default_str();
  pv->add_option("--height", va.height, "Resize height before blurring (0 keeps the source)");
  pv->add_option("--width", va.width, "Resize width before blurring (0 keeps the source)");
  pv->add_option("--out,-o", va.out, "Output PNG (default: $HPVIT_OUTPUT_ROOT/preview-blur.png)");
  pv->add_flag("--force", va.force, "Overwrite an existing file");

  SynthArgs sa;
  auto* sy = app.add_subcommand("synth", "Generate the two-class blobs/stripes dataset");
  sy->add_option("--out,-o", sa.out, "Output directory (default: $HPVIT_OUTPUT_ROOT/synthetic)");
  sy->add_option("--train-per-class", sa.cfg.train_per_class, "Training images per class")->capture_default_str();
  sy->add_option("--test-per-class", sa.cfg.test_per_class, "Test images per class")->capture_default_str();
  sy->add_option("--size", sa.size, "Image height and width")->capture_default_str();
  sy->add_option("--channels", sa.cfg.channels, "1 or 3")->capture_default_str();
  sy->add_option("--seed", sa.cfg.seed, "Generator seed")->capture_default_str();
  sy->add_flag("--force", sa.force, "Overwrite a nonempty output directory");

  SplitArgs spa;
  auto* sp = app.add_subcommand("split", "Stratified train/test split into two manifests");
  sp->add_option("dataset", spa.dataset, "Dataset folder or manifest .json")->required();
  sp->add_option("--test-fraction", spa.fraction, "Per-class share of test samples")->capture_default_str();
  sp->add_option("--seed", spa.seed, "Shuffle seed")->capture_default_str();
  sp->add_option("--out,-o", spa.out, "Directory for train.json and test.json (default: $HPVIT_OUTPUT_ROOT/split)");
  sp->add_flag("--force", spa.force, "Overwrite existing manifests");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prep) return cmd_prepare(pa, out, err);
    if (*tr) return cmd_train(ta, out, err);
    if (*ev) return cmd_eval(ea, out, err);
    if (*cmp) return cmd_compare(ca, out, err);
    if (*pv) return cmd_preview(va, out, err);
    if (*sy) return cmd_synth(sa, out, err);
    if (*sp) return cmd_split(spa, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace hpvit
