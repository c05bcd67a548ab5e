#include "hpvit/vit.hpp"

#include <cmath>
#include <random>

#include "hpvit/error.hpp"

namespace hpvit {

// ---------------------------------------------------------------------------
// Config

void ViTConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError("invalid model config: " + why); };
  if (height == 0 || width == 0 || patch == 0 || dim == 0 || heads == 0 || blocks == 0 || mlp_ratio == 0) {
    fail("all sizes must be positive");
  }
  if (channels != 1 && channels != 3) fail("channels must be 1 or 3");
  if (height % patch != 0 || width % patch != 0) {
    fail("image " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by patch size " +
         std::to_string(patch));
  }
  if (dim % heads != 0) fail("dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  if (classes < 2) fail("need at least two classes");
  if (pos_mode == PosMode::sinusoidal && dim % 2 != 0) fail("sinusoidal positions need an even dim");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

std::string to_string(PosMode m) { return m == PosMode::learned ? "learned" : "sinusoidal"; }

PosMode pos_mode_from_string(const std::string& s) {
  if (s == "learned") return PosMode::learned;
  if (s == "sinusoidal") return PosMode::sinusoidal;
  throw ConfigError("unknown positional mode '" + s + "' (expected learned or sinusoidal)");
}

nlohmann::json ViTConfig::to_json() const {
  return {{"height", height}, {"width", width},       {"channels", channels}, {"patch", patch},
          {"dim", dim},       {"heads", heads},       {"blocks", blocks},     {"mlp_ratio", mlp_ratio},
          {"classes", classes}, {"pos_mode", to_string(pos_mode)}, {"ln_eps", ln_eps}};
}

ViTConfig ViTConfig::from_json(const nlohmann::json& j) {
  ViTConfig c;
  try {
    c.height = j.at("height").get<std::size_t>();
    c.width = j.at("width").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.patch = j.at("patch").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.pos_mode = pos_mode_from_string(j.at("pos_mode").get<std::string>());
    c.ln_eps = j.at("ln_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

std::vector<std::pair<std::string, Tensor>> ViTParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out{
      {"patch_proj", patch_proj}, {"class_token", class_token}, {"pos", pos}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockParams& b = blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    out.insert(out.end(), {{pre + "ln1_gain", b.ln1_gain},
                           {pre + "ln1_bias", b.ln1_bias},
                           {pre + "wq", b.wq},
                           {pre + "wk", b.wk},
                           {pre + "wv", b.wv},
                           {pre + "wo", b.wo},
                           {pre + "ln2_gain", b.ln2_gain},
                           {pre + "ln2_bias", b.ln2_bias},
                           {pre + "w1", b.w1},
                           {pre + "b1", b.b1},
                           {pre + "w2", b.w2},
                           {pre + "b2", b.b2}});
  }
  out.insert(out.end(), {{"final_gain", final_gain}, {"final_bias", final_bias}, {"head_w", head_w}, {"head_b", head_b}});
  return out;
}

std::vector<std::pair<std::string, Tensor>> ViTParams::trainable() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [name, t] : named()) {
    if (t.requires_grad()) out.emplace_back(name, t);
  }
  return out;
}

ViTParams ViTParams::clone() const {
  ViTParams c = *this;
  auto deep = [](Tensor& t) {
    const bool rg = t.requires_grad();
    t = t.clone();
    t.zero_grad();
    t.set_requires_grad(rg);
  };
  deep(c.patch_proj);
  deep(c.class_token);
  deep(c.pos);
  for (auto& b : c.blocks) {
    for (Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gain, &b.ln2_bias, &b.w1, &b.b1,
                      &b.w2, &b.b2}) {
      deep(*t);
    }
  }
  deep(c.final_gain);
  deep(c.final_bias);
  deep(c.head_w);
  deep(c.head_b);
  return c;
}

void ViTParams::zero_grad() {
  for (auto& [name, t] : named()) t.zero_grad();
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("sinusoidal positions need an even, positive dim");
  std::vector<double> v(rows * dim);
  const double d = static_cast<double>(dim);
  for (std::size_t i = 0; i < rows; ++i) {
    const double pos = static_cast<double>(i);
    for (std::size_t j = 0; j < dim; ++j) {
      if (j % 2 == 0) {
        v[i * dim + j] = std::sin(pos / std::pow(10000.0, static_cast<double>(j) / d));
      } else {
        v[i * dim + j] = std::cos(pos / std::pow(10000.0, static_cast<double>(j - 1) / d));
      }
    }
  }
  return Tensor::from({rows, dim}, std::move(v));
}

ViTParams init_params(const ViTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc_normal = [&](Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
      double z;
      do {
        z = normal(rng);
      } while (std::abs(z) > 2.0);
      x = 0.02 * z;
    }
    return Tensor::from(std::move(shape), std::move(v), true);
  };
  const std::size_t d = cfg.dim;
  ViTParams p;
  p.patch_proj = trunc_normal({cfg.patch_dim(), d});
  p.class_token = Tensor::zeros({1, d}, true);
  if (cfg.pos_mode == PosMode::learned) {
    p.pos = trunc_normal({cfg.tokens(), d});
  } else {
    p.pos = sinusoidal_positions(cfg.tokens(), d);
  }
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    BlockParams b;
    b.ln1_gain = Tensor::full({d}, 1.0, true);
    b.ln1_bias = Tensor::zeros({d}, true);
    b.wq = trunc_normal({d, d});
    b.wk = trunc_normal({d, d});
    b.wv = trunc_normal({d, d});
    b.wo = trunc_normal({d, d});
    b.ln2_gain = Tensor::full({d}, 1.0, true);
    b.ln2_bias = Tensor::zeros({d}, true);
    b.w1 = trunc_normal({d, cfg.hidden()});
    b.b1 = Tensor::zeros({cfg.hidden()}, true);
    b.w2 = trunc_normal({cfg.hidden(), d});
    b.b2 = Tensor::zeros({d}, true);
    p.blocks.push_back(std::move(b));
  }
  p.final_gain = Tensor::full({d}, 1.0, true);
  p.final_bias = Tensor::zeros({d}, true);
  p.head_w = trunc_normal({d, cfg.classes});
  p.head_b = Tensor::zeros({cfg.classes}, true);
  return p;
}

void check_params(const ViTParams& p, const ViTConfig& cfg) {
  const std::size_t d = cfg.dim;
  auto expect = [](const std::string& name, const Tensor& t, const Shape& s) {
    if (!t.defined() || t.shape() != s) {
      throw ShapeError("parameter " + name + " has shape " + (t.defined() ? shape_str(t.shape()) : "<none>") +
                       ", expected " + shape_str(s));
    }
  };
  expect("patch_proj", p.patch_proj, {cfg.patch_dim(), d});
  expect("class_token", p.class_token, {1, d});
  expect("pos", p.pos, {cfg.tokens(), d});
  if (p.blocks.size() != cfg.blocks) throw ShapeError("parameter block count does not match config");
  for (const auto& b : p.blocks) {
    for (const Tensor* t : {&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias, &b.b2}) expect("block vector", *t, {d});
    for (const Tensor* t : {&b.wq, &b.wk, &b.wv, &b.wo}) expect("attention weight", *t, {d, d});
    expect("w1", b.w1, {d, cfg.hidden()});
    expect("b1", b.b1, {cfg.hidden()});
    expect("w2", b.w2, {cfg.hidden(), d});
  }
  expect("final_gain", p.final_gain, {d});
  expect("final_bias", p.final_bias, {d});
  expect("head_w", p.head_w, {d, cfg.classes});
  expect("head_b", p.head_b, {cfg.classes});
}

// ---------------------------------------------------------------------------
// Patches

Tensor patchify(const Image& img, std::size_t patch) {
  if (patch == 0 || img.height % patch != 0 || img.width % patch != 0) {
    throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " is not divisible into " + std::to_string(patch) + "x" + std::to_string(patch) + " patches");
  }
  const std::size_t gh = img.height / patch;
  const std::size_t gw = img.width / patch;
  const std::size_t row_len = patch * patch * img.channels;
  std::vector<double> v(gh * gw * row_len);
  std::size_t k = 0;
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          for (std::size_t c = 0; c < img.channels; ++c) v[k++] = img.at(py * patch + y, px * patch + x, c);
        }
      }
    }
  }
  return Tensor::from({gh * gw, row_len}, std::move(v));
}

Image unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                 std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) throw ShapeError("indivisible image for unpatchify");
  const std::size_t gh = height / patch;
  const std::size_t gw = width / patch;
  if (patches.shape() != Shape{gh * gw, patch * patch * channels}) {
    throw ShapeError("unpatchify: patch matrix " + shape_str(patches.shape()) + " does not match image geometry");
  }
  Image img(height, width, channels);
  const auto v = patches.data();
  std::size_t k = 0;
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
          for (std::size_t c = 0; c < channels; ++c) img.at(py * patch + y, px * patch + x, c) = v[k++];
        }
      }
    }
  }
  return img;
}

Tensor patchify_batch(std::span<const Image* const> images, std::size_t patch) {
  if (images.empty()) throw ShapeError("empty image batch");
  std::vector<double> v;
  Shape one;
  for (const Image* img : images) {
    Tensor t = patchify(*img, patch);
    if (one.empty()) {
      one = t.shape();
      v.reserve(images.size() * t.numel());
    } else if (t.shape() != one) {
      throw ShapeError("images in a batch must share one shape");
    }
    v.insert(v.end(), t.data().begin(), t.data().end());
  }
  return Tensor::from({images.size(), one[0], one[1]}, std::move(v));
}

// ---------------------------------------------------------------------------
// Model

Tensor embed(Graph& g, const Tensor& patches, const ViTParams& p) {
  if (patches.rank() != 3) throw ShapeError("embed expects [B, N, P^2 C] patches, got " + shape_str(patches.shape()));
  const std::size_t batch = patches.dim(0);
  const std::size_t d = p.class_token.dim(1);
  if (p.pos.dim(0) != patches.dim(1) + 1) {
    throw ShapeError("positional table has " + std::to_string(p.pos.dim(0)) + " rows for " +
                     std::to_string(patches.dim(1)) + " patches");
  }
  Tensor tokens = g.matmul(patches, p.patch_proj);
  Tensor cls = g.add(Tensor::zeros({batch, 1, d}), p.class_token);
  Tensor z = g.concat({cls, tokens}, 1);
  return g.add(z, p.pos);
}

Tensor msa(Graph& g, const Tensor& x, const BlockParams& bp, std::size_t heads, std::vector<Tensor>* attention) {
  if (x.rank() != 3) throw ShapeError("msa expects [B, T, D] input, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  const std::size_t t = x.dim(1);
  const std::size_t d = x.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("dim " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  auto split = [&](const Tensor& w) {
    Tensor proj = g.matmul(x, w);
    return g.permute(g.reshape(proj, {batch, t, heads, dk}), {0, 2, 1, 3});
  };
  Tensor q = split(bp.wq);
  Tensor k = split(bp.wk);
  Tensor v = split(bp.wv);
  Tensor scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor a = g.softmax(scores, -1);
  if (attention) attention->push_back(a);
  Tensor z = g.matmul(a, v);
  Tensor merged = g.reshape(g.permute(z, {0, 2, 1, 3}), {batch, t, d});
  return g.matmul(merged, bp.wo);
}

Tensor mlp(Graph& g, const Tensor& x, const BlockParams& bp) {
  Tensor h = g.gelu(g.add(g.matmul(x, bp.w1), bp.b1));
  return g.add(g.matmul(h, bp.w2), bp.b2);
}

Tensor encoder_block(Graph& g, const Tensor& z, const BlockParams& bp, const ViTConfig& cfg,
                     std::vector<Tensor>* attention) {
  Tensor attn = msa(g, g.layer_norm(z, bp.ln1_gain, bp.ln1_bias, cfg.ln_eps), bp, cfg.heads, attention);
  Tensor mid = g.add(z, attn);
  return g.add(mid, mlp(g, g.layer_norm(mid, bp.ln2_gain, bp.ln2_bias, cfg.ln_eps), bp));
}

Tensor forward(Graph& g, const Tensor& patches, const ViTParams& p, const ViTConfig& cfg,
               std::vector<Tensor>* attention) {
  if (patches.rank() != 3 || patches.dim(1) != cfg.num_patches() || patches.dim(2) != cfg.patch_dim()) {
    throw ShapeError("forward expects patches [B, " + std::to_string(cfg.num_patches()) + ", " +
                     std::to_string(cfg.patch_dim()) + "], got " + shape_str(patches.shape()));
  }
  Tensor z = embed(g, patches, p);
  for (const BlockParams& bp : p.blocks) z = encoder_block(g, z, bp, cfg, attention);
  const std::size_t batch = patches.dim(0);
  Tensor cls = g.reshape(g.slice(z, 1, 0, 1), {batch, cfg.dim});
  Tensor y = g.layer_norm(cls, p.final_gain, p.final_bias, cfg.ln_eps);
  return g.add(g.matmul(y, p.head_w), p.head_b);
}

Tensor forward_images(Graph& g, std::span<const Image> images, const ViTParams& p, const ViTConfig& cfg,
                      std::vector<Tensor>* attention) {
  std::vector<const Image*> ptrs;
  for (const Image& img : images) {
    if (img.height != cfg.height || img.width != cfg.width || img.channels != cfg.channels) {
      throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                       std::to_string(img.channels) + " does not match model input " + std::to_string(cfg.height) +
                       "x" + std::to_string(cfg.width) + "x" + std::to_string(cfg.channels));
    }
    ptrs.push_back(&img);
  }
  return forward(g, patchify_batch(ptrs, cfg.patch), p, cfg, attention);
}

std::vector<std::vector<double>> predict_proba(std::span<const Image> images, const ViTParams& p,
                                               const ViTConfig& cfg, std::size_t batch_size) {
  if (batch_size == 0) batch_size = 1;
  // Forward on detached copies so no tape is recorded.
  ViTParams frozen = p.clone();
  for (auto& [name, t] : frozen.named()) t.set_requires_grad(false);
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, images.size() - start);
    Graph g;
    Tensor logits = forward_images(g, images.subspan(start, n), frozen, cfg);
    const auto v = logits.data();
    for (std::size_t b = 0; b < n; ++b) {
      std::vector<double> row(v.begin() + static_cast<long>(b * cfg.classes),
                              v.begin() + static_cast<long>((b + 1) * cfg.classes));
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double& r : row) z += (r = std::exp(r - mx));
      for (double& r : row) r /= z;
      out.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace hpvit
