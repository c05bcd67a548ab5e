#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hpvit/error.hpp"
#include "hpvit/vit.hpp"
#include "support.hpp"

using namespace hpvit;
using testing::grad_check;

namespace {

ViTConfig tiny_config(PosMode pos = PosMode::learned) {
  ViTConfig c;
  c.height = c.width = 4;
  c.channels = 1;
  c.patch = 2;
  c.dim = 4;
  c.heads = 1;
  c.blocks = 1;
  c.mlp_ratio = 4;
  c.classes = 2;
  c.pos_mode = pos;
  return c;
}

ViTConfig desk_config() {
  ViTConfig c;
  c.height = c.width = 32;
  c.channels = 1;
  c.patch = 8;
  c.dim = 32;
  c.heads = 4;
  c.blocks = 4;
  c.classes = 2;
  return c;
}

// Replaces every parameter with O(1) random values so gradients are not tiny.
void randomize(ViTParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (auto& [name, t] : p.named()) {
    const bool gain = name.find("gain") != std::string::npos;
    for (double& v : t.mutable_data()) v = gain ? 1.0 + u(rng) : u(rng);
  }
}

Tensor random_patches(const ViTConfig& c, std::size_t batch, std::mt19937_64& rng) {
  return testing::random_tensor({batch, c.num_patches(), c.patch_dim()}, rng, 0.0, 1.0, false);
}

Image random_image(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, c);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Reorders the patch rows of a [B, N, F] tensor.
Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t b = x.dim(0), n = x.dim(1), f = x.dim(2);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < f; ++k) out[(i * n + r) * f + k] = x.data()[(i * n + perm[r]) * f + k];
    }
  }
  return Tensor::from(x.shape(), std::move(out));
}

}  // namespace

TEST_CASE("config validation") {
  ViTConfig c;
  CHECK(c.patch == 16);
  CHECK(c.dim == 32);
  CHECK(c.blocks == 4);
  CHECK(c.num_patches() == 196);
  CHECK(c.patch_dim() == 768);
  CHECK_NOTHROW(c.validate());
  ViTConfig bad = c;
  bad.height = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.dim = 33;
  bad.heads = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.pos_mode = PosMode::learned;
  CHECK_NOTHROW(bad.validate());
  CHECK(ViTConfig::from_json(c.to_json()) == c);
  // Patch count uses both spatial sides.
  ViTConfig wide = desk_config();
  wide.width = 64;
  CHECK(wide.num_patches() == 32);
}

TEST_CASE("patchify") {
  std::mt19937_64 rng(21);
  const Image big(224, 224, 3, 0.5);
  const Tensor p = patchify(big, 16);
  CHECK(p.shape() == Shape{196, 768});

  const Image one = random_image(4, 4, 3, rng);
  const Tensor single = patchify(one, 4);
  CHECK(single.shape() == Shape{1, 48});
  CHECK(values(single) == one.pixels);

  const Image img = random_image(8, 8, 1, rng);
  const Tensor rows = patchify(img, 4);
  CHECK(rows.shape() == Shape{4, 16});
  // Patch 1 is the top-right block; its first row starts at column 4.
  CHECK(rows.at({1, 0}) == img.at(0, 4, 0));
  CHECK(rows.at({2, 5}) == img.at(5, 1, 0));
  CHECK(unpatchify(rows, 8, 8, 1, 4) == img);
  CHECK_THROWS_AS(patchify(random_image(6, 8, 1, rng), 4), ShapeError);
}

TEST_CASE("sinusoidal positions") {
  const Tensor p = sinusoidal_positions(50, 8);
  for (std::size_t j = 0; j < 8; ++j) CHECK(p.at({0, j}) == (j % 2 == 0 ? 0.0 : 1.0));
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(p.at({i, 0}) == std::sin(static_cast<double>(i)));
    CHECK(p.at({i, 3}) == doctest::Approx(std::cos(i / std::pow(10000.0, 2.0 / 8.0))).epsilon(1e-14));
  }
  const Tensor q = sinusoidal_positions(400, 6);
  for (std::size_t a = 0; a < 400; ++a) {
    for (std::size_t b = a + 1; b < 400; ++b) {
      double diff = 0.0;
      for (std::size_t j = 0; j < 6; ++j) diff = std::max(diff, std::abs(q.at({a, j}) - q.at({b, j})));
      CHECK(diff > 0.0);
    }
  }
  CHECK_THROWS_AS(sinusoidal_positions(4, 5), ConfigError);
}

TEST_CASE("init_params") {
  const ViTConfig c = desk_config();
  const ViTParams a = init_params(c, 3), b = init_params(c, 3), d = init_params(c, 4);
  const auto na = a.named(), nb = b.named(), nd = d.named();
  REQUIRE(na.size() == 3 + 12 * 4 + 4);
  bool differs = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(values(na[i].second) == values(nb[i].second));
    differs = differs || values(na[i].second) != values(nd[i].second);
  }
  CHECK(differs);
  CHECK_NOTHROW(check_params(a, c));

  CHECK(a.patch_proj.shape() == Shape{64, 32});
  CHECK(a.class_token.shape() == Shape{1, 32});
  CHECK(a.pos.shape() == Shape{17, 32});
  CHECK(a.blocks[0].w1.shape() == Shape{32, 128});
  CHECK(a.blocks[0].w2.shape() == Shape{128, 32});
  CHECK(a.head_w.shape() == Shape{32, 2});
  for (double v : a.class_token.data()) CHECK(v == 0.0);
  for (double v : a.blocks[1].ln1_gain.data()) CHECK(v == 1.0);
  for (double v : a.blocks[1].b1.data()) CHECK(v == 0.0);
  for (double v : a.head_b.data()) CHECK(v == 0.0);
  CHECK(values(a.pos) == values(sinusoidal_positions(17, 32)));
  CHECK_FALSE(a.pos.requires_grad());
  CHECK(a.trainable().size() == na.size() - 1);

  // Truncated at two standard deviations: sd = 0.02 * 0.87962566...
  const auto e = a.patch_proj.data();
  const double mean = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
  const double se = 0.02 * 0.8796256610342398 / std::sqrt(static_cast<double>(e.size()));
  CHECK(std::abs(mean) < 3.0 * se);
  for (double v : e) CHECK(std::abs(v) <= 0.04);

  ViTConfig other = c;
  other.dim = 16;
  CHECK_THROWS_AS(check_params(a, other), ShapeError);

  ViTConfig learned = c;
  learned.pos_mode = PosMode::learned;
  CHECK(init_params(learned, 3).pos.requires_grad());
}

TEST_CASE("embed") {
  ViTConfig c = tiny_config();
  ViTParams p = init_params(c, 1);
  for (Tensor* t : {&p.patch_proj, &p.pos}) {
    for (double& v : t->mutable_data()) v = 0.0;
  }
  p.class_token = Tensor::from({1, 4}, {0.1, 0.2, 0.3, 0.4}, true);
  Graph g;
  const Tensor z = embed(g, Tensor::zeros({1, 4, 4}), p);
  CHECK(z.shape() == Shape{1, 5, 4});
  for (std::size_t j = 0; j < 4; ++j) CHECK(z.at({0, 0, j}) == p.class_token.data()[j]);
  for (std::size_t r = 1; r < 5; ++r) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(z.at({0, r, j}) == 0.0);
  }

  // Identity projection: token r+1 is patch r.
  p.patch_proj = Tensor::from({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}, true);
  std::mt19937_64 rng(22);
  const Tensor x = random_patches(c, 1, rng);
  Graph g2;
  const Tensor z2 = embed(g2, x, p);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(z2.at({0, r + 1, j}) == x.at({0, r, j}));
  }

  randomize(p, 23);
  const auto r = grad_check([&](Graph& gg) { return testing::probe(gg, embed(gg, x, p)); }, {p.patch_proj});
  CHECK(r.max_rel < 1e-6);
}

TEST_CASE("msa") {
  BlockParams bp;
  auto mat = [](std::vector<double> v) { return Tensor::from({2, 2}, std::move(v), true); };

  SUBCASE("single token attends to itself") {
    bp.wq = mat({0.3, -1, 2, 0.5});
    bp.wk = mat({1, 1, -1, 0});
    bp.wv = mat({1, 0, 0, 1});
    bp.wo = mat({1, 0, 0, 1});
    std::vector<Tensor> att;
    Graph g;
    const Tensor out = msa(g, Tensor::from({1, 1, 2}, {0.7, -0.2}), bp, 1, &att);
    CHECK(att.at(0).item() == 1.0);
    CHECK(values(out) == std::vector<double>{0.7, -0.2});
  }
  SUBCASE("zero queries and keys give uniform attention") {
    bp.wq = mat({0, 0, 0, 0});
    bp.wk = mat({0, 0, 0, 0});
    bp.wv = mat({1, 2, -1, 0.5});
    bp.wo = mat({0.5, 1, 1, -1});
    const Tensor x = Tensor::from({1, 3, 2}, {1, 0, 0, 1, 2, -1});
    std::vector<Tensor> att;
    Graph g;
    const Tensor out = msa(g, x, bp, 1, &att);
    for (double a : att.at(0).data()) CHECK(a == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    // mean of V rows through W_O
    double v0 = 0, v1 = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      v0 += (x.at({0, r, 0}) * 1 + x.at({0, r, 1}) * -1) / 3.0;
      v1 += (x.at({0, r, 0}) * 2 + x.at({0, r, 1}) * 0.5) / 3.0;
    }
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(out.at({0, r, 0}) == doctest::Approx(v0 * 0.5 + v1 * 1).epsilon(1e-14));
      CHECK(out.at({0, r, 1}) == doctest::Approx(v0 * 1 + v1 * -1).epsilon(1e-14));
    }
  }
  SUBCASE("three-token hand trace") {
    // Expected values scripted separately in numpy.
    bp.wq = mat({1, 0.5, 0, 1});
    bp.wk = mat({0.5, 0, 1, -1});
    bp.wv = mat({2, 0, 0, -1});
    bp.wo = mat({1, 1, 0, 1});
    std::vector<Tensor> att;
    Graph g;
    const Tensor out = msa(g, Tensor::from({1, 3, 2}, {1, 0, 0, 1, 1, 1}), bp, 1, &att);
    const std::vector<double> expect{1.4159081537115628, 0.7079540768557814, 1.5034898434845538,
                                     1.0069796869691077, 1.5507873127303993, 1.0063148032291984};
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(out.data()[i] - expect[i]) < 1e-14);
    const std::vector<double> a{0.2920459231442186, 0.2920459231442186, 0.41590815371156276,
                                0.5034898434845538, 0.2482550782577231, 0.2482550782577231,
                                0.4555274904987992, 0.22460634363480048, 0.31986616586640043};
    for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(att.at(0).data()[i] - a[i]) < 1e-14);
  }
  SUBCASE("indivisible width") {
    bp.wq = bp.wk = bp.wv = bp.wo = Tensor::zeros({3, 3});
    Graph g;
    CHECK_THROWS_AS(msa(g, Tensor::zeros({1, 2, 3}), bp, 2), ShapeError);
  }
}

TEST_CASE("encoder block") {
  std::mt19937_64 rng(24);
  ViTConfig c = desk_config();
  c.heads = 2;
  c.dim = 4;
  c.blocks = 1;
  ViTParams p = init_params(c, 0);
  BlockParams& bp = p.blocks[0];
  for (auto& [name, t] : p.named()) {
    if (name.rfind("block0.", 0) == 0) {
      for (double& v : t.mutable_data()) v = 0.0;
    }
  }
  const Tensor z = testing::random_tensor({2, 5, 4}, rng, -1, 1, false);
  Graph g;
  CHECK(values(encoder_block(g, z, bp, c)) == values(z));

  randomize(p, 25);
  Tensor z2 = testing::random_tensor({1, 2, 4}, rng, -1, 1, true);
  std::vector<Tensor> wrt{z2};
  for (auto& [name, t] : p.trainable()) {
    if (name.rfind("block0.", 0) == 0) wrt.push_back(t);
  }
  const auto r = grad_check([&](Graph& gg) { return testing::probe(gg, encoder_block(gg, z2, bp, c)); }, wrt);
  CHECK(r.max_rel < 1e-4);
}

TEST_CASE("full tiny model gradient") {
  for (PosMode mode : {PosMode::learned, PosMode::sinusoidal}) {
    const ViTConfig c = tiny_config(mode);
    ViTParams p = init_params(c, 5);
    randomize(p, 26);
    std::mt19937_64 rng(27);
    const Tensor x = random_patches(c, 3, rng);
    const std::vector<std::size_t> labels{0, 1, 1};
    std::vector<Tensor> wrt;
    for (auto& [name, t] : p.trainable()) wrt.push_back(t);
    const auto r = grad_check([&](Graph& g) { return g.cross_entropy(forward(g, x, p, c), labels); }, wrt);
    CHECK(r.checked > 100);
    CHECK(r.max_rel < 1e-4);
  }
}

TEST_CASE("forward shape and determinism") {
  const ViTConfig c = desk_config();
  const ViTParams p = init_params(c, 8);
  std::mt19937_64 rng(28);
  const Image img = random_image(32, 32, 1, rng);
  const std::vector<Image> batch{img, img, img};
  std::vector<Tensor> att;
  Graph g;
  const Tensor logits = forward_images(g, batch, p, c, &att);
  CHECK(logits.shape() == Shape{3, 2});
  CHECK(logits.at({0, 0}) == logits.at({2, 0}));
  CHECK(logits.at({1, 1}) == logits.at({2, 1}));
  CHECK(att.size() == 4);
  for (const Tensor& a : att) CHECK(a.shape() == Shape{3, 4, 17, 17});
  const std::vector<Image> wrong{random_image(16, 16, 1, rng)};
  Graph g2;
  CHECK_THROWS_AS(forward_images(g2, wrong, p, c), ShapeError);

  const auto probs = predict_proba(batch, p, c, 2);
  REQUIRE(probs.size() == 3);
  CHECK(probs[0][0] + probs[0][1] == doctest::Approx(1.0));
  CHECK(probs[0] == probs[2]);
}

TEST_CASE("attention rows sum to one in every block") {
  const ViTConfig c = desk_config();
  ViTParams p = init_params(c, 9);
  randomize(p, 29);
  std::mt19937_64 rng(30);
  std::vector<Tensor> att;
  Graph g;
  forward(g, random_patches(c, 4, rng), p, c, &att);
  REQUIRE(att.size() == c.blocks);
  for (const Tensor& a : att) {
    const auto d = a.data();
    for (std::size_t row = 0; row < a.numel() / 17; ++row) {
      double s = 0.0;
      for (std::size_t k = 0; k < 17; ++k) s += d[row * 17 + k];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("class token is blind to patch order without positions") {
  const ViTConfig c = desk_config();
  ViTParams p = init_params(c, 10);
  randomize(p, 31);
  std::mt19937_64 rng(32);
  const Tensor x = random_patches(c, 2, rng);
  std::vector<std::size_t> perm(c.num_patches());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  SUBCASE("zeroed positions") {
    for (double& v : p.pos.mutable_data()) v = 0.0;
    Graph g1, g2;
    const auto a = values(forward(g1, x, p, c));
    const auto b = values(forward(g2, permute_rows(x, perm), p, c));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
  }
  SUBCASE("positions travel with their patches") {
    Graph g1;
    const auto a = values(forward(g1, x, p, c));
    ViTParams moved = p.clone();
    const std::size_t d = c.dim;
    for (std::size_t r = 0; r < c.num_patches(); ++r) {
      for (std::size_t k = 0; k < d; ++k) moved.pos.mutable_data()[(r + 1) * d + k] = p.pos.data()[(perm[r] + 1) * d + k];
    }
    Graph g2;
    const auto b = values(forward(g2, permute_rows(x, perm), moved, c));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
  }
}
