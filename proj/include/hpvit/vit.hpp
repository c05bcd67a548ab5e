#pragma once

// Vision Transformer built on the tensor engine.
//
//   z0  = [x_class; x_p^1 E; ...; x_p^N E] + pos
//   z'_l = MSA(LN(z_{l-1})) + z_{l-1}
//   z_l  = MLP(LN(z'_l)) + z'_l
//   y    = LN(z_L[0]),  logits = y W_head + b_head
//
// Images are cut into N = HW / P^2 patches; each patch is flattened in
// (row, col, channel) order.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpvit/image.hpp"
#include "hpvit/tensor.hpp"

namespace hpvit {

enum class PosMode { learned, sinusoidal };

struct ViTConfig {
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t channels = 3;
  std::size_t patch = 16;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t blocks = 4;
  std::size_t mlp_ratio = 4;
  std::size_t classes = 2;
  PosMode pos_mode = PosMode::sinusoidal;
  double ln_eps = 1e-6;

  std::size_t num_patches() const { return (height / patch) * (width / patch); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch * patch * channels; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t hidden() const { return dim * mlp_ratio; }

  // Throws ConfigError on indivisible sizes, odd D with sinusoidal positions, etc.
  void validate() const;

  nlohmann::json to_json() const;
  static ViTConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

std::string to_string(PosMode m);
PosMode pos_mode_from_string(const std::string& s);

struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

struct ViTParams {
  Tensor patch_proj;   // E: [P^2 C, D]
  Tensor class_token;  // [1, D]
  Tensor pos;          // [N+1, D]
  std::vector<BlockParams> blocks;
  Tensor final_gain, final_bias;
  Tensor head_w, head_b;

  // Every tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
  // The subset updated by the optimizer (pos is frozen in sinusoidal mode).
  std::vector<std::pair<std::string, Tensor>> trainable() const;
  ViTParams clone() const;
  void zero_grad();
};

// Flattens an image into [N, P^2 C] patch rows, patches in row-major grid order.
Tensor patchify(const Image& img, std::size_t patch);
Image unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                 std::size_t patch);
// Stacks patch matrices of several images into [B, N, P^2 C].
Tensor patchify_batch(std::span<const Image* const> images, std::size_t patch);

// p[i][j] = sin(i / 10000^(j/D)) for even j, cos(i / 10000^((j-1)/D)) for odd j.
Tensor sinusoidal_positions(std::size_t rows, std::size_t dim);

// Truncated N(0, 0.02) projections, zero biases and class token, unit LN gains.
ViTParams init_params(const ViTConfig& cfg, std::uint64_t seed);

// Throws ShapeError unless every tensor has the shape the config implies.
void check_params(const ViTParams& p, const ViTConfig& cfg);

// patches: [B, N, P^2 C] -> tokens [B, N+1, D]
Tensor embed(Graph& g, const Tensor& patches, const ViTParams& p);

// Attention probabilities [B, heads, T, T] are appended to `attention` when given.
Tensor msa(Graph& g, const Tensor& x, const BlockParams& bp, std::size_t heads,
           std::vector<Tensor>* attention = nullptr);
Tensor mlp(Graph& g, const Tensor& x, const BlockParams& bp);
Tensor encoder_block(Graph& g, const Tensor& z, const BlockParams& bp, const ViTConfig& cfg,
                     std::vector<Tensor>* attention = nullptr);

// patches: [B, N, P^2 C] -> logits [B, classes]
Tensor forward(Graph& g, const Tensor& patches, const ViTParams& p, const ViTConfig& cfg,
               std::vector<Tensor>* attention = nullptr);
Tensor forward_images(Graph& g, std::span<const Image> images, const ViTParams& p, const ViTConfig& cfg,
                      std::vector<Tensor>* attention = nullptr);

// Softmax class probabilities, one row per image, evaluated in batches without a tape.
std::vector<std::vector<double>> predict_proba(std::span<const Image> images, const ViTParams& p,
                                               const ViTConfig& cfg, std::size_t batch_size = 32);

}  // namespace hpvit
