#pragma once

// Binary checkpoint format (all integers and floats little-endian):
//
//   "HPVITCKP"              8-byte magic
//   u32 version             currently 1
//   u64 header_len, bytes   JSON header (model config, optimizer step, metadata)
//   u64 array_count
//   array_count x { u32 name_len, name, u32 rank, u64 dims[rank] }
//   f64 values of every array, in table order
//   64 ASCII hex chars      SHA-256 of everything above
//
// Values are stored as raw IEEE-754 doubles, so a round trip is bit-exact.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hpvit/optim.hpp"
#include "hpvit/tensor.hpp"
#include "hpvit/vit.hpp"

namespace hpvit {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointFile {
  nlohmann::json header;
  std::vector<NamedArray> arrays;
};

std::string encode_checkpoint(const CheckpointFile& ckpt);
// Throws ChecksumError on truncation or any corruption.
CheckpointFile decode_checkpoint(const std::string& bytes);

struct ModelCheckpoint {
  ViTConfig model;
  ViTParams params;
  AdamState optimizer;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
// When `expected` is given, a differing stored model config is an error.
ModelCheckpoint load_checkpoint(const std::filesystem::path& path, const ViTConfig* expected = nullptr);

}  // namespace hpvit
