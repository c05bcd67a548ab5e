#include "hpvit/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "hpvit/error.hpp"
#include "hpvit/hash.hpp"
#include "hpvit/image.hpp"

namespace hpvit {

namespace {

constexpr char kMagic[] = "HPVITCKP";
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kDigestLen = 64;

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw ChecksumError("checkpoint is truncated");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const CheckpointFile& ckpt) {
  std::string out(kMagic, 8);
  put<std::uint32_t>(out, kVersion);
  const std::string header = ckpt.header.dump();
  put<std::uint64_t>(out, header.size());
  out += header;
  put<std::uint64_t>(out, ckpt.arrays.size());
  for (const auto& a : ckpt.arrays) {
    if (shape_numel(a.shape) != a.values.size()) throw ShapeError("array " + a.name + " shape/value mismatch");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) put<std::uint64_t>(out, d);
  }
  for (const auto& a : ckpt.arrays) {
    for (double v : a.values) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  out += sha256_hex(out);
  return out;
}

CheckpointFile decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 + kDigestLen || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw ChecksumError("not a checkpoint file or truncated");
  }
  const std::size_t body = bytes.size() - kDigestLen;
  if (sha256_hex(std::string_view(bytes.data(), body)) != bytes.substr(body)) {
    throw ChecksumError("checkpoint checksum mismatch (file is corrupt or truncated)");
  }
  Reader r(bytes, body);
  r.str(8);
  if (r.get<std::uint32_t>() != kVersion) throw ChecksumError("unsupported checkpoint version");
  CheckpointFile ckpt;
  const auto header_len = r.get<std::uint64_t>();
  try {
    ckpt.header = nlohmann::json::parse(r.str(header_len));
  } catch (const nlohmann::json::parse_error&) {
    throw ChecksumError("checkpoint header is not valid JSON");
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.get<std::uint64_t>());
    ckpt.arrays.push_back(std::move(a));
  }
  for (auto& a : ckpt.arrays) {
    const std::size_t n = shape_numel(a.shape);
    a.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.values[i] = std::bit_cast<double>(r.get<std::uint64_t>());
  }
  if (r.pos() != body) throw ChecksumError("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
  check_params(ckpt.params, ckpt.model);
  CheckpointFile f;
  f.header = {{"format", "hpvit-checkpoint/1"},
              {"model", ckpt.model.to_json()},
              {"optimizer_step", ckpt.optimizer.step},
              {"meta", ckpt.meta}};
  for (const auto& [name, t] : ckpt.params.named()) {
    f.arrays.push_back({"param/" + name, t.shape(), {t.data().begin(), t.data().end()}});
  }
  const auto trainable = ckpt.params.trainable();
  if (!ckpt.optimizer.m.empty()) {
    if (ckpt.optimizer.m.size() != trainable.size()) throw ShapeError("optimizer state does not match parameters");
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      const auto& [name, t] = trainable[k];
      f.arrays.push_back({"adam_m/" + name, t.shape(), ckpt.optimizer.m[k]});
      f.arrays.push_back({"adam_v/" + name, t.shape(), ckpt.optimizer.v[k]});
    }
  }
  write_file_bytes(path, encode_checkpoint(f));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path, const ViTConfig* expected) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  const CheckpointFile f = decode_checkpoint(read_file_bytes(path));
  ModelCheckpoint ck;
  try {
    if (f.header.at("format").get<std::string>() != "hpvit-checkpoint/1") throw ChecksumError("unknown checkpoint format");
    ck.model = ViTConfig::from_json(f.header.at("model"));
    ck.optimizer.step = f.header.at("optimizer_step").get<std::uint64_t>();
    ck.meta = f.header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw ChecksumError(std::string("checkpoint header incomplete: ") + e.what());
  }
  if (expected && !(*expected == ck.model)) {
    throw ConfigError("checkpoint model config " + ck.model.to_json().dump() + " does not match expected " +
                      expected->to_json().dump());
  }
  // Build a parameter skeleton with the right shapes and flags, then fill it.
  ck.params = init_params(ck.model, 0);
  auto find = [&](const std::string& name) -> const NamedArray* {
    for (const auto& a : f.arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  };
  for (auto& [name, t] : ck.params.named()) {
    const NamedArray* a = find("param/" + name);
    if (!a || a->shape != t.shape()) throw ConfigError("checkpoint is missing or misshapes parameter " + name);
    std::copy(a->values.begin(), a->values.end(), t.mutable_data().begin());
  }
  const auto trainable = ck.params.trainable();
  if (find("adam_m/" + trainable.front().first)) {
    for (const auto& [name, t] : trainable) {
      const NamedArray* m = find("adam_m/" + name);
      const NamedArray* v = find("adam_v/" + name);
      if (!m || !v || m->values.size() != t.numel() || v->values.size() != t.numel()) {
        throw ConfigError("checkpoint optimizer state incomplete for " + name);
      }
      ck.optimizer.m.push_back(m->values);
      ck.optimizer.v.push_back(v->values);
    }
  }
  return ck;
}

}  // namespace hpvit
