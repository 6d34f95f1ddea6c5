#include "catdiff/checkpoint.hpp"

#include "catdiff/errors.hpp"
#include "catdiff/serialize.hpp"

namespace catdiff {

namespace {
constexpr char kMagic[] = "CATC";
}

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(Checkpoint::kVersion);
  w.str(ckpt.stage);
  w.u64(ckpt.config_hash);
  w.u64(ckpt.seed);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.tensor(t);
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(std::vector<char> bytes, const std::string& origin) {
  ByteReader r(std::move(bytes), origin);
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw IoError(origin + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion)
    throw IoError(origin + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.stage = r.str();
  ckpt.config_hash = r.u64();
  ckpt.seed = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    ckpt.tensors.emplace_back(std::move(name), r.tensor());
  }
  if (!r.at_end()) throw IoError(origin + ": trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ByteWriter w;
  const auto bytes = encode_checkpoint(ckpt);
  w.bytes(std::string_view(bytes.data(), bytes.size()));
  w.write_file(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& stage, std::uint64_t expected_hash) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.stage != stage)
    throw ConfigError(path.string() + ": checkpoint stage is '" + ckpt.stage + "', expected '" + stage + "'");
  if (ckpt.config_hash != expected_hash)
    throw ConfigError(path.string() + ": config hash mismatch for stage '" + stage +
                      "' (checkpoint was trained with a different configuration)");
  return ckpt;
}

Checkpoint make_checkpoint(std::string stage, std::uint64_t config_hash, std::uint64_t seed,
                           const NamedTensors& params) {
  Checkpoint ckpt{std::move(stage), config_hash, seed, {}};
  for (const auto& [name, t] : params) ckpt.tensors.emplace_back(name, t.clone());
  return ckpt;
}

}  // namespace catdiff
