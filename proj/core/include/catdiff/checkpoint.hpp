#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "catdiff/nn.hpp"

namespace catdiff {

/// On disk: "CATC", version u32, stage str, config hash u64, seed u64,
/// tensor count u32, then per tensor [name str][tensor].
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string stage;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  NamedTensors tensors;
};

std::vector<char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::vector<char> bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and checks the stage tag and config hash; a mismatch is a ConfigError.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& stage,
                           std::uint64_t expected_hash);

/// Snapshot of a module's parameters (values are cloned).
Checkpoint make_checkpoint(std::string stage, std::uint64_t config_hash, std::uint64_t seed,
                           const NamedTensors& params);

}  // namespace catdiff
