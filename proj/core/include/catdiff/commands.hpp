#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "catdiff/config.hpp"

namespace catdiff {

/// Parsed command-line options shared by every subcommand.
struct CommandOptions {
  std::optional<std::filesystem::path> config_path;
  std::filesystem::path data = "data";
  std::optional<std::filesystem::path> out;   // defaults to config.output_dir
  std::optional<std::filesystem::path> ckpt;  // checkpoint directory, defaults to out
  std::optional<std::uint64_t> seed;          // overrides config.seed
  std::string stage;
  std::string variant = "full";
  std::string mask = "seg";
  std::size_t count = 1;
  bool force = false;
  std::size_t scene = 0;                  // test-split scene index for `sample`
  std::optional<std::uint64_t> new_seed;  // sample a freshly generated scene instead
  std::optional<std::size_t> class_id;    // prompt class, defaults to the scene's own
};

/// Config from --config (or defaults) with --seed applied, validated.
Config resolve_config(const CommandOptions& opts);

// Each command throws ConfigError/ContractError for bad input and IoError for
// filesystem failures; progress goes to `log`.
void cmd_make_data(const CommandOptions& opts, std::ostream& log);
void cmd_train(const CommandOptions& opts, std::ostream& log);
void cmd_sample(const CommandOptions& opts, std::ostream& log);
void cmd_eval(const CommandOptions& opts, std::ostream& log);
void cmd_ablate(const CommandOptions& opts, std::ostream& log);

/// Checkpoint file names inside a checkpoint directory.
std::filesystem::path teacher_checkpoint(const std::filesystem::path& dir);
std::filesystem::path inpainter_checkpoint(const std::filesystem::path& dir);
std::filesystem::path denoiser_checkpoint(const std::filesystem::path& dir, const std::string& variant);

}  // namespace catdiff
