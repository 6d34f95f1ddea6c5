#include <exception>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "catdiff/commands.hpp"
#include "catdiff/errors.hpp"

namespace {

struct Subcommand {
  CLI::App* app;
  void (*run)(const catdiff::CommandOptions&, std::ostream&);
};

void add_common(CLI::App* app, catdiff::CommandOptions& o, std::optional<std::string>& config,
                std::optional<std::string>& out, std::optional<std::uint64_t>& seed) {
  app->add_option("--config", config, "Config file (key = value lines)");
  app->add_option("--data", o.data, "Dataset directory")->capture_default_str();
  app->add_option("--out", out, "Output directory (default: output_dir from the config)");
  app->add_option("--seed", seed, "Override the config seed");
}

}  // namespace

int main(int argc, char** argv) {
  catdiff::CommandOptions o;
  std::optional<std::string> config, out, ckpt;
  std::optional<std::uint64_t> seed;

  CLI::App app{"catdiff: cascaded semantic pre-inpainting and diffusion inpainting on toy scenes"};
  app.require_subcommand(1);

  auto* make_data = app.add_subcommand("make-data", "Generate the train/test corpus");
  add_common(make_data, o, config, out, seed);
  make_data->add_flag("--force", o.force, "Overwrite an existing dataset directory");

  auto* train = app.add_subcommand("train", "Train one stage: teacher, inpainter or denoiser");
  add_common(train, o, config, out, seed);
  train->add_option("--stage", o.stage, "teacher | inpainter | denoiser")->required();
  train->add_option("--variant", o.variant, "Denoiser variant: baseline | context_only | full")->capture_default_str();
  train->add_option("--ckpt", ckpt, "Checkpoint directory (default: --out)");

  auto* sample = app.add_subcommand("sample", "Inpaint a scene with trained checkpoints");
  add_common(sample, o, config, out, seed);
  sample->add_option("--variant", o.variant, "Denoiser variant")->capture_default_str();
  sample->add_option("--mask", o.mask, "seg | bbox")->capture_default_str();
  sample->add_option("--count", o.count, "Number of samples, each with its own noise seed")->capture_default_str();
  sample->add_option("--scene", o.scene, "Test-split scene index")->capture_default_str();
  sample->add_option("--new-seed", o.new_seed, "Generate a fresh scene from this seed instead");
  sample->add_option("--class", o.class_id, "Prompt class id (default: the scene's class)");
  sample->add_option("--ckpt", ckpt, "Checkpoint directory (default: --out)");

  auto* eval = app.add_subcommand("eval", "Similarity study and metrics for one trained variant");
  add_common(eval, o, config, out, seed);
  eval->add_option("--variant", o.variant, "Denoiser variant")->capture_default_str();
  eval->add_option("--ckpt", ckpt, "Checkpoint directory (default: --out)");

  auto* ablate = app.add_subcommand("ablate", "Train and compare the three variants over several seeds");
  add_common(ablate, o, config, out, seed);
  ablate->add_option("--ckpt", ckpt, "Checkpoint directory (default: --out)");

  const Subcommand commands[] = {{make_data, catdiff::cmd_make_data},
                                 {train, catdiff::cmd_train},
                                 {sample, catdiff::cmd_sample},
                                 {eval, catdiff::cmd_eval},
                                 {ablate, catdiff::cmd_ablate}};

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (config) o.config_path = *config;
  if (out) o.out = *out;
  if (ckpt) o.ckpt = *ckpt;
  o.seed = seed;

  try {
    for (const auto& c : commands)
      if (c.app->parsed()) c.run(o, std::cout);
  } catch (const catdiff::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
