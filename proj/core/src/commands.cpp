#include "catdiff/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "catdiff/checkpoint.hpp"
#include "catdiff/data.hpp"
#include "catdiff/errors.hpp"
#include "catdiff/pipeline.hpp"
#include "catdiff/rng.hpp"

namespace catdiff {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

fs::path out_dir(const CommandOptions& opts, const Config& cfg) { return opts.out.value_or(fs::path(cfg.output_dir)); }
fs::path ckpt_dir(const CommandOptions& opts, const Config& cfg) { return opts.ckpt.value_or(out_dir(opts, cfg)); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text)) throw IoError("cannot write '" + path.string() + "'");
}

std::string loss_log(const std::vector<float>& losses) {
  std::string out = "step\tloss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\n", i, static_cast<double>(losses[i]));
    out += buf;
  }
  return out;
}

Dataset load_dataset_for(const CommandOptions& opts, const Config& cfg) {
  Dataset ds = read_dataset(opts.data);
  const SceneConfig sc = SceneConfig::from(cfg);
  if (ds.scene_config.resolution != sc.resolution || ds.scene_config.classes != sc.classes || ds.patch != cfg.patch)
    throw ConfigError("dataset '" + opts.data.string() + "' was generated with resolution " +
                      std::to_string(ds.scene_config.resolution) + ", patch " + std::to_string(ds.patch) + ", " +
                      std::to_string(ds.scene_config.classes) + " classes, which does not match the config");
  return ds;
}

void require_checkpoint(const fs::path& path, const std::string& stage, const std::string& needed_by) {
  if (!fs::exists(path))
    throw ContractError(needed_by + " depends on the " + stage + " stage: checkpoint '" + path.string() +
                        "' not found (run `catdiff train --stage " + stage + "` first)");
}

TeacherEncoder load_teacher(const fs::path& dir, const Config& cfg, const std::string& needed_by) {
  const fs::path path = teacher_checkpoint(dir);
  require_checkpoint(path, "teacher", needed_by);
  const Checkpoint ck = load_checkpoint(path, "teacher", fnv1a64(cfg.teacher_signature()));
  TeacherEncoder teacher(TeacherConfig::from(cfg), 0);
  assign_parameters(teacher.parameters(), ck.tensors);
  teacher.freeze();
  return teacher;
}

SemanticInpainter load_inpainter(const fs::path& dir, const Config& cfg, const std::string& needed_by) {
  const fs::path path = inpainter_checkpoint(dir);
  require_checkpoint(path, "inpainter", needed_by);
  const Checkpoint ck = load_checkpoint(path, "inpainter", fnv1a64(cfg.inpainter_signature()));
  SemanticInpainter inpainter(InpainterConfig::from(cfg), 0);
  assign_parameters(inpainter.parameters(), ck.tensors);
  inpainter.freeze();
  return inpainter;
}

Denoiser load_denoiser(const fs::path& dir, const Config& cfg, Variant variant, const std::string& needed_by) {
  const fs::path path = denoiser_checkpoint(dir, to_string(variant));
  if (!fs::exists(path))
    throw ContractError(needed_by + " depends on the denoiser stage: checkpoint '" + path.string() +
                        "' not found (run `catdiff train --stage denoiser --variant " + to_string(variant) +
                        "` first)");
  const Checkpoint ck = load_checkpoint(path, "denoiser", fnv1a64(cfg.denoiser_signature(to_string(variant))));
  Denoiser denoiser(DenoiserConfig::from(cfg, variant), 0);
  assign_parameters(denoiser.parameters(), ck.tensors);
  denoiser.freeze();
  return denoiser;
}

TrainHooks divergence_dump(const fs::path& path, const std::string& stage, const Config& cfg,
                           const std::string& signature) {
  TrainHooks hooks;
  hooks.on_divergence = [=](const NamedTensors& last_good) {
    save_checkpoint(path, make_checkpoint(stage, fnv1a64(signature), cfg.seed, last_good));
  };
  return hooks;
}

TeacherEncoder train_teacher_stage(const Dataset& ds, const Config& cfg, const fs::path& out, const fs::path& ckpts,
                                   std::ostream& log) {
  TeacherTrainReport rep;
  TeacherEncoder teacher =
      train_teacher(ds.train, cfg, &rep,
                    divergence_dump(out / "teacher.last_good.ckpt", "teacher", cfg, cfg.teacher_signature()));
  save_checkpoint(teacher_checkpoint(ckpts),
                  make_checkpoint("teacher", fnv1a64(cfg.teacher_signature()), cfg.seed, teacher.parameters()));
  write_text(out / "teacher.loss.log", loss_log(rep.step_losses));
  const float train_top1 = rep.epoch_train_top1.empty() ? 0.0f : rep.epoch_train_top1.back();
  const float test_top1 = ds.test.scenes.empty() ? 0.0f : retrieval_top1(teacher, ds.test);
  const std::string summary = "epochs " + std::to_string(rep.epochs_run) +
                              fmt("\nretrieval_top1 train %.4f test %.4f\n", train_top1, test_top1);
  write_text(out / "teacher.summary.txt", summary);
  log << "teacher: " << rep.epochs_run << " epochs, retrieval top-1 train " << fmt("%.3f", train_top1) << ", test "
      << fmt("%.3f", test_top1) << "\n";
  return teacher;
}

SemanticInpainter train_inpainter_stage(const Dataset& ds, const TeacherEncoder& teacher, const Config& cfg,
                                        const fs::path& out, const fs::path& ckpts, std::ostream& log) {
  InpainterTrainReport rep;
  SemanticInpainter inpainter =
      train_inpainter(ds.train, teacher, cfg, &rep,
                      divergence_dump(out / "inpainter.last_good.ckpt", "inpainter", cfg, cfg.inpainter_signature()));
  save_checkpoint(inpainter_checkpoint(ckpts), make_checkpoint("inpainter", fnv1a64(cfg.inpainter_signature()),
                                                               cfg.seed, inpainter.parameters()));
  write_text(out / "inpainter.loss.log", loss_log(rep.step_losses));
  log << "inpainter: epoch loss " << fmt("%.4f -> %.4f", rep.epoch_mean_losses.front(), rep.epoch_mean_losses.back())
      << "\n";
  return inpainter;
}


}  // namespace

fs::path teacher_checkpoint(const fs::path& dir) { return dir / "teacher.ckpt"; }
fs::path inpainter_checkpoint(const fs::path& dir) { return dir / "inpainter.ckpt"; }
fs::path denoiser_checkpoint(const fs::path& dir, const std::string& variant) {
  return dir / ("denoiser-" + variant + ".ckpt");
}

Config resolve_config(const CommandOptions& opts) {
  Config cfg = opts.config_path ? Config::load(*opts.config_path) : Config{};
  if (opts.seed) cfg.seed = *opts.seed;
  cfg.validate();
  return cfg;
}

void cmd_make_data(const CommandOptions& opts, std::ostream& log) {
  const Config cfg = resolve_config(opts);
  const fs::path dir = opts.data;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!opts.force)
      throw ContractError("dataset directory '" + dir.string() + "' already exists; pass --force to overwrite");
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name == "manifest.txt" || (name.rfind("scene_", 0) == 0 && entry.path().extension() == ".bin"))
        fs::remove(entry.path());
    }
  }
  const auto [train, test] = build_corpus(cfg.seed, cfg.n_train, cfg.n_test, SceneConfig::from(cfg));
  write_dataset(dir, train, test, SceneConfig::from(cfg), cfg.patch);
  log << "wrote " << train.scenes.size() << " train / " << test.scenes.size() << " test scenes to " << dir.string()
      << "\n";
}

void cmd_train(const CommandOptions& opts, std::ostream& log) {
  const Config cfg = resolve_config(opts);
  if (opts.stage != "teacher" && opts.stage != "inpainter" && opts.stage != "denoiser")
    throw ConfigError("--stage must be teacher, inpainter or denoiser, got '" + opts.stage + "'");
  const Variant variant = parse_variant(opts.variant);
  const fs::path out = out_dir(opts, cfg), ckpts = ckpt_dir(opts, cfg);

  // Prerequisites are checked before the dataset is read.
  std::optional<TeacherEncoder> teacher;
  std::optional<SemanticInpainter> inpainter;
  const std::string who = "training the " + opts.stage + " stage";
  if (opts.stage == "inpainter" || (opts.stage == "denoiser" && variant != Variant::baseline))
    teacher.emplace(load_teacher(ckpts, cfg, who));
  const bool needs_inpainter = variant == Variant::full && cfg.vprompt_source != "ground_truth";
  if (opts.stage == "denoiser" && needs_inpainter) inpainter.emplace(load_inpainter(ckpts, cfg, who));

  const Dataset ds = load_dataset_for(opts, cfg);
  ensure_dir(out);
  ensure_dir(ckpts);
  if (opts.stage == "teacher") {
    train_teacher_stage(ds, cfg, out, ckpts, log);
  } else if (opts.stage == "inpainter") {
    const SemanticInpainter trained = train_inpainter_stage(ds, *teacher, cfg, out, ckpts, log);
    const CosineGainReport g = cosine_gain_eval(trained, *teacher, ds.test, parse_mask_kind(cfg.eval_mask), cfg.patch,
                                                cfg.hist_bins);
    log << "inpainter: masked-patch cosine " << fmt("%.3f -> %.3f", g.mean_before, g.mean_after) << "\n";
  } else {
    const std::string name = to_string(variant);
    const std::string sig = cfg.denoiser_signature(name);
    DenoiserTrainReport rep;
    const Denoiser den = train_denoiser(ds.train, teacher ? &*teacher : nullptr, inpainter ? &*inpainter : nullptr, cfg,
                                        variant, derive_seed(cfg.seed, 3, 0), &rep,
                                        divergence_dump(out / ("denoiser-" + name + ".last_good.ckpt"), "denoiser",
                                                        cfg, sig));
    save_checkpoint(denoiser_checkpoint(ckpts, name), make_checkpoint("denoiser", fnv1a64(sig), cfg.seed, den.parameters()));
    write_text(out / ("denoiser-" + name + ".loss.log"), loss_log(rep.step_losses));
    log << "denoiser (" << name << "): epoch loss "
        << fmt("%.4f -> %.4f", rep.epoch_mean_losses.front(), rep.epoch_mean_losses.back()) << "\n";
  }
}

void cmd_sample(const CommandOptions& opts, std::ostream& log) {
  const Config cfg = resolve_config(opts);
  const Variant variant = parse_variant(opts.variant);
  const MaskKind kind = parse_mask_kind(opts.mask);
  if (opts.count == 0) throw ConfigError("--count must be at least 1");
  const fs::path out = out_dir(opts, cfg), ckpts = ckpt_dir(opts, cfg);

  std::optional<TeacherEncoder> teacher;
  std::optional<SemanticInpainter> inpainter;
  if (variant != Variant::baseline) teacher.emplace(load_teacher(ckpts, cfg, "sampling"));
  if (variant == Variant::full && cfg.vprompt_source != "ground_truth")
    inpainter.emplace(load_inpainter(ckpts, cfg, "sampling"));
  const Denoiser den = load_denoiser(ckpts, cfg, variant, "sampling");

  Scene scene;
  if (opts.new_seed) {
    const auto cls = static_cast<std::uint32_t>(opts.class_id.value_or(0));
    scene = generate_scene(*opts.new_seed, cls, SceneConfig::from(cfg));
  } else {
    const Dataset ds = load_dataset_for(opts, cfg);
    if (opts.scene >= ds.test.scenes.size())
      throw ContractError("--scene " + std::to_string(opts.scene) + " is out of range for " +
                          std::to_string(ds.test.scenes.size()) + " test scenes");
    scene = ds.test.scenes[opts.scene];
  }
  const std::size_t cls = opts.class_id.value_or(scene.class_id);

  ensure_dir(out);
  write_ppm(out / "input.ppm", scene.image);
  write_npy(out / "input.npy", scene.image);
  Tensor mask_rgb({3, cfg.resolution, cfg.resolution});
  const Tensor& mask = scene_mask(scene, kind);
  for (std::size_t i = 0; i < mask_rgb.numel(); ++i) mask_rgb[i] = mask[i % mask.numel()];
  write_ppm(out / "mask.ppm", mask_rgb);
  write_npy(out / "mask.npy", mask);

  const NoiseSchedule schedule = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
  for (std::size_t i = 0; i < opts.count; ++i) {
    const auto start = std::chrono::steady_clock::now();
    Rng noise(derive_seed(cfg.seed, 0x5A3, i));
    const InpaintResult r = sample_inpaint(scene, cls, kind, teacher ? &*teacher : nullptr,
                                           inpainter ? &*inpainter : nullptr, den, schedule, cfg, noise);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    write_ppm(out / (std::string(name) + ".ppm"), r.image);
    write_npy(out / (std::string(name) + ".npy"), r.image);
    log << name << ": class " << kClassNames[cls] << ", " << to_string(kind) << " mask, "
        << fmt("%.2fs", secs) << "\n";
  }
}

void cmd_eval(const CommandOptions& opts, std::ostream& log) {
  const Config cfg = resolve_config(opts);
  const Variant variant = parse_variant(opts.variant);
  const fs::path out = out_dir(opts, cfg), ckpts = ckpt_dir(opts, cfg);
  const TeacherEncoder teacher = load_teacher(ckpts, cfg, "evaluation");
  const SemanticInpainter inpainter = load_inpainter(ckpts, cfg, "evaluation");
  const Denoiser den = load_denoiser(ckpts, cfg, variant, "evaluation");
  const Dataset ds = load_dataset_for(opts, cfg);
  if (ds.test.scenes.empty()) throw ContractError("evaluation needs a nonempty test split");

  const CosineGainReport g =
      cosine_gain_eval(inpainter, teacher, ds.test, parse_mask_kind(cfg.eval_mask), cfg.patch, cfg.hist_bins);
  VariantMetrics m = evaluate_variant(ds.test, teacher, &inpainter, den, cfg, derive_seed(cfg.seed, 4, 0), env_threads());
  m.seed = 0;
  ensure_dir(out);
  write_text(out / "similarity.tsv", histogram_tsv(g));
  write_text(out / "results.tsv", results_tsv({m}, variant_means({m})));
  log << "similarity: masked-patch cosine " << fmt("%.3f -> %.3f", g.mean_before, g.mean_after) << "\n";
  log << to_string(variant) << ": local_fid_proxy " << fmt("%.4f", m.local_fid_proxy) << ", fid_proxy "
      << fmt("%.4f", m.fid_proxy) << ", alignment " << fmt("%.4f", m.alignment) << ", bg_error "
      << fmt("%g", m.bg_error) << (m.local_unstable ? " (local FID unstable: few masked patches)" : "") << "\n";
}

void cmd_ablate(const CommandOptions& opts, std::ostream& log) {
  const Config cfg = resolve_config(opts);
  const fs::path out = out_dir(opts, cfg), ckpts = ckpt_dir(opts, cfg);
  const Dataset ds = load_dataset_for(opts, cfg);
  if (ds.test.scenes.empty()) throw ContractError("the ablation needs a nonempty test split");
  ensure_dir(out);
  ensure_dir(ckpts);
  const TeacherEncoder teacher = train_teacher_stage(ds, cfg, out, ckpts, log);
  const SemanticInpainter inpainter = train_inpainter_stage(ds, teacher, cfg, out, ckpts, log);

  AblationHooks hooks;
  hooks.log = [&log](const std::string& line) { log << line << "\n" << std::flush; };
  hooks.on_trained = [&](Variant v, std::size_t s, const Denoiser&, const DenoiserTrainReport& rep) {
    write_text(out / ("ablation-" + to_string(v) + "-seed" + std::to_string(s) + ".loss.log"),
               loss_log(rep.step_losses));
  };
  const AblationTable table = run_ablation(ds.train, ds.test, teacher, inpainter, cfg, env_threads(), hooks);
  write_text(out / "results.tsv", results_tsv(table.rows, table.means));

  std::ostringstream summary;
  for (const auto& m : table.means)
    summary << m.variant << (m.failed ? " failed" : fmt(" local_fid_proxy %.4f fid_proxy %.4f alignment %.4f",
                                                          m.local_fid_proxy, m.fid_proxy, m.alignment))
            << "\n";
  const auto find = [&](const char* v) -> const VariantMetrics* {
    for (const auto& m : table.means)
      if (m.variant == v && !m.failed) return &m;
    return nullptr;
  };
  const VariantMetrics *b = find("baseline"), *c = find("context_only"), *f = find("full");
  const bool ordered = b && c && f && f->local_fid_proxy < c->local_fid_proxy && c->local_fid_proxy < b->local_fid_proxy;
  summary << "ordering full < context_only < baseline on local_fid_proxy: " << (ordered ? "yes" : "no") << "\n";
  write_text(out / "ablation.txt", summary.str());
  log << summary.str();
}

}  // namespace catdiff
