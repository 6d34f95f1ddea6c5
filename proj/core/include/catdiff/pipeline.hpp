#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "catdiff/config.hpp"
#include "catdiff/data.hpp"
#include "catdiff/denoiser.hpp"
#include "catdiff/diffusion.hpp"
#include "catdiff/inpainter.hpp"
#include "catdiff/teacher.hpp"

namespace catdiff {

/// Visual prompt ṽ for one scene. Undefined for the baseline; downsample(v̂)
/// for context_only; blend(v̂, v̄) for full, where v̄ comes from the inpainter
/// or, with `ground_truth`, from the teacher on the clean image.
Tensor visual_prompt(Variant variant, const TeacherEncoder* teacher, const SemanticInpainter* inpainter,
                     const Scene& scene, MaskKind kind, std::size_t patch, bool ground_truth = false);

/// Clean diffusion-space latent, masked latent, latent mask and ṽ of one scene.
DiffusionExample make_example(const Scene& scene, MaskKind kind, Variant variant, const TeacherEncoder* teacher,
                              const SemanticInpainter* inpainter, const Config& config, bool ground_truth = false);

struct DenoiserTrainReport {
  std::vector<float> step_losses;
  std::vector<float> epoch_mean_losses;
};

/// Trains one denoiser variant on ε-prediction for `config.denoiser_epochs`.
/// The teacher and inpainter are frozen and only supply ṽ; either may be null
/// when the variant does not read it. `init_seed` seeds weights and the
/// training stream, so variants sharing it differ only in wiring. With
/// `warm_start`, every parameter it shares by name is copied in first; the
/// adapter keeps its zero-initialized output.
Denoiser train_denoiser(const Corpus& corpus, const TeacherEncoder* teacher, const SemanticInpainter* inpainter,
                        const Config& config, Variant variant, std::uint64_t init_seed,
                        DenoiserTrainReport* report = nullptr, const TrainHooks& hooks = {},
                        const Denoiser* warm_start = nullptr);

struct InpaintResult {
  Tensor image;    // composite [3×R×R]
  Tensor decoded;  // raw decoded sample before compositing
  Tensor mask;     // pixel mask used
};

/// T reverse steps from pure noise with fixed conditioning, then
/// output = x ⊙ (1 − m) + decoded ⊙ m by selection. ṽ is computed once.
/// All noise is drawn from `noise`.
InpaintResult sample_inpaint(const Scene& scene, std::size_t class_id, MaskKind kind, const TeacherEncoder* teacher,
                             const SemanticInpainter* inpainter, const Denoiser& denoiser,
                             const NoiseSchedule& schedule, const Config& config, Rng& noise);

struct VariantMetrics {
  std::string variant;
  std::uint64_t seed = 0;
  double fid_proxy = 0.0;
  double local_fid_proxy = 0.0;
  double alignment = 0.0;
  double bg_error = 0.0;
  bool local_unstable = false;
  bool failed = false;
  std::string failure;
};

/// Inpaints the first `config.eval_scenes` test scenes (one noise stream per
/// scene, derived from `eval_seed`) and scores them against the originals.
/// Scenes are sampled on up to `threads` workers; results do not depend on
/// the worker count.
VariantMetrics evaluate_variant(const Corpus& test, const TeacherEncoder& teacher, const SemanticInpainter* inpainter,
                                const Denoiser& denoiser, const Config& config, std::uint64_t eval_seed,
                                std::size_t threads = 1);

struct AblationTable {
  std::vector<VariantMetrics> rows;   // seed-major, variants in baseline, context_only, full order
  std::vector<VariantMetrics> means;  // one per variant over non-failed rows
};

struct AblationHooks {
  std::function<void(const std::string& message)> log;
  /// Called after each denoiser trains, before it is evaluated.
  std::function<void(Variant, std::size_t seed_index, const Denoiser&, const DenoiserTrainReport&)> on_trained;
};

/// Trains three denoisers per ablation seed against a shared teacher and
/// inpainter and evaluates each. With `denoiser_pretrain_epochs` > 0 each
/// seed first trains an adapter-free trunk that all three variants continue
/// from. A failing variant is recorded and the run continues.
AblationTable run_ablation(const Corpus& train, const Corpus& test, const TeacherEncoder& teacher,
                           const SemanticInpainter& inpainter, const Config& config, std::size_t threads = 1,
                           const AblationHooks& hooks = {});

/// Per-variant means of `rows`, in first-seen variant order.
std::vector<VariantMetrics> variant_means(const std::vector<VariantMetrics>& rows);

/// Tab-separated: header, one line per row, then one "mean" line per variant.
std::string results_tsv(const std::vector<VariantMetrics>& rows, const std::vector<VariantMetrics>& means);

/// Tab-separated before/after bin counts of a cosine study plus a "# mean_before ..." trailer.
std::string histogram_tsv(const CosineGainReport& report);

/// Binary PPM (P6), 8 bits per channel, values clamped to [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// NumPy .npy (format 1.0, little-endian float32, C order).
void write_npy(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_npy(const std::filesystem::path& path);

/// Worker count from CATDIFF_THREADS (default 1, minimum 1).
std::size_t env_threads();

}  // namespace catdiff
