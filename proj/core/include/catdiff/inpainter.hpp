#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "catdiff/config.hpp"
#include "catdiff/data.hpp"
#include "catdiff/metrics.hpp"
#include "catdiff/nn.hpp"
#include "catdiff/teacher.hpp"

namespace catdiff {

struct InpainterConfig {
  std::size_t num_patches = 64;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t layers = 4;

  static InpainterConfig from(const Config& cfg);
};

/// Downsampled visual prompt: [(N/4)×d].
struct VisualPrompt {
  Tensor features;
};

/// Transformer over [patch features + PE + ME ; text feature] that predicts
/// the teacher's clean-image features at every patch position.
class SemanticInpainter {
 public:
  SemanticInpainter(const InpainterConfig& config, std::uint64_t seed);
  SemanticInpainter(const SemanticInpainter& other);
  SemanticInpainter& operator=(const SemanticInpainter&) = delete;

  /// [N×d] prediction; the text token's output is dropped.
  Tensor inpaint_features(const FeatureGrid& grid) const;

  /// The N patch input rows v̂ + PE + ME[mask bit], before the text token is appended.
  Tensor input_tokens(const FeatureGrid& grid) const;

  NamedTensors parameters() const;
  void freeze();
  bool frozen() const { return frozen_; }

  /// Number of inpaint_features calls so far (thread-safe).
  std::size_t forward_count() const { return forward_count_.load(); }
  void reset_forward_count() const { forward_count_.store(0); }

  const InpainterConfig& config() const { return config_; }
  const Tensor& mask_embedding() const { return mask_embed_; }

 private:
  InpainterConfig config_;
  Tensor positions_;   // PE [N×d]
  Tensor mask_embed_;  // ME rows: 0 = unmasked, 1 = masked
  std::vector<TransformerLayer> layers_;
  LayerNorm final_norm_;
  Linear head_;
  bool frozen_ = false;
  mutable std::atomic<std::size_t> forward_count_{0};
};

/// Blend predicted rows into the masked positions, then 2×2 mean-pool the
/// √N×√N grid down to N/4 rows. Parameter-free; not recorded on a tape.
VisualPrompt blend_and_downsample(const Tensor& v_hat, const Tensor& v_bar, const Tensor& mask_grid);

/// Mean squared error over all N·d entries.
Tensor distill_loss(const Tensor& prediction, const Tensor& target);

/// Frozen-teacher features of one scene under one mask kind.
struct SceneFeatures {
  Tensor masked;    // v̂: teacher(x ⊙ (1 − m))
  Tensor clean;     // teacher(x)
  Tensor mask_grid;
};
SceneFeatures scene_features(const TeacherEncoder& teacher, const Scene& scene, MaskKind kind, std::size_t patch);

struct InpainterTrainReport {
  std::vector<float> step_losses;
  std::vector<float> epoch_mean_losses;
};

SemanticInpainter train_inpainter(const Corpus& corpus, const TeacherEncoder& teacher, const Config& config,
                                  InpainterTrainReport* report = nullptr, const TrainHooks& hooks = {});

struct CosineGainReport {
  std::vector<float> before;  // cos(v̂_i, ground truth) per masked patch
  std::vector<float> after;   // cos(v̄_i, ground truth)
  float mean_before = 0.0f;
  float mean_after = 0.0f;
  Histogram hist_before;
  Histogram hist_after;
};

/// Row-wise cosine statistics over masked patches only.
CosineGainReport cosine_gain_eval(const SemanticInpainter& inpainter, const TeacherEncoder& teacher,
                                  const Corpus& test, MaskKind kind, std::size_t patch, std::size_t bins = 20);

}  // namespace catdiff
