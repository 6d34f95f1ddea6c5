#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "catdiff/config.hpp"
#include "catdiff/data.hpp"
#include "catdiff/nn.hpp"

namespace catdiff {

class Rng;

struct TeacherConfig {
  std::size_t resolution = 32;
  std::size_t patch = 4;
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t classes = 8;
  float tau = 0.07f;

  static TeacherConfig from(const Config& cfg);
  std::size_t num_patches() const { return (resolution / patch) * (resolution / patch); }
};

/// Patch features of one image plus the prompt feature and the patch mask
/// describing which patches were blanked in the encoded image.
struct FeatureGrid {
  Tensor patch_features;  // [N×d]
  Tensor text_feature;    // [1×d]
  Tensor mask_grid;       // [N], binary
};

/// [3×R×R] -> [N×(3·p²)], patches in row-major grid order, each flattened
/// channel-major.
Tensor image_to_patches(const Tensor& image, std::size_t patch);

/// x ⊙ (1 − m) for a [1×R×R] mask.
Tensor apply_mask(const Tensor& image, const Tensor& mask);

/// Random flip/transpose of the pixel grid plus a random permutation of the
/// color channels. Every shape class is closed under these maps, so the
/// label is preserved.
Tensor augment_symmetry(const Tensor& image, Rng& rng);

/// Small contrastive image/text encoder pair standing in for CLIP.
class TeacherEncoder {
 public:
  TeacherEncoder(const TeacherConfig& config, std::uint64_t seed);

  /// [3×R×R] -> [N×d], final-layer patch features.
  Tensor encode_image_patches(const Tensor& image) const;
  /// L2-normalized [1×d] embedding of a class prompt.
  Tensor encode_text(std::size_t class_id) const;
  /// Normalized [B×d] embeddings for several prompts.
  Tensor encode_texts(std::span<const std::size_t> class_ids) const;
  /// normalize(mean of patch rows) as [1×d].
  Tensor pooled_embedding(const Tensor& patch_features) const;
  Tensor image_embedding(const Tensor& image) const { return pooled_embedding(encode_image_patches(image)); }

  void freeze();
  bool frozen() const { return frozen_; }

  /// All tensors in checkpoint order; read-only use.
  NamedTensors parameters() const;
  /// Tensors for an optimizer. Throws ContractError once frozen.
  NamedTensors trainable_parameters() const;

  /// Zeroes the position table (test hook for position wiring checks).
  void zero_position_table();

  const TeacherConfig& config() const { return config_; }

 private:
  TeacherConfig config_;
  Linear patch_embed_;
  Tensor positions_;
  std::vector<TransformerLayer> layers_;
  LayerNorm final_norm_;
  Tensor text_table_;
  Linear text_proj_;
  bool frozen_ = false;
};

/// Symmetric InfoNCE over the B×B cosine-similarity matrix scaled by 1/tau;
/// row i of each input is a matched pair. Requires B >= 2.
Tensor contrastive_loss(const Tensor& image_embs, const Tensor& text_embs, float tau);

/// Cosine similarity of two nonzero vectors.
float alignment_score(const Tensor& image_region_emb, const Tensor& text_emb);

/// Text->image retrieval accuracy: the corpus is cut into groups holding one
/// scene per class; each prompt must rank its own class's image first.
float retrieval_top1(const TeacherEncoder& teacher, const Corpus& corpus);

struct TeacherTrainReport {
  std::vector<float> step_losses;
  std::vector<float> epoch_train_top1;  // every fifth epoch and the last
  std::size_t epochs_run = 0;
};

struct TrainHooks {
  std::function<void(std::size_t step, float loss)> on_loss;
  /// Called with the last finite parameter values before a NumericError.
  std::function<void(const NamedTensors&)> on_divergence;
};

/// Trains until train-split retrieval top-1 reaches 0.9 or `epochs` elapse,
/// then freezes the encoder.
TeacherEncoder train_teacher(const Corpus& corpus, const Config& config, TeacherTrainReport* report = nullptr,
                             const TrainHooks& hooks = {});

}  // namespace catdiff
