#include "catdiff/inpainter.hpp"

#include <cmath>
#include <numeric>

#include "catdiff/adam.hpp"
#include "catdiff/errors.hpp"
#include "catdiff/metrics.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/rng.hpp"
#include "catdiff/tape.hpp"

namespace catdiff {

InpainterConfig InpainterConfig::from(const Config& cfg) {
  return InpainterConfig{cfg.num_patches(), cfg.width, cfg.heads, cfg.inpainter_layers};
}

SemanticInpainter::SemanticInpainter(const InpainterConfig& config, std::uint64_t seed) : config_(config) {
  Rng rng(derive_seed(seed, 0x1A9A1E7));
  const std::size_t d = config.width;
  positions_ = make_param(Tensor::randn({config.num_patches, d}, rng, 0.1f));
  mask_embed_ = make_param(Tensor::randn({2, d}, rng, 0.1f));
  for (std::size_t l = 0; l < config.layers; ++l) layers_.emplace_back(d, config.heads, rng);
  final_norm_ = LayerNorm(d);
  head_ = Linear(d, d, rng);
}

SemanticInpainter::SemanticInpainter(const SemanticInpainter& other)
    : SemanticInpainter(other.config_, 0) {
  assign_parameters(parameters(), other.parameters());
  if (other.frozen_) freeze();
}

Tensor SemanticInpainter::input_tokens(const FeatureGrid& grid) const {
  const std::size_t N = config_.num_patches;
  if (grid.patch_features.rank() != 2 || grid.patch_features.dim(0) != N || grid.patch_features.dim(1) != config_.width)
    throw ConfigError("inpainter expects [" + std::to_string(N) + "×" + std::to_string(config_.width) +
                      "] patch features, got " + shape_str(grid.patch_features.shape()));
  if (grid.mask_grid.numel() != N) throw ConfigError("inpainter: mask grid has wrong patch count");
  std::vector<std::size_t> bits(N);
  for (std::size_t i = 0; i < N; ++i) bits[i] = grid.mask_grid[i] != 0.0f ? 1 : 0;
  return add(add(grid.patch_features, positions_), gather_rows(mask_embed_, bits));
}

Tensor SemanticInpainter::inpaint_features(const FeatureGrid& grid) const {
  forward_count_.fetch_add(1);
  const std::size_t N = config_.num_patches;
  if (grid.text_feature.numel() != config_.width) throw ConfigError("inpainter: text feature width mismatch");
  const Tensor text = grid.text_feature.rank() == 2 ? grid.text_feature : grid.text_feature.reshaped({1, config_.width});
  const Tensor parts[] = {input_tokens(grid), text};
  Tensor h = concat_rows(parts);
  for (const auto& layer : layers_) h = layer(h);
  return head_(slice_rows(final_norm_(h), 0, N));
}

NamedTensors SemanticInpainter::parameters() const {
  NamedTensors out;
  out.emplace_back("positions", positions_);
  out.emplace_back("mask_embed", mask_embed_);
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(out, "layer" + std::to_string(l));
  final_norm_.collect(out, "final_norm");
  head_.collect(out, "head");
  return out;
}

void SemanticInpainter::freeze() {
  frozen_ = true;
  set_requires_grad(parameters(), false);
}

VisualPrompt blend_and_downsample(const Tensor& v_hat, const Tensor& v_bar, const Tensor& mask_grid) {
  if (v_hat.rank() != 2 || v_hat.shape() != v_bar.shape())
    throw ContractError("blend_and_downsample: v_hat " + shape_str(v_hat.shape()) + " and v_bar " +
                        shape_str(v_bar.shape()) + " must be equal-shaped matrices");
  const std::size_t N = v_hat.dim(0), d = v_hat.dim(1);
  if (mask_grid.numel() != N) throw ContractError("blend_and_downsample: mask grid length mismatch");
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(N))));
  if (side * side != N) throw ConfigError("blend_and_downsample: patch count " + std::to_string(N) + " is not square");
  if (side % 2 != 0) throw ConfigError("blend_and_downsample: grid side " + std::to_string(side) + " is odd");

  // Select rather than multiply so unmasked rows are copied bit-for-bit.
  std::vector<const float*> rows(N);
  for (std::size_t i = 0; i < N; ++i) rows[i] = (mask_grid[i] != 0.0f ? v_bar.ptr() : v_hat.ptr()) + i * d;

  const std::size_t half = side / 2;
  VisualPrompt out{Tensor({half * half, d})};
  for (std::size_t gy = 0; gy < half; ++gy)
    for (std::size_t gx = 0; gx < half; ++gx) {
      const std::size_t r00 = (2 * gy) * side + 2 * gx;
      const float* a = rows[r00];
      const float* b = rows[r00 + 1];
      const float* c = rows[r00 + side];
      const float* e = rows[r00 + side + 1];
      float* dst = out.features.ptr() + (gy * half + gx) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] = (a[j] + b[j] + c[j] + e[j]) * 0.25f;
    }
  return out;
}

Tensor distill_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape())
    throw ContractError("distill_loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                        shape_str(target.shape()));
  return mse(prediction, target);
}

SceneFeatures scene_features(const TeacherEncoder& teacher, const Scene& scene, MaskKind kind, std::size_t patch) {
  const Tensor& mask = scene_mask(scene, kind);
  return SceneFeatures{teacher.encode_image_patches(apply_mask(scene.image, mask)),
                       teacher.encode_image_patches(scene.image), mask_to_patch_grid(mask, patch)};
}

SemanticInpainter train_inpainter(const Corpus& corpus, const TeacherEncoder& teacher, const Config& config,
                                  InpainterTrainReport* report, const TrainHooks& hooks) {
  if (!teacher.frozen()) throw ContractError("train_inpainter: teacher must be frozen");
  if (corpus.scenes.empty()) throw ContractError("train_inpainter: empty corpus");
  SemanticInpainter inpainter(InpainterConfig::from(config), derive_seed(config.seed, 2));

  // The teacher is frozen, so its features are computed once per scene and mask kind.
  struct Cached {
    SceneFeatures seg, bbox;
    Tensor text;
  };
  std::vector<Cached> cache;
  cache.reserve(corpus.scenes.size());
  for (const auto& s : corpus.scenes) {
    Cached c{scene_features(teacher, s, MaskKind::seg, config.patch), {}, teacher.encode_text(s.class_id)};
    c.bbox = SceneFeatures{teacher.encode_image_patches(apply_mask(s.image, s.bbox_mask)), c.seg.clean,
                           mask_to_patch_grid(s.bbox_mask, config.patch)};
    cache.push_back(std::move(c));
  }

  Adam adam(inpainter.parameters(), AdamConfig{static_cast<float>(config.lr)});
  Rng rng(derive_seed(config.seed, 0x1A9A1E7, 1));
  InpainterTrainReport local;
  InpainterTrainReport& rep = report ? *report : local;
  std::vector<std::size_t> order(corpus.scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = config.batch_size;
  NamedTensors last_good;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.inpainter_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        std::vector<Tensor> losses;
        for (std::size_t b = start; b < end; ++b) {
          const Cached& c = cache[order[b]];
          const SceneFeatures& f = rng.coin() ? c.seg : c.bbox;
          const FeatureGrid grid{f.masked, c.text, f.mask_grid};
          losses.push_back(distill_loss(inpainter.inpaint_features(grid), f.clean));
        }
        loss = scale(sum(concat_rows(losses)), 1.0f / static_cast<float>(losses.size()));
      }
      if (!std::isfinite(loss.item())) {
        if (hooks.on_divergence && !last_good.empty()) hooks.on_divergence(last_good);
        throw NumericError("inpainter training produced a non-finite loss at step " + std::to_string(step));
      }
      tape.backward(loss);
      if (hooks.on_divergence) {
        last_good.clear();
        for (const auto& [name, t] : inpainter.parameters()) last_good.emplace_back(name, t.clone());
      }
      adam.step();
      rep.step_losses.push_back(loss.item());
      if (hooks.on_loss) hooks.on_loss(step, loss.item());
      epoch_total += loss.item();
      ++epoch_steps;
      ++step;
    }
    rep.epoch_mean_losses.push_back(static_cast<float>(epoch_total / static_cast<double>(epoch_steps)));
  }
  inpainter.freeze();
  inpainter.reset_forward_count();
  return inpainter;
}

namespace {
float row_cosine(const Tensor& a, const Tensor& b, std::size_t row) {
  const std::size_t d = a.dim(1);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double x = a[row * d + j], y = b[row * d + j];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) return 0.0f;
  return static_cast<float>(dot / std::sqrt(na * nb));
}
}  // namespace

CosineGainReport cosine_gain_eval(const SemanticInpainter& inpainter, const TeacherEncoder& teacher,
                                  const Corpus& test, MaskKind kind, std::size_t patch, std::size_t bins) {
  CosineGainReport rep;
  for (const auto& s : test.scenes) {
    const SceneFeatures f = scene_features(teacher, s, kind, patch);
    const Tensor pred = inpainter.inpaint_features(FeatureGrid{f.masked, teacher.encode_text(s.class_id), f.mask_grid});
    for (std::size_t i = 0; i < f.mask_grid.numel(); ++i) {
      if (f.mask_grid[i] == 0.0f) continue;
      rep.before.push_back(row_cosine(f.masked, f.clean, i));
      rep.after.push_back(row_cosine(pred, f.clean, i));
    }
  }
  if (rep.before.empty()) throw ContractError("cosine_gain_eval: no masked patches in the test corpus");
  const SimilarityHistograms h = similarity_histogram(rep.before, rep.after, bins);
  rep.hist_before = h.before;
  rep.hist_after = h.after;
  rep.mean_before = h.mean_before;
  rep.mean_after = h.mean_after;
  return rep;
}

}  // namespace catdiff
