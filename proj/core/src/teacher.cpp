#include "catdiff/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "catdiff/adam.hpp"
#include "catdiff/errors.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/rng.hpp"
#include "catdiff/tape.hpp"

namespace catdiff {

TeacherConfig TeacherConfig::from(const Config& cfg) {
  return TeacherConfig{cfg.resolution, cfg.patch,   cfg.width,
                       cfg.heads,      cfg.teacher_layers, cfg.classes,
                       static_cast<float>(cfg.tau)};
}

Tensor image_to_patches(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2))
    throw ContractError("expected a [3×R×R] image, got " + shape_str(image.shape()));
  const std::size_t R = image.dim(1);
  if (patch == 0 || R % patch != 0)
    throw ConfigError("patch size " + std::to_string(patch) + " does not divide resolution " + std::to_string(R));
  const std::size_t G = R / patch;
  const std::size_t width = 3 * patch * patch;
  Tensor out({G * G, width});
  for (std::size_t gy = 0; gy < G; ++gy)
    for (std::size_t gx = 0; gx < G; ++gx) {
      float* row = out.ptr() + (gy * G + gx) * width;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px)
            *row++ = image[ch * R * R + (gy * patch + py) * R + gx * patch + px];
    }
  return out;
}

Tensor apply_mask(const Tensor& image, const Tensor& mask) {
  const std::size_t R = image.dim(1);
  if (mask.shape() != Shape{1, R, R})
    throw ContractError("mask " + shape_str(mask.shape()) + " does not match image " + shape_str(image.shape()));
  Tensor out = image.clone();
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < R * R; ++i)
      if (mask[i] != 0.0f) out[ch * R * R + i] = 0.0f;
  return out;
}

TeacherEncoder::TeacherEncoder(const TeacherConfig& config, std::uint64_t seed) : config_(config) {
  if (config.patch == 0 || config.resolution % config.patch != 0)
    throw ConfigError("teacher: patch must divide resolution");
  Rng rng(derive_seed(seed, 0x7EAC4E5));
  const std::size_t d = config.width;
  patch_embed_ = Linear(3 * config.patch * config.patch, d, rng);
  positions_ = make_param(Tensor::randn({config.num_patches(), d}, rng, 0.1f));
  for (std::size_t l = 0; l < config.layers; ++l) layers_.emplace_back(d, config.heads, rng);
  final_norm_ = LayerNorm(d);
  text_table_ = make_param(Tensor::randn({config.classes, d}, rng, 1.0f));
  text_proj_ = Linear(d, d, rng);
}

Tensor TeacherEncoder::encode_image_patches(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(1) != config_.resolution || image.dim(2) != config_.resolution)
    throw ConfigError("teacher expects images of resolution " + std::to_string(config_.resolution) + ", got " +
                      shape_str(image.shape()));
  Tensor h = add(patch_embed_(image_to_patches(image, config_.patch)), positions_);
  for (const auto& layer : layers_) h = layer(h);
  return final_norm_(h);
}

Tensor TeacherEncoder::encode_text(std::size_t class_id) const {
  const std::size_t ids[] = {class_id};
  return encode_texts(ids);
}

Tensor TeacherEncoder::encode_texts(std::span<const std::size_t> class_ids) const {
  for (auto id : class_ids)
    if (id >= config_.classes)
      throw ContractError("class id " + std::to_string(id) + " out of range for " + std::to_string(config_.classes) +
                          " classes");
  return l2_normalize_rows(text_proj_(gather_rows(text_table_, class_ids)));
}

Tensor TeacherEncoder::pooled_embedding(const Tensor& patch_features) const {
  return l2_normalize_rows(mean_rows(patch_features));
}

void TeacherEncoder::freeze() {
  frozen_ = true;
  set_requires_grad(parameters(), false);
}

NamedTensors TeacherEncoder::parameters() const {
  NamedTensors out;
  patch_embed_.collect(out, "patch_embed");
  out.emplace_back("positions", positions_);
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(out, "layer" + std::to_string(l));
  final_norm_.collect(out, "final_norm");
  out.emplace_back("text_table", text_table_);
  text_proj_.collect(out, "text_proj");
  return out;
}

NamedTensors TeacherEncoder::trainable_parameters() const {
  if (frozen_) throw ContractError("teacher encoder is frozen; its parameters cannot be updated");
  return parameters();
}

void TeacherEncoder::zero_position_table() {
  std::fill(positions_.data().begin(), positions_.data().end(), 0.0f);
}

Tensor contrastive_loss(const Tensor& image_embs, const Tensor& text_embs, float tau) {
  if (image_embs.rank() != 2 || image_embs.shape() != text_embs.shape())
    throw ContractError("contrastive_loss: embeddings must be equal-shaped matrices, got " +
                        shape_str(image_embs.shape()) + " and " + shape_str(text_embs.shape()));
  const std::size_t batch = image_embs.dim(0);
  if (batch < 2) throw ContractError("contrastive_loss needs a batch of at least 2 pairs");
  std::vector<std::size_t> targets(batch);
  std::iota(targets.begin(), targets.end(), std::size_t{0});
  const Tensor logits = scale(matmul(image_embs, transpose(text_embs)), 1.0f / tau);
  const Tensor i2t = cross_entropy(logits, targets);
  const Tensor t2i = cross_entropy(transpose(logits), targets);
  return scale(add(i2t, t2i), 0.5f);
}

float alignment_score(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw ContractError("alignment_score: width mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ContractError("alignment_score: zero vector");
  return static_cast<float>(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0));
}

Tensor augment_symmetry(const Tensor& image, Rng& rng) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2))
    throw ContractError("augment_symmetry: expected [3×R×R], got " + shape_str(image.shape()));
  const std::size_t R = image.dim(1);
  const bool flip_y = rng.coin(), flip_x = rng.coin(), swap = rng.coin();
  static constexpr std::size_t kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  const auto& perm = kPerms[rng.index(6)];
  Tensor out(image.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < R; ++y)
      for (std::size_t x = 0; x < R; ++x) {
        std::size_t sy = flip_y ? R - 1 - y : y, sx = flip_x ? R - 1 - x : x;
        if (swap) std::swap(sy, sx);
        out[(c * R + y) * R + x] = image[(perm[c] * R + sy) * R + sx];
      }
  return out;
}

namespace {

constexpr std::size_t kRetrievalEvery = 5;

std::vector<std::vector<std::size_t>> class_groups(const Corpus& corpus, std::size_t classes) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < corpus.scenes.size(); ++i) by_class[corpus.scenes[i].class_id].push_back(i);
  std::size_t n_groups = corpus.scenes.size();
  for (const auto& v : by_class) n_groups = std::min(n_groups, v.size());
  std::vector<std::vector<std::size_t>> groups(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g)
    for (std::size_t k = 0; k < classes; ++k) groups[g].push_back(by_class[k][g]);
  return groups;
}

}  // namespace

float retrieval_top1(const TeacherEncoder& teacher, const Corpus& corpus) {
  const std::size_t K = teacher.config().classes;
  const auto groups = class_groups(corpus, K);
  if (groups.empty()) throw ContractError("retrieval_top1: corpus lacks a scene of some class");
  std::vector<std::size_t> ids(K);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const Tensor texts = teacher.encode_texts(ids);
  std::size_t hits = 0;
  for (const auto& group : groups) {
    std::vector<Tensor> embs;
    for (auto idx : group) embs.push_back(teacher.image_embedding(corpus.scenes[idx].image));
    const Tensor images = concat_rows(embs);
    const std::size_t d = images.dim(1);
    for (std::size_t k = 0; k < K; ++k) {
      std::size_t best = 0;
      float best_sim = -2.0f;
      for (std::size_t j = 0; j < K; ++j) {
        float sim = 0.0f;
        for (std::size_t c = 0; c < d; ++c) sim += texts[k * d + c] * images[j * d + c];
        if (sim > best_sim) {
          best_sim = sim;
          best = j;
        }
      }
      hits += best == k;
    }
  }
  return static_cast<float>(hits) / static_cast<float>(groups.size() * K);
}

TeacherEncoder train_teacher(const Corpus& corpus, const Config& config, TeacherTrainReport* report,
                             const TrainHooks& hooks) {
  TeacherEncoder teacher(TeacherConfig::from(config), derive_seed(config.seed, 1));
  const std::size_t K = config.classes;
  auto groups = class_groups(corpus, K);
  if (groups.empty()) throw ContractError("train_teacher: corpus must contain every class");

  Adam adam(teacher.trainable_parameters(), AdamConfig{static_cast<float>(config.lr)});
  Rng rng(derive_seed(config.seed, 0x7EAC4E5, 1));
  std::vector<std::size_t> ids(K);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  TeacherTrainReport local;
  TeacherTrainReport& rep = report ? *report : local;
  NamedTensors last_good;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.teacher_epochs; ++epoch) {
    // Reshuffle which scene of each class lands in which group.
    std::vector<std::vector<std::size_t>> by_class(K);
    for (const auto& g : groups)
      for (std::size_t k = 0; k < K; ++k) by_class[k].push_back(g[k]);
    for (auto& v : by_class)
      for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);

    for (std::size_t g = 0; g < groups.size(); ++g) {
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        std::vector<Tensor> embs;
        for (std::size_t k = 0; k < K; ++k)
          embs.push_back(teacher.image_embedding(augment_symmetry(corpus.scenes[by_class[k][g]].image, rng)));
        loss = contrastive_loss(concat_rows(embs), teacher.encode_texts(ids), teacher.config().tau);
      }
      if (!std::isfinite(loss.item())) {
        if (hooks.on_divergence && !last_good.empty()) hooks.on_divergence(last_good);
        throw NumericError("teacher training diverged at step " + std::to_string(step));
      }
      tape.backward(loss);
      if (hooks.on_divergence) {
        last_good.clear();
        for (const auto& [name, t] : teacher.parameters()) last_good.emplace_back(name, t.clone());
      }
      adam.step();
      tape.clear();
      rep.step_losses.push_back(loss.item());
      if (hooks.on_loss) hooks.on_loss(step, loss.item());
      ++step;
    }
    rep.epochs_run = epoch + 1;
    // Retrieval costs about as much as an epoch of training, so check periodically.
    if (rep.epochs_run % kRetrievalEvery == 0 || rep.epochs_run == config.teacher_epochs) {
      rep.epoch_train_top1.push_back(retrieval_top1(teacher, corpus));
      if (rep.epoch_train_top1.back() >= 0.9f) break;
    }
  }
  teacher.freeze();
  return teacher;
}

}  // namespace catdiff
