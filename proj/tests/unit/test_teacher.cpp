#include <cmath>
#include <numeric>

#include "catdiff/errors.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/rng.hpp"
#include "catdiff/teacher.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace catdiff;

namespace {

std::pair<Corpus, Corpus> tiny_corpus() {
  const Config c = testutil::tiny_config();
  return build_corpus(c.seed, c.n_train, c.n_test, SceneConfig::from(c));
}

double row_norm(const Tensor& t, std::size_t row, std::size_t width) {
  double s = 0.0;
  for (std::size_t j = 0; j < width; ++j) s += static_cast<double>(t[row * width + j]) * t[row * width + j];
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("encode_image_patches shape and determinism") {
  const TeacherEncoder teacher(TeacherConfig{}, 1);
  const Scene s = generate_scene(1, 0, SceneConfig{});
  const Tensor a = teacher.encode_image_patches(s.image);
  CHECK(a.shape() == Shape{64, 32});
  CHECK(bit_equal(a, teacher.encode_image_patches(s.image)));
  CHECK_THROWS_AS(teacher.encode_image_patches(Tensor::zeros({3, 16, 16})), ConfigError);
}

TEST_CASE("image_to_patches layout") {
  Tensor img({3, 4, 4});
  for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>(i);
  const Tensor p = image_to_patches(img, 2);
  CHECK(p.shape() == Shape{4, 12});
  // Patch 1 is the top-right 2×2 block; first entries are channel 0 rows 0..1, cols 2..3.
  CHECK(p[12 + 0] == 2.0f);
  CHECK(p[12 + 1] == 3.0f);
  CHECK(p[12 + 2] == 6.0f);
  CHECK(p[12 + 3] == 7.0f);
  CHECK(p[12 + 4] == 18.0f);
}

TEST_CASE("encode_text is normalized, deterministic and range-checked") {
  const TeacherEncoder teacher(TeacherConfig{}, 2);
  for (std::size_t k = 0; k < 8; ++k) {
    const Tensor e = teacher.encode_text(k);
    CHECK(std::abs(row_norm(e, 0, 32) - 1.0) < 1e-5);
    CHECK(bit_equal(e, teacher.encode_text(k)));
  }
  CHECK_THROWS_AS(teacher.encode_text(8), ContractError);
}

TEST_CASE("pooled image embedding is normalized") {
  const TeacherEncoder teacher(TeacherConfig{}, 3);
  const Tensor e = teacher.image_embedding(generate_scene(4, 2, SceneConfig{}).image);
  CHECK(std::abs(row_norm(e, 0, 32) - 1.0) < 1e-5);
}

TEST_CASE("contrastive_loss examples") {
  SUBCASE("equal similarities give ln B") {
    for (std::size_t b : {2u, 4u, 7u}) {
      Tensor same({b, 3}, 0.0f);
      for (std::size_t i = 0; i < b; ++i) same[i * 3] = 1.0f;
      CHECK(contrastive_loss(same, same, 0.07f).item() == doctest::Approx(std::log(static_cast<double>(b))).epsilon(1e-5));
    }
  }
  SUBCASE("matched pairs at ±1 with tau 0.1 are nearly free") {
    const Tensor img({2, 2}, std::vector<float>{1, 0, -1, 0});
    CHECK(contrastive_loss(img, img, 0.1f).item() < 1e-3f);
  }
  SUBCASE("loss is nonnegative on random rows") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor a = l2_normalize_rows(testutil::random_tensor({5, 8}, seed));
      const Tensor b = l2_normalize_rows(testutil::random_tensor({5, 8}, seed + 100));
      CHECK(contrastive_loss(a, b, 0.07f).item() >= 0.0f);
    }
  }
  SUBCASE("a single pair is rejected") {
    const Tensor one({1, 2}, std::vector<float>{1, 0});
    CHECK_THROWS_AS(contrastive_loss(one, one, 0.07f), ContractError);
  }
}

TEST_CASE("alignment_score examples") {
  const Tensor a({2}, std::vector<float>{0.6f, 0.8f});
  CHECK(alignment_score(a, a) == doctest::Approx(1.0).epsilon(1e-6));
  const Tensor b({2}, std::vector<float>{-0.8f, 0.6f});
  CHECK(std::abs(alignment_score(a, b)) < 1e-6f);
  CHECK_THROWS_AS(alignment_score(a, Tensor::zeros({2})), ContractError);
}

TEST_CASE("position-free encoder is permutation-covariant over patches") {
  TeacherEncoder teacher(TeacherConfig{}, 5);
  teacher.zero_position_table();
  const Tensor img = generate_scene(6, 1, SceneConfig{}).image;
  const std::size_t g = 8, p = 4, R = 32;
  std::vector<std::size_t> perm(g * g);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(9);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  // Patch perm[i] of the shuffled image is patch i of the original.
  Tensor shuffled({3, R, R});
  for (std::size_t i = 0; i < g * g; ++i) {
    const std::size_t sy = i / g, sx = i % g, dy = perm[i] / g, dx = perm[i] % g;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          shuffled[(c * R + dy * p + y) * R + dx * p + x] = img[(c * R + sy * p + y) * R + sx * p + x];
  }
  const Tensor a = teacher.encode_image_patches(img), b = teacher.encode_image_patches(shuffled);
  float worst = 0.0f;
  for (std::size_t i = 0; i < g * g; ++i)
    for (std::size_t j = 0; j < 32; ++j) worst = std::max(worst, std::abs(a[i * 32 + j] - b[perm[i] * 32 + j]));
  CHECK(worst < 1e-4f);
}

TEST_CASE("trained teacher: freezing, context mixing, determinism") {
  const auto [train, test] = tiny_corpus();
  const Config cfg = testutil::tiny_config();
  TeacherTrainReport report;
  const TeacherEncoder teacher = train_teacher(train, cfg, &report);
  CHECK(teacher.frozen());
  CHECK_THROWS_AS(teacher.trainable_parameters(), ContractError);
  CHECK(report.epochs_run == cfg.teacher_epochs);
  CHECK_FALSE(report.step_losses.empty());
  CHECK_FALSE(report.epoch_train_top1.empty());

  // Blanking one patch moves features of other patches too.
  const Scene& s = test.scenes[0];
  Tensor mask({1, 16, 16});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) mask[y * 16 + x] = 1.0f;
  const Tensor clean = teacher.encode_image_patches(s.image);
  const Tensor masked = teacher.encode_image_patches(apply_mask(s.image, mask));
  std::size_t changed_rows = 0;
  for (std::size_t i = 1; i < 16; ++i) {
    bool diff = false;
    for (std::size_t j = 0; j < 16; ++j) diff |= clean[i * 16 + j] != masked[i * 16 + j];
    changed_rows += diff;
  }
  CHECK(changed_rows >= 1);

  // Distinct classes get distinct prompts.
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b)
      CHECK(alignment_score(teacher.encode_text(a), teacher.encode_text(b)) < 1.0f - 1e-3f);

  const TeacherEncoder again = train_teacher(train, cfg);
  CHECK(parameter_hash(teacher.parameters()) == parameter_hash(again.parameters()));

  const float top1 = retrieval_top1(teacher, test);
  CHECK(top1 >= 0.0f);
  CHECK(top1 <= 1.0f);
}

TEST_CASE("augment_symmetry preserves pixel multiset per image") {
  const Tensor img = generate_scene(7, 3, SceneConfig{}).image;
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    const Tensor aug = augment_symmetry(img, rng);
    CHECK(aug.shape() == img.shape());
    std::vector<float> a(img.data().begin(), img.data().end()), b(aug.data().begin(), aug.data().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}
