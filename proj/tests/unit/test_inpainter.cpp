#include <cmath>

#include "catdiff/errors.hpp"
#include "catdiff/gradcheck.hpp"
#include "catdiff/inpainter.hpp"
#include "catdiff/ops.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace catdiff;
using testutil::random_tensor;

namespace {

InpainterConfig toy(std::size_t n = 4, std::size_t width = 8) { return InpainterConfig{n, width, 2, 1}; }

FeatureGrid toy_grid(std::size_t n, std::size_t width, std::uint64_t seed) {
  Tensor mask({n});
  for (std::size_t i = 0; i < n; i += 3) mask[i] = 1.0f;
  return FeatureGrid{random_tensor({n, width}, seed), l2_normalize_rows(random_tensor({1, width}, seed + 1)), mask};
}

// Independent 2×2 mean pool of a blended grid.
Tensor pooled_oracle(const Tensor& hat, const Tensor& bar, const Tensor& m) {
  const std::size_t n = hat.dim(0), d = hat.dim(1), side = static_cast<std::size_t>(std::lround(std::sqrt(n)));
  Tensor out({n / 4, d});
  for (std::size_t oy = 0; oy < side / 2; ++oy)
    for (std::size_t ox = 0; ox < side / 2; ++ox)
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = (2 * oy + dy) * side + 2 * ox + dx;
            acc += m[i] != 0.0f ? bar[i * d + j] : hat[i * d + j];
          }
        out[(oy * side / 2 + ox) * d + j] = static_cast<float>(acc / 4.0);
      }
  return out;
}

}  // namespace

TEST_CASE("inpaint_features shape and determinism") {
  const SemanticInpainter inp(toy(16, 8), 1);
  const FeatureGrid g = toy_grid(16, 8, 2);
  const Tensor out = inp.inpaint_features(g);
  CHECK(out.shape() == Shape{16, 8});
  CHECK(bit_equal(out, inp.inpaint_features(g)));
  CHECK(inp.forward_count() == 2);

  FeatureGrid wrong = toy_grid(9, 8, 3);
  CHECK_THROWS_AS(inp.inpaint_features(wrong), ConfigError);
}

TEST_CASE("mask embedding addend switches by exactly e_masked − e_unmasked") {
  const SemanticInpainter inp(toy(16, 8), 4);
  const Tensor pe = inp.parameters()[0].second;
  FeatureGrid g = toy_grid(16, 8, 5);
  g.patch_features = scale(pe, -1.0f);  // v̂ + PE == 0 exactly
  g.mask_grid = Tensor::zeros({16});
  const Tensor off = inp.input_tokens(g);
  g.mask_grid[5] = 1.0f;
  const Tensor on = inp.input_tokens(g);
  const Tensor& me = inp.mask_embedding();
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      if (i == 5) {
        CHECK(on[i * 8 + j] - off[i * 8 + j] == me[8 + j] - me[j]);
      } else {
        CHECK(on[i * 8 + j] == off[i * 8 + j]);
      }
    }
}

TEST_CASE("blend_and_downsample examples") {
  const Tensor hat = random_tensor({16, 5}, 1), bar = random_tensor({16, 5}, 2);
  const Tensor zeros = Tensor::zeros({16}), ones = Tensor::ones({16});
  CHECK(bit_equal(blend_and_downsample(hat, bar, zeros).features, blend_and_downsample(hat, hat, ones).features));
  CHECK(bit_equal(blend_and_downsample(hat, bar, ones).features, blend_and_downsample(bar, bar, zeros).features));
  CHECK(max_abs_diff(blend_and_downsample(hat, bar, zeros).features, pooled_oracle(hat, hat, zeros)) < 1e-6f);

  // N = 4, mask [1,0,0,0]: single row (v̄₀ + v̂₁ + v̂₂ + v̂₃)/4.
  const Tensor h4 = random_tensor({4, 3}, 3), b4 = random_tensor({4, 3}, 4);
  const Tensor m4({4}, std::vector<float>{1, 0, 0, 0});
  const Tensor out = blend_and_downsample(h4, b4, m4).features;
  CHECK(out.shape() == Shape{1, 3});
  for (std::size_t j = 0; j < 3; ++j) {
    const double expect = (static_cast<double>(b4[j]) + h4[3 + j] + h4[6 + j] + h4[9 + j]) / 4.0;
    CHECK(std::abs(out[j] - expect) < 1e-6);
  }

  CHECK_THROWS_AS(blend_and_downsample(random_tensor({9, 2}, 1), random_tensor({9, 2}, 2), Tensor::zeros({9})),
                  ConfigError);
  CHECK_THROWS_AS(blend_and_downsample(random_tensor({8, 2}, 1), random_tensor({8, 2}, 2), Tensor::zeros({8})),
                  ConfigError);
  CHECK_THROWS_AS(blend_and_downsample(hat, random_tensor({16, 4}, 2), zeros), ContractError);
}

TEST_CASE("blend_and_downsample matches the oracle and is linear") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor m({64});
    for (auto& v : m.data()) v = rng.coin() ? 1.0f : 0.0f;
    const Tensor a = random_tensor({64, 6}, seed), b = random_tensor({64, 6}, seed + 50);
    const Tensor c = random_tensor({64, 6}, seed + 100), e = random_tensor({64, 6}, seed + 150);
    const Tensor whole = blend_and_downsample(add(a, b), add(c, e), m).features;
    const Tensor parts = add(blend_and_downsample(a, c, m).features, blend_and_downsample(b, e, m).features);
    CHECK(max_abs_diff(whole, parts) < 1e-5f);
    CHECK(max_abs_diff(blend_and_downsample(a, c, m).features, pooled_oracle(a, c, m)) < 1e-6f);
  }
}

TEST_CASE("distill_loss examples") {
  const Tensor t = random_tensor({4, 3}, 1);
  CHECK(distill_loss(t, t).item() == 0.0f);
  Tensor shifted = t.clone();
  for (auto& v : shifted.data()) v += 1.0f;
  CHECK(distill_loss(shifted, t).item() == doctest::Approx(1.0).epsilon(1e-6));
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    CHECK(distill_loss(random_tensor({4, 3}, seed), t).item() >= 0.0f);
  CHECK_THROWS_AS(distill_loss(t, random_tensor({3, 4}, 2)), ContractError);
}

TEST_CASE("gradient audit through the inpainter loss on four patches") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SemanticInpainter inp(toy(4, 8), seed);
    const FeatureGrid g = toy_grid(4, 8, seed + 10);
    const Tensor target = random_tensor({4, 8}, seed + 20);
    const float err = finite_diff_check(
        [&](const Tensor& v) { return distill_loss(inp.inpaint_features(FeatureGrid{v, g.text_feature, g.mask_grid}), target); },
        g.patch_features, 1e-2f);
    CHECK(err < 1e-2f);
    const float err_text = finite_diff_check(
        [&](const Tensor& c) { return distill_loss(inp.inpaint_features(FeatureGrid{g.patch_features, c, g.mask_grid}), target); },
        g.text_feature, 1e-2f);
    CHECK(err_text < 1e-2f);
  }
}

TEST_CASE("inpainter training: frozen teacher, determinism, cosine report") {
  Config cfg = testutil::tiny_config();
  const auto [train, test] = build_corpus(cfg.seed, cfg.n_train, cfg.n_test, SceneConfig::from(cfg));
  const TeacherEncoder teacher = train_teacher(train, cfg);
  const auto before_hash = parameter_hash(teacher.parameters());

  InpainterTrainReport report;
  const SemanticInpainter inp = train_inpainter(train, teacher, cfg, &report);
  CHECK(parameter_hash(teacher.parameters()) == before_hash);
  CHECK(report.epoch_mean_losses.size() == cfg.inpainter_epochs);
  for (float l : report.step_losses) CHECK(std::isfinite(l));

  const SemanticInpainter again = train_inpainter(train, teacher, cfg);
  CHECK(parameter_hash(inp.parameters()) == parameter_hash(again.parameters()));

  const CosineGainReport rep = cosine_gain_eval(inp, teacher, test, MaskKind::seg, cfg.patch, 10);
  CHECK(rep.before.size() == rep.after.size());
  CHECK_FALSE(rep.before.empty());
  std::size_t total = 0;
  for (auto c : rep.hist_after.counts) total += c;
  CHECK(total == rep.after.size());

  TeacherEncoder unfrozen(TeacherConfig::from(cfg), 1);
  CHECK_THROWS_AS(train_inpainter(train, unfrozen, cfg), ContractError);
}

TEST_CASE("untrained inpainter predictions are uncorrelated with the truth") {
  Config cfg;
  cfg.n_train = 8;
  cfg.n_test = 32;
  const auto [train, test] = build_corpus(3, cfg.n_train, cfg.n_test, SceneConfig::from(cfg));
  TeacherEncoder teacher(TeacherConfig::from(cfg), 1);
  teacher.freeze();
  // One random head maps the teacher's shared feature direction to one random
  // direction, so a single draw is a single cosine sample; average over draws.
  double sum_after = 0.0;
  const int draws = 12;
  for (int k = 0; k < draws; ++k) {
    const SemanticInpainter inp(InpainterConfig::from(cfg), static_cast<std::uint64_t>(k));
    const CosineGainReport rep = cosine_gain_eval(inp, teacher, test, MaskKind::seg, cfg.patch);
    CHECK(rep.mean_after < rep.mean_before);
    sum_after += rep.mean_after;
  }
  CHECK(std::abs(sum_after / draws) <= 0.1);
}

TEST_CASE("training loss halves over a short run") {
  Config cfg = testutil::tiny_config();
  cfg.n_train = 32;
  cfg.inpainter_epochs = 12;
  const auto [train, test] = build_corpus(cfg.seed, cfg.n_train, cfg.n_test, SceneConfig::from(cfg));
  const TeacherEncoder teacher = train_teacher(train, cfg);
  InpainterTrainReport report;
  train_inpainter(train, teacher, cfg, &report);
  CHECK(report.epoch_mean_losses.back() < 0.5f * report.epoch_mean_losses.front());
}
