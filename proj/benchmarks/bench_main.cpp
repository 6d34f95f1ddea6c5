#include <benchmark/benchmark.h>

#include "catdiff/data.hpp"
#include "catdiff/denoiser.hpp"
#include "catdiff/diffusion.hpp"
#include "catdiff/metrics.hpp"
#include "catdiff/nn.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/rng.hpp"
#include "catdiff/tape.hpp"
#include "catdiff/teacher.hpp"

using namespace catdiff;

namespace {

Tensor randn(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::randn(std::move(s), rng, 1.0f);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = randn({n, n}, 1), b = randn({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.counters["flops"] = benchmark::Counter(2.0 * static_cast<double>(n * n * n), benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_Attention(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const MultiHeadAttention attn(48, 48, 4, rng);
  const Tensor x = randn({tokens, 48}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(attn(x, x, x));
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(64);

void BM_AttentionBackward(benchmark::State& state) {
  Rng rng(5);
  const MultiHeadAttention attn(48, 48, 4, rng);
  const Tensor x = randn({64, 48}, 6);
  for (auto _ : state) {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(attn(x, x, x));
    }
    tape.backward(loss);
  }
}
BENCHMARK(BM_AttentionBackward);

// One reverse step of the default-size denoiser.
void BM_DenoiserForward(benchmark::State& state) {
  const Config cfg;
  const DenoiserConfig dc = DenoiserConfig::from(cfg, Variant::full);
  const Denoiser den(dc, 7);
  Tensor mask({1, dc.grid, dc.grid});
  for (std::size_t i = 0; i < 12; ++i) mask[i * 3] = 1.0f;
  const Tensor z_t = randn({dc.latent_channels, dc.grid, dc.grid}, 8);
  const Tensor masked = mask_latent(randn(z_t.shape(), 9), mask);
  const Tensor vprompt = randn({dc.prompt_rows, dc.prompt_width}, 10);
  for (auto _ : state) benchmark::DoNotOptimize(den.forward(z_t, masked, mask, 50, 1, vprompt));
}
BENCHMARK(BM_DenoiserForward)->Unit(benchmark::kMillisecond);

void BM_TeacherEncode(benchmark::State& state) {
  const TeacherEncoder teacher(TeacherConfig{}, 11);
  const Scene s = generate_scene(1, 3, SceneConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(teacher.encode_image_patches(s.image));
}
BENCHMARK(BM_TeacherEncode)->Unit(benchmark::kMicrosecond);

void BM_FrechetDistance(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const Tensor a = randn({4 * d, d}, 12), b = randn({4 * d, d}, 13);
  const GaussianStats sa = GaussianStats::from_rows(a.data(), d), sb = GaussianStats::from_rows(b.data(), d);
  for (auto _ : state) benchmark::DoNotOptimize(frechet_distance(sa, sb));
}
BENCHMARK(BM_FrechetDistance)->Arg(32)->Arg(64);

void BM_GenerateScene(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(generate_scene(seed++, 2, SceneConfig{}));
}
BENCHMARK(BM_GenerateScene)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
