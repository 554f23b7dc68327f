#include <benchmark/benchmark.h>

#include "hcma/align.hpp"
#include "hcma/diffusion.hpp"
#include "hcma/graph.hpp"
#include "hcma/rng.hpp"
#include "hcma/scene.hpp"
#include "hcma/towers.hpp"

using namespace hcma;

namespace {

Tensor random_latent(Rng& rng, int h) {
  Tensor z({1, 4, h, h});
  rng.fill_normal(std::span<float>(z.ptr(), z.numel()));
  return z;
}

}  // namespace

static void BM_matmul_512(benchmark::State& state) {
  Rng rng(1);
  Tensor a({512, 512}), b({512, 512});
  rng.fill_normal(std::span<float>(a.ptr(), a.numel()));
  rng.fill_normal(std::span<float>(b.ptr(), b.numel()));
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(g.matmul(a, b));
  }
}
BENCHMARK(BM_matmul_512);

static void BM_render_scene_128(benchmark::State& state) {
  const Scene s = sample_scene(DatasetConfig{}, 42);
  for (auto _ : state) benchmark::DoNotOptimize(render(s, 128));
}
BENCHMARK(BM_render_scene_128);

// ViT forward over one 16x16 latent (reference geometry: grid 4, 17 tokens).
static void BM_vit_encode(benchmark::State& state) {
  Rng rng(1);
  const AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  const Tensor z = random_latent(rng, 16);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(encode_latent(g, p, z));
  }
}
BENCHMARK(BM_vit_encode);

// One guided alignment update (forward + latent gradient) for a single scene.
static void BM_align_step(benchmark::State& state) {
  Rng rng(1);
  const AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  const TowerParams towers = TowerParams::init(rng);
  const Scene s = sample_scene(DatasetConfig{}, 42);
  const Tensor label_mat = label_embeddings(towers);
  const AlignTargets tg =
      make_align_targets(s, embed_text(towers, s.caption_tokens), label_mat, 4);
  const Tensor z = random_latent(rng, 16);
  const AlignmentConfig acfg;
  for (auto _ : state) benchmark::DoNotOptimize(align_step(p, z, {tg}, acfg));
}
BENCHMARK(BM_align_step);

// One denoiser forward (the other half of a sampling step).
static void BM_unet_forward(benchmark::State& state) {
  Rng rng(1);
  const UNetParams p = UNetParams::init(rng);
  const TowerParams towers = TowerParams::init(rng);
  const Scene s = sample_scene(DatasetConfig{}, 42);
  const Tensor label_mat = label_embeddings(towers);
  Graph gc;
  const Tensor ctx = unet_context(gc, p, {LayoutSpec::of(s)}, label_mat);
  const Tensor z = random_latent(rng, 16);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(unet_forward(g, p, z, {500}, ctx));
  }
}
BENCHMARK(BM_unet_forward);

BENCHMARK_MAIN();
