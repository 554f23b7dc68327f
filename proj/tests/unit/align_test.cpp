#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hcma/align.hpp"
#include "hcma/gradcheck.hpp"

using namespace hcma;

namespace {

Tensor randn(Rng& rng, Shape s) {
  Tensor t(std::move(s));
  rng.fill_normal(std::span<float>(t.ptr(), t.numel()));
  return t;
}

TensorD randn_d(Rng& rng, Shape s) {
  TensorD t(std::move(s));
  rng.fill_normal(std::span<double>(t.ptr(), t.numel()));
  return t;
}

std::vector<AlignTargetsT<double>> cast_targets(const std::vector<AlignTargets>& ts) {
  std::vector<AlignTargetsT<double>> out;
  for (const auto& t : ts) {
    AlignTargetsT<double> d;
    d.f_c = tensor_cast<double>(t.f_c);
    d.labels = tensor_cast<double>(t.labels);
    d.box_weights = tensor_cast<double>(t.box_weights);
    out.push_back(std::move(d));
  }
  return out;
}

AlignTargets random_targets(Rng& rng, int grid, int M) {
  AlignTargets t;
  t.f_c = randn(rng, {kEmbedDim});
  t.labels = randn(rng, {M, kEmbedDim});
  std::vector<Box> boxes;
  for (int i = 0; i < M; ++i) {
    Box b;
    b.x0 = rng.uniform() * 0.5;
    b.y0 = rng.uniform() * 0.5;
    b.x1 = b.x0 + 0.15 + rng.uniform() * 0.3;
    b.y1 = b.y0 + 0.15 + rng.uniform() * 0.3;
    boxes.push_back(b);
  }
  t.box_weights = M > 0 ? box_map(boxes, grid).reshaped({int64_t(grid) * grid, M})
                        : Tensor({int64_t(grid) * grid, 0});
  return t;
}

}  // namespace

TEST_CASE("tokenize_latent: 4x16x16 latent gives 17 tokens of width 512") {
  Rng rng(1);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  Graph g;
  Tensor z = randn(rng, {2, 4, 16, 16});
  Tensor tok = tokenize_latent(g, p, z);
  CHECK(tok.shape == Shape{2, 17, 512});
  CHECK_THROWS_AS(tokenize_latent(g, p, randn(rng, {1, 4, 12, 12})), shape_error);
}

TEST_CASE("tokenize_latent: swapping latent patches permutes tokens (positions zeroed)") {
  Rng rng(2);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  std::fill(p.pos.data->begin(), p.pos.data->end(), 0.0f);
  Tensor z = randn(rng, {1, 4, 16, 16});
  // swap patch (0,0) with patch (2,1): 4x4 cell blocks in every channel
  Tensor z2 = z.detached_copy();
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        auto at = [&](Tensor& t, int py, int px) -> float& {
          return t[((c * 16) + py) * 16 + px];
        };
        std::swap(at(z2, y, x), at(z2, 2 * 4 + y, 1 * 4 + x));
      }
  Graph g;
  Tensor ta = tokenize_latent(g, p, z);
  Tensor tb = tokenize_latent(g, p, z2);
  auto row = [](const Tensor& t, int r) {
    return std::vector<float>(t.ptr() + r * 512, t.ptr() + (r + 1) * 512);
  };
  // patch index: raster order, +1 for CLS; (0,0) -> 1, (2,1) -> 1 + 2*4+1 = 10
  CHECK(row(ta, 1) == row(tb, 10));
  CHECK(row(ta, 10) == row(tb, 1));
  CHECK(row(ta, 2) == row(tb, 2));
  CHECK(row(ta, 0) == row(tb, 0));
}

TEST_CASE("tokenize_latent: zero latent gives identical patch tokens (positions zeroed)") {
  Rng rng(3);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  std::fill(p.pos.data->begin(), p.pos.data->end(), 0.0f);
  Graph g;
  Tensor tok = tokenize_latent(g, p, Tensor({1, 4, 16, 16}));
  for (int r = 2; r <= 16; ++r)
    for (int c = 0; c < 512; ++c)
      CHECK(tok[r * 512 + c] == tok[1 * 512 + c]);
}

TEST_CASE("encode_latent: shapes, attention rows sum to 1, deterministic") {
  Rng rng(4);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  Graph g;
  Tensor z = randn(rng, {2, 4, 16, 16});
  std::vector<Tensor> probs;
  auto [zg, zl] = encode_latent(g, p, z, &probs);
  CHECK(zg.shape == Shape{2, 512});
  CHECK(zl.shape == Shape{2, 16, 512});
  REQUIRE(probs.size() == size_t(kBlocks));
  for (const auto& a : probs) {
    REQUIRE(a.shape == Shape{2 * 8, 17, 17});
    for (int64_t r = 0; r < 16 * 17; ++r) {
      double s = 0;
      for (int64_t c = 0; c < 17; ++c) s += a[r * 17 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
  Graph g2;
  auto [zg2, zl2] = encode_latent(g2, p, z);
  CHECK(*zg.data == *zg2.data);
  CHECK(*zl.data == *zl2.data);
}

TEST_CASE("c2ia: 512 -> 128; zero weights give constant bias output") {
  Rng rng(5);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  Graph g;
  Tensor out = c2ia(g, p, randn(rng, {3, 512}));
  CHECK(out.shape == Shape{3, 128});
  CHECK(out.all_finite());

  for (auto* w : {&p.c2ia_fc1.w, &p.c2ia_fc2.w, &p.c2ia_fc3.w})
    std::fill(w->data->begin(), w->data->end(), 0.0f);
  Graph g2;
  Tensor a = c2ia(g2, p, randn(rng, {1, 512}));
  Tensor b = c2ia(g2, p, randn(rng, {1, 512}));
  CHECK(*a.data == *b.data);
}

TEST_CASE("o2ra pooling: uniform weights equal the plain mean before the MLP") {
  Rng rng(6);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  Graph g;
  Tensor zl = randn(rng, {16, 512});
  Tensor w = Tensor::full({16, 1}, 1.0f);
  Tensor pooled = g.boxpool(zl, w);
  for (int c = 0; c < 512; ++c) {
    double mean = 0;
    for (int n = 0; n < 16; ++n) mean += zl[n * 512 + c];
    mean /= 16.0;
    CHECK(pooled[c] == doctest::Approx(mean).epsilon(1e-5));
  }
  Tensor fl = o2ra(g, p, zl, w);
  CHECK(fl.shape == Shape{1, 128});
}

TEST_CASE("o2ra pooling: single-cell support copies that cell") {
  Rng rng(7);
  Graph g;
  Tensor zl = randn(rng, {16, 512});
  Tensor w({16, 1});
  w[5] = 0.37f;  // only cell 5 covered; normalization removes the mass
  Tensor pooled = g.boxpool(zl, w);
  for (int c = 0; c < 512; ++c) CHECK(pooled[c] == doctest::Approx(zl[5 * 512 + c]).epsilon(1e-6));
  Tensor bad({16, 2});
  bad[0] = 1.0f;  // second box has zero mass
  CHECK_THROWS_AS(g.boxpool(zl, bad), numeric_error);
}

TEST_CASE("o2ra locality: cells outside a box's support cannot change its row") {
  Rng rng(8);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 4);
  for (int trial = 0; trial < 10; ++trial) {
    AlignTargets t = random_targets(rng, 4, 2);
    Tensor zl = randn(rng, {16, 512});
    Graph g;
    Tensor fl = o2ra(g, p, zl, t.box_weights);
    // perturb a latent cell with zero coverage for box 0
    int cell = -1;
    for (int n = 0; n < 16 && cell < 0; ++n)
      if (t.box_weights[n * 2 + 0] == 0.0f) cell = n;
    if (cell < 0) continue;
    Tensor zl2 = zl.detached_copy();
    for (int c = 0; c < 512; ++c) zl2[cell * 512 + c] += 10.0f;
    Graph g2;
    Tensor fl2 = o2ra(g2, p, zl2, t.box_weights);
    for (int c = 0; c < 128; ++c) CHECK(fl2[c] == fl[c]);
  }
}

TEST_CASE("global_loss hits 0 / 1 / 2 at parallel / orthogonal / anti-parallel") {
  GraphD g;
  TensorD u({4}, {1, 0, 0, 0});
  TensorD v({4}, {2, 0, 0, 0});
  TensorD w({4}, {0, 3, 0, 0});
  TensorD nu({4}, {-5, 0, 0, 0});
  CHECK(global_loss(g, u, v)[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(global_loss(g, u, w)[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(global_loss(g, u, nu)[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("global_loss is invariant to positive scaling of the text embedding") {
  Rng rng(9);
  GraphD g;
  for (int i = 0; i < 50; ++i) {
    TensorD a = randn_d(rng, {128});
    TensorD b = randn_d(rng, {128});
    TensorD b2 = b.detached_copy();
    const double s = 0.1 + rng.uniform() * 10.0;
    for (int64_t k = 0; k < b2.numel(); ++k) b2[k] *= s;
    CHECK(std::abs(global_loss(g, a, b)[0] - global_loss(g, a, b2)[0]) < 1e-6);
  }
}

TEST_CASE("local_loss: convention and mean") {
  GraphD g;
  CHECK(local_loss(g, TensorD({0, 128}), TensorD({0, 128}))[0] == 0.0);
  TensorD fl({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
  TensorD lb({2, 4}, {2, 0, 0, 0, 0, 0, 3, 0});  // parallel, orthogonal
  CHECK(local_loss(g, fl, lb)[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(local_loss(g, fl, TensorD({3, 4})), shape_error);
}

TEST_CASE("align_step: eta = 0 and lambda = 0 are bit-exact identities") {
  Rng rng(10);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 2);
  Tensor z = randn(rng, {2, 4, 8, 8});
  std::vector<AlignTargets> ts = {random_targets(rng, 2, 1), random_targets(rng, 2, 0)};
  AlignmentConfig cfg;
  cfg.eta = 0.0;
  auto r1 = align_step(p, z, ts, cfg);
  CHECK(r1.z.data == z.data);  // same storage, no forward pass
  cfg.eta = 0.1;
  cfg.lambda1 = cfg.lambda2 = 0.0;
  auto r2 = align_step(p, z, ts, cfg);
  CHECK(*r2.z.data == *z.data);
}

TEST_CASE("align_step gradient matches central finite differences in 64-bit") {
  Rng rng(11);
  AlignEncoderParams pf = AlignEncoderParams::init(rng, 2);
  AlignEncoderParamsT<double> p = cast_align_params<double>(pf);
  std::vector<AlignTargets> tf = {random_targets(rng, 2, 2)};
  auto ts = cast_targets(tf);
  TensorD z0 = randn_d(rng, {1, 4, 8, 8});

  auto f = [&](GraphD& g, const TensorD& x) {
    auto losses = align_losses(g, p, x, ts, 1.0, 1.0);
    return losses[0];
  };
  Rng pick(12);
  GradCheckReport rep = grad_check(f, z0, 1e-5, 24, &pick);
  CHECK(rep.coords_checked == 24);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("align_step moves z and the update equals z - eta * grad") {
  Rng rng(13);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 2);
  Tensor z = randn(rng, {1, 4, 8, 8});
  std::vector<AlignTargets> ts = {random_targets(rng, 2, 2)};
  AlignmentConfig cfg;
  cfg.eta = 0.05;
  auto res = align_step(p, z, ts, cfg);
  REQUIRE(res.before.size() == 1);
  CHECK(res.before[0].omega_g >= 0.0);
  CHECK(res.before[0].omega_g <= 2.0);
  CHECK(res.before[0].omega_l >= 0.0);
  CHECK(res.before[0].omega_l <= 2.0);
  CHECK(res.eta_used[0] == 0.05);
  CHECK_FALSE(*res.z.data == *z.data);

  // cross-check against an explicit tape evaluation
  Graph g;
  Tensor leaf = g.leaf(z.detached_copy());
  auto losses = align_losses(g, p, leaf, ts, 1.0f, 1.0f);
  g.backward(losses[0]);
  Tensor grad = g.grad(leaf);
  for (int64_t i = 0; i < z.numel(); ++i)
    CHECK(res.z[i] == doctest::Approx(z[i] - 0.05f * grad[i]).epsilon(1e-6));
}

TEST_CASE("align_step with backtracking never increases the combined loss") {
  Rng rng(14);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 2);
  AlignmentConfig cfg;
  // The untrained encoder's loss surface is nearly flat in z (final layernorm
  // soaks up scale), so only an absurd step size forces an overshoot.
  cfg.eta = 20000.0;
  cfg.backtrack = true;
  int engaged = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = randn(rng, {1, 4, 8, 8});
    std::vector<AlignTargets> ts = {random_targets(rng, 2, 1 + trial % 3)};
    auto res = align_step(p, z, ts, cfg);
    const double before = res.before[0].omega_g + res.before[0].omega_l;
    Graph g;
    std::vector<AlignLossValues> after_parts;
    align_losses(g, p, res.z, ts, 1.0f, 1.0f, &after_parts);
    const double after = after_parts[0].omega_g + after_parts[0].omega_l;
    CHECK(after <= before + 1e-6);
    if (res.eta_used[0] < cfg.eta) ++engaged;
  }
  MESSAGE("backtracking engaged in ", engaged, " of 20 trials");
  CHECK(engaged >= 1);
}

TEST_CASE("train_align_encoder: loss falls, lr 0 is a no-op, checkpoint round trips") {
  DatasetConfig dc;
  std::vector<Scene> scenes;
  for (int s = 0; s < 200; ++s) scenes.push_back(sample_scene(dc, 40000 + s));
  Rng boot(15);
  CodecParams codec = CodecParams::init(boot);
  TowerParams towers = TowerParams::init(boot);
  NoiseSchedule sched = NoiseSchedule::make(1000, 1e-4, 0.02);
  AdamConfig opt;

  Rng rng(16);
  AlignEncoderParams p = AlignEncoderParams::init(rng, 2);
  Rng tr(16);
  AlignTrainLog log =
      train_align_encoder(p, scenes, codec, towers, sched, 2, opt, tr, 16, 64, 1.0, 1.0);
  REQUIRE(log.epoch_loss.size() == 2);
  CHECK(log.epoch_loss[1] < log.epoch_loss[0]);

  Checkpoint ck;
  align_save(p, ck);
  auto path = std::filesystem::temp_directory_path() / "hcma_align_ck.bin";
  ck.save(path);
  AlignEncoderParams q = align_load(Checkpoint::load(path), 2);
  Graph g;
  Tensor z = randn(rng, {1, 4, 8, 8});
  auto [zg1, zl1] = encode_latent(g, p, z);
  auto [zg2, zl2] = encode_latent(g, q, z);
  CHECK(*zg1.data == *zg2.data);
  std::filesystem::remove(path);

  AlignEncoderParams p0 = AlignEncoderParams::init(rng, 2);
  std::vector<std::vector<float>> before;
  for (auto& [name, t] : p0.params()) before.push_back(*t->data);
  AdamConfig zero = opt;
  zero.lr = 0.0;
  zero.weight_decay = 0.0;
  Rng tr2(17);
  train_align_encoder(p0, scenes, codec, towers, sched, 1, zero, tr2, 16, 64, 1.0, 1.0);
  size_t k = 0;
  for (auto& [name, t] : p0.params()) CHECK(*t->data == before[k++]);
}
