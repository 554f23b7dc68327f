// Acceptance gate: one pass/fail line per release criterion.
//
// Criteria 1-5 and 7 are self-contained. Criterion 6 and 8 read the artifacts
// of the reference run directory (--run-dir, produced by `hcma gen-data`,
// `hcma train <stage>` x4 and `hcma ablate` under the default configuration).
// Criterion 9 byte-compares two same-seed pipeline runs (--repro-a /
// --repro-b); with --repro-inline it executes the two runs itself at a
// reduced, single-box-affordable scale.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hcma/align.hpp"
#include "hcma/diffusion.hpp"
#include "hcma/eval.hpp"
#include "hcma/gradcheck.hpp"
#include "hcma/pipeline.hpp"
#include "hcma/schedule.hpp"
#include "hcma/towers.hpp"

using namespace hcma;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw io_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

TensorD randn(Rng& rng, const Shape& s) {
  TensorD x(s);
  rng.fill_normal(std::span<double>(x.ptr(), x.numel()));
  return x;
}

TensorD to_double(const Tensor& t) {
  TensorD d(t.shape);
  for (int64_t i = 0; i < t.numel(); ++i) d[i] = double(t[i]);
  return d;
}

AlignTargetsT<double> to_double(const AlignTargets& t) {
  AlignTargetsT<double> d;
  d.f_c = to_double(t.f_c);
  d.labels = to_double(t.labels);
  d.box_weights = to_double(t.box_weights);
  return d;
}

double read_wall_seconds(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string key;
  double v = 0.0;
  if (!(in >> key >> v) || key != "wall_seconds")
    throw io_error("malformed timing file " + p.string());
  return v;
}

// --- criterion 1: gradient suite -------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(9);
  int cases = 0;
  double worst = 0.0;
  auto run = [&](auto fn, Shape s) {
    TensorD x = randn(rng, s);
    auto rep = grad_check(fn, x, 1e-5);
    worst = std::max(worst, rep.max_rel_err);
    ++cases;
  };
  for (int rep = 0; rep < 4; ++rep) {
    TensorD other = randn(rng, {3, 4});
    TensorD vec = randn(rng, {4});
    TensorD mat45 = randn(rng, {4, 5});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.add(x, other)); }, {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.sub(other, x)); }, {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.mul(x, other)); }, {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.scale(x, 2.5)); }, {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.gelu(x)); }, {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.mean_all(g.mul(g.relu(x), g.relu(x))); },
        {3, 4});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul(g.layernorm_lastdim(x), other));
        },
        {3, 4});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul(g.softmax_lastdim(x), other));
        },
        {3, 4});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul(g.add_rowvec(other, x), other));
        },
        {4});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul(g.mul_rowvec(other, x), other));
        },
        {4});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.matmul(x, mat45)); }, {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.matmul_nt(x, mat45)); }, {3, 5});
    run([&](GraphD& g, const TensorD& x) { return g.mean_all(g.normalize_rows(x)); }, {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.cosine_sim(x, vec); }, {4});
    run([&](GraphD& g, const TensorD& x) { return g.mean_all(g.mean_rows(x)); }, {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.ce_index_targets(x, {1, 3, 0}); }, {3, 5});
    TensorD bweights({4, 2}, {0.5, 0.0, 1.0, 0.25, 0.0, 0.75, 0.25, 1.0});
    run([&](GraphD& g, const TensorD& x) { return g.mean_all(g.boxpool(x, bweights)); }, {4, 3});
    TensorD bm = randn(rng, {2, 4, 3});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul(g.bmm(x, bm), g.bmm(x, bm)));
        },
        {2, 3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.bmm_nt(x, x)); }, {2, 3, 4});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul(g.permute(x, {1, 0}), other));
        },
        {4, 3});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.gather_rows(x, {2, 0, 2})); },
        {3, 4});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.tile_vert(x, 3)); }, {2, 4});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul(g.rows_concat(x, other), g.rows_concat(other, x)));
        },
        {3, 4});
    TensorD w = randn(rng, {3, 2, 3, 3});
    run([&](GraphD& g, const TensorD& x) {
          return g.mean_all(g.mul(g.conv2d(x, w, 1, 1), g.conv2d(x, w, 1, 1)));
        },
        {2, 2, 5, 5});
    run([&](GraphD& g, const TensorD& x) {
          return g.mean_all(g.conv2d(other.reshaped({1, 2, 3, 2}), x, 2, 1));
        },
        {3, 2, 3, 3});
    run([&](GraphD& g, const TensorD& x) { return g.sum_all(g.upsample_nearest2(x)); },
        {1, 2, 3, 3});
    run([&](GraphD& g, const TensorD& x) { return g.mean_all(g.avgpool_global(x)); },
        {2, 3, 4, 4});
    TensorD chanv = randn(rng, {3});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul(g.add_chan(x, chanv), g.mul_chan(x, chanv)));
        },
        {2, 3, 2, 2});
    TensorD base4d = randn(rng, {2, 3, 2, 2});
    run([&](GraphD& g, const TensorD& x) {
          return g.sum_all(g.mul_chan(g.add_chan_per_sample(base4d, x.reshaped({2, 3})), chanv));
        },
        {6});
  }

  // composite alignment loss: ViT encode + C2IA + O2RA + cosine, in 64-bit
  Rng mrng(31);
  const AlignEncoderParamsT<double> enc =
      cast_align_params<double>(AlignEncoderParams::init(mrng, 2));
  const TowerParams towers = TowerParams::init(mrng);
  const Tensor label_mat = label_embeddings(towers);
  for (int c = 0; c < 4; ++c) {
    const Scene s = sample_scene(DatasetConfig{}, 1000 + uint64_t(c));
    const std::vector<AlignTargetsT<double>> tg = {to_double(
        make_align_targets(s, embed_text(towers, s.caption_tokens), label_mat, 2))};
    TensorD z = randn(mrng, {1, 4, 8, 8});
    auto rep = grad_check(
        [&](GraphD& g, const TensorD& x) {
          return align_losses<double>(g, enc, x, tg, 1.0, 1.0)[0];
        },
        z, 1e-5, 48, &mrng);
    worst = std::max(worst, rep.max_rel_err);
    ++cases;
  }

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = worst < 1e-5 && cases >= 100 && secs < 120.0;
  return {ok, "max rel err " + fmt("%.2e", worst) + ", " + std::to_string(cases) +
                  " cases, " + fmt("%.1f", secs) + " s"};
}

// --- criterion 2: guidance additivity --------------------------------------

Outcome criterion_guidance_additivity() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng init(17);
  const AlignEncoderParams align = AlignEncoderParams::init(init, 2);
  const TowerParams towers = TowerParams::init(init);
  const CodecParams codec = CodecParams::init(init);
  const UNetParams unet = UNetParams::init(init);
  const NoiseSchedule sched = NoiseSchedule::make(100, 1e-4, 0.02);
  const Tensor label_mat = label_embeddings(towers);

  std::vector<LayoutSpec> layouts;
  for (int i = 0; i < 2; ++i) layouts.push_back(LayoutSpec::of(sample_scene(DatasetConfig{}, 7 + uint64_t(i))));
  const int steps = 7;
  const int64_t B = 2, h = 8, per = 4 * h * h;

  for (const std::string mode : {"ddim", "literal"}) {
    AlignmentConfig off;
    off.lambda1 = 0.0;
    off.lambda2 = 0.0;
    Rng a(99);
    const SampleResult guided =
        sample(layouts, unet, align, towers, codec, sched, off, steps, mode, a);

    // independent guidance-free walk under the same seed
    std::vector<int> ladder;
    for (int i = steps - 1; i >= 0; --i) ladder.push_back((i + 1) * sched.T / steps - 1);
    Tensor z({B, 4, h, h});
    Rng b = Rng(99).stream("sample-init");
    b.fill_normal(std::span<float>(*z.data));
    std::vector<int> ts((size_t(B)));
    for (size_t i = 0; i < ladder.size(); ++i) {
      const int t = ladder[i];
      Graph g;
      Tensor ctx = unet_context(g, unet, layouts, label_mat);
      std::fill(ts.begin(), ts.end(), t);
      Tensor eps_hat = unet_forward(g, unet, z, ts, ctx);
      const double ab_t = sched.alpha_bar[size_t(t)];
      Tensor next(z.shape);
      if (mode == "ddim") {
        const double ab_prev =
            (i + 1 < ladder.size()) ? sched.alpha_bar[size_t(ladder[i + 1])] : 1.0;
        const double sa = std::sqrt(ab_t), sb = std::sqrt(1.0 - ab_t);
        const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
        for (int64_t k = 0; k < B * per; ++k) {
          const double z0_hat = (double(z[k]) - sb * double(eps_hat[k])) / sa;
          next[k] = float(pa * z0_hat + pb * double(eps_hat[k]));
        }
      } else {
        const double gamma = sched.beta[size_t(t)] / std::sqrt(1.0 - ab_t);
        for (int64_t k = 0; k < B * per; ++k)
          next[k] = float(double(z[k]) - gamma * double(eps_hat[k]));
      }
      z = next;
    }
    if (std::memcmp(z.ptr(), guided.latents.ptr(), sizeof(float) * size_t(B * per)) != 0)
      return {false, "lambda-zero sampler deviates from the guidance-free walk (" + mode + ")"};
    for (const auto& step : guided.traces)
      if (!step.empty()) return {false, "lambda-zero sampler evaluated Omega (" + mode + ")"};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = secs < 60.0;
  return {ok, "bit-identical latents in ddim and literal modes, " + fmt("%.1f", secs) + " s"};
}

// --- criterion 3: alignment descent ----------------------------------------

Outcome criterion_alignment_descent() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(23);
  const AlignEncoderParams enc = AlignEncoderParams::init(rng, 2);
  const TowerParams towers = TowerParams::init(rng);
  const Tensor label_mat = label_embeddings(towers);

  AlignmentConfig acfg;
  acfg.lambda1 = 1.0;
  acfg.lambda2 = 1.0;
  acfg.eta = 0.2;
  acfg.backtrack = true;

  Rng zrng = rng.stream("states");
  int strict_checked = 0;
  for (int i = 0; i < 100; ++i) {
    const Scene s = sample_scene(DatasetConfig{}, 40 + uint64_t(i));
    const std::vector<AlignTargets> tg = {
        make_align_targets(s, embed_text(towers, s.caption_tokens), label_mat, 2)};
    Tensor z({1, 4, 8, 8});
    zrng.fill_normal(std::span<float>(*z.data));

    const auto res = align_step(enc, z, tg, acfg);
    const double before = res.before[0].omega_g + res.before[0].omega_l;

    Graph ga;
    const double after = double((*align_losses<float>(ga, enc, res.z, tg, 1.0f, 1.0f)[0].data)[0]);
    if (after > before + 1e-12)
      return {false, "loss rose at state " + std::to_string(i) + " (" +
                         fmt("%.6g", before) + " -> " + fmt("%.6g", after) + ")"};

    Graph gg;
    Tensor z_leaf = gg.leaf(z.detached_copy());
    Tensor total = align_losses<float>(gg, enc, z_leaf, tg, 1.0f, 1.0f)[0];
    gg.backward(total);
    const Tensor grad = gg.grad(z_leaf);
    double norm = 0.0;
    for (int64_t k = 0; k < grad.numel(); ++k) norm += double(grad[k]) * double(grad[k]);
    norm = std::sqrt(norm);
    if (norm > 1e-6) {
      ++strict_checked;
      if (!(after < before))
        return {false, "no strict decrease at state " + std::to_string(i) +
                           " despite gradient norm " + fmt("%.3g", norm)};
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = secs < 120.0;
  return {ok, "100 states non-increasing, " + std::to_string(strict_checked) +
                  " strict decreases, " + fmt("%.1f", secs) + " s"};
}

// --- criterion 4: O2RA locality --------------------------------------------

Outcome criterion_o2ra_locality() {
  Rng rng(51);
  const AlignEncoderParams enc = AlignEncoderParams::init(rng, 4);
  const int64_t N = 16;
  int boxes_checked = 0;
  for (int sc = 0; sc < 50; ++sc) {
    const Scene s = sample_scene(DatasetConfig{}, 900 + uint64_t(sc));
    std::vector<Box> bx;
    for (const auto& o : s.objects) bx.push_back(o.box);
    const Tensor w = box_map(bx, 4).reshaped({N, int64_t(bx.size())});
    Tensor zl({N, kDv});
    rng.fill_normal(std::span<float>(*zl.data));

    Graph g1;
    const Tensor f1 = o2ra<float>(g1, enc, zl, w);
    for (int64_t i = 0; i < int64_t(bx.size()); ++i) {
      Tensor zl2 = zl.detached_copy();
      bool outside = false;
      for (int64_t r = 0; r < N; ++r) {
        if (w[r * int64_t(bx.size()) + i] != 0.0f) continue;
        outside = true;
        for (int64_t k = 0; k < kDv; ++k) zl2[r * kDv + k] += 1.0f + float(k % 3);
      }
      if (!outside) continue;
      Graph g2;
      const Tensor f2 = o2ra<float>(g2, enc, zl2, w);
      if (std::memcmp(f1.ptr() + i * kEmbedDim, f2.ptr() + i * kEmbedDim,
                      sizeof(float) * kEmbedDim) != 0)
        return {false, "box " + std::to_string(i) + " of scene " + std::to_string(sc) +
                           " changed under an outside-support perturbation"};
      ++boxes_checked;
    }
  }
  return {true, "50 scenes, " + std::to_string(boxes_checked) + " boxes exactly invariant"};
}

// --- criterion 5: metric oracles -------------------------------------------

Outcome criterion_metric_oracles() {
  auto gauss1d = [](double mu, double var) {
    GaussianStats g;
    g.mu = TensorD({1}, {mu});
    g.sigma = TensorD({1, 1}, {var});
    g.n = 1000;
    return g;
  };
  const double shift = frechet_distance(gauss1d(0.0, 1.0), gauss1d(1.0, 1.0));
  if (std::abs(shift - 1.0) > 1e-6) return {false, "mean-shift-1 gave " + fmt("%.8f", shift)};
  const double scale = frechet_distance(gauss1d(0.0, 1.0), gauss1d(0.0, 4.0));
  if (std::abs(scale - 1.0) > 1e-6) return {false, "sigma 1 vs 2 gave " + fmt("%.8f", scale)};

  Rng rng(77);
  Tensor feats({256, 8});
  rng.fill_normal(std::span<float>(*feats.data));
  const GaussianStats g = fit_gaussian(feats);
  const double self = frechet_distance(g, g);
  if (!(self < 1e-6)) return {false, "self-FID " + fmt("%.3e", self)};

  GaussianStats g2 = g;
  g2.mu = g.mu.detached_copy();  // tensors share storage on plain copy
  TensorD delta = randn(rng, {8});
  double want = 0.0;
  for (int64_t i = 0; i < 8; ++i) {
    g2.mu[i] += delta[i];
    want += delta[i] * delta[i];
  }
  const double got = frechet_distance(g, g2);
  if (std::abs(got - want) > 1e-6)
    return {false, "mean-shift additivity off by " + fmt("%.3e", std::abs(got - want))};
  return {true, "1-D closed forms, self-distance and mean-shift additivity within 1e-6"};
}

// --- criterion 6: embedding-space gate --------------------------------------

Outcome criterion_retrieval(const RunConfig& cfg, const fs::path& run_dir) {
  RunPaths paths{run_dir};
  if (!fs::exists(paths.checkpoint("towers")))
    return {false, "missing " + paths.checkpoint("towers").string() +
                       " (run the reference pipeline first)"};
  Checkpoint ck = Checkpoint::load(paths.checkpoint("towers"));
  if (ck.digest() != cfg.train_digest())
    return {false, "towers checkpoint digest does not match the reference config"};
  const TowerParams towers = towers_load(ck);
  const std::vector<Scene> holdout = load_dataset(paths.holdout());
  if (holdout.size() != 512)
    return {false, "holdout has " + std::to_string(holdout.size()) + " scenes, want 512"};
  const RetrievalResult r = retrieval_eval(towers, holdout, cfg.image_side);
  const double wall = read_wall_seconds(paths.stage_time("towers"));
  const bool ok = r.text_to_image >= 0.90 && r.image_to_text >= 0.90 && wall <= 900.0;
  return {ok, "t->i " + fmt("%.3f", r.text_to_image) + ", i->t " +
                  fmt("%.3f", r.image_to_text) + " (gate 0.90), training " +
                  fmt("%.0f", wall) + " s (gate 900)"};
}

// --- criterion 7: forward-diffusion statistics ------------------------------

Outcome criterion_q_sample_stats() {
  const NoiseSchedule sched = NoiseSchedule::make(1000, 1e-4, 0.02);
  const int64_t n = 10000;
  Rng rng(13);
  Tensor z0({n});
  for (int64_t i = 0; i < n; ++i) z0[i] = 0.7f;
  std::string worst;
  for (int t : {0, 249, 499, 749, 999}) {
    Tensor eps({n});
    rng.fill_normal(std::span<float>(*eps.data));
    const Tensor zt = q_sample(z0, t, eps, sched);
    const double ab = sched.alpha_bar[size_t(t)];
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += double(zt[i]);
    mean /= double(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) var += (double(zt[i]) - mean) * (double(zt[i]) - mean);
    var /= double(n - 1);

    const double want_mean = std::sqrt(ab) * 0.7;
    const double want_var = 1.0 - ab;
    const double se_mean = std::sqrt(want_var / double(n));
    const double se_var = want_var * std::sqrt(2.0 / double(n - 1));
    if (std::abs(mean - want_mean) > 3.0 * se_mean)
      return {false, "mean off at t=" + std::to_string(t) + " (" +
                         fmt("%.4f", mean) + " vs " + fmt("%.4f", want_mean) + ")"};
    if (std::abs(var - want_var) > 3.0 * se_var)
      return {false, "variance off at t=" + std::to_string(t) + " (" +
                         fmt("%.4f", var) + " vs " + fmt("%.4f", want_var) + ")"};
  }
  return {true, "mean and variance within 3 sigma at t in {0,249,499,749,999}, n=10000"};
}

// --- criterion 8: end-to-end trend ------------------------------------------

struct AblationNumbers {
  double l1 = 0, l2 = 0, image_fid = 0, image_clip = 0, region_fid = 0, region_clip = 0,
         region_acc = 0;
};

Outcome criterion_trend(const RunConfig& cfg, const fs::path& run_dir) {
  if (cfg.train_scenes != 8000 || cfg.codec_epochs != 20 || cfg.towers_epochs != 30 ||
      cfg.align_epochs != 20 || cfg.diffusion_epochs != 40 || cfg.sample_count != 256)
    return {false, "config is not the reference configuration"};
  RunPaths paths{run_dir};
  if (!fs::exists(paths.ablation()))
    return {false, "missing " + paths.ablation().string() + " (run `hcma ablate` first)"};

  std::istringstream in(slurp(paths.ablation()));
  std::string line;
  std::getline(in, line);  // digest/seed header
  std::getline(in, line);  // column header
  std::vector<AblationNumbers> rows;
  while (std::getline(in, line)) {
    AblationNumbers r;
    std::istringstream ls(line);
    if (ls >> r.l1 >> r.l2 >> r.image_fid >> r.image_clip >> r.region_fid >> r.region_clip >>
        r.region_acc)
      rows.push_back(r);
  }
  if (rows.size() != 4 || rows[0].l1 != 0 || rows[0].l2 != 0 || rows[1].l2 != 1 ||
      rows[2].l1 != 1 || rows[3].l1 != 1 || rows[3].l2 != 1)
    return {false, "ablation table malformed"};

  const AblationNumbers &none = rows[0], &o2ra_only = rows[1], &c2ia_only = rows[2],
                        &both = rows[3];
  double total = 0.0;
  for (const char* st : {"codec", "towers", "align", "diffusion"})
    total += read_wall_seconds(paths.stage_time(st));

  std::string fail;
  if (!(both.image_clip >= o2ra_only.image_clip && both.image_clip >= c2ia_only.image_clip &&
        o2ra_only.image_clip >= none.image_clip && c2ia_only.image_clip >= none.image_clip))
    fail += "CLIP ordering violated; ";
  if (!(both.region_acc >= none.region_acc + 0.10))
    fail += "full HCMA region accuracy margin < 10 pts; ";
  if (!(o2ra_only.region_acc >= none.region_acc + 0.05))
    fail += "O2RA-only region accuracy margin < 5 pts; ";
  if (total > 7200.0) fail += "training budget exceeded (" + fmt("%.0f", total) + " s > 7200); ";
  const std::string nums = "clip " + fmt("%.4f", none.image_clip) + "/" +
                           fmt("%.4f", o2ra_only.image_clip) + "/" +
                           fmt("%.4f", c2ia_only.image_clip) + "/" +
                           fmt("%.4f", both.image_clip) + ", acc " +
                           fmt("%.3f", none.region_acc) + "/" + fmt("%.3f", o2ra_only.region_acc) +
                           "/" + fmt("%.3f", c2ia_only.region_acc) + "/" +
                           fmt("%.3f", both.region_acc) + ", train " + fmt("%.0f", total) + " s";
  if (!fail.empty()) return {false, fail + nums};
  return {true, nums};
}

// --- criterion 9: reproducibility -------------------------------------------

void run_pipeline(const RunConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  cmd_gen_data(cfg, dir);
  for (const char* st : {"codec", "towers", "align", "diffusion"}) cmd_train(st, cfg, dir);
  cmd_sample(cfg, dir);
  cmd_eval(cfg, dir);
}

Outcome criterion_reproducibility(const std::optional<fs::path>& a,
                                  const std::optional<fs::path>& b, bool inline_runs) {
  fs::path da, db;
  std::string scale_note;
  if (a && b) {
    da = *a;
    db = *b;
  } else if (inline_runs) {
    RunConfig cfg;
    cfg.seed = 4242;
    cfg.image_side = 64;
    cfg.holdout_scenes = 128;
    cfg.codec_epochs = cfg.towers_epochs = cfg.align_epochs = cfg.diffusion_epochs = 1;
    cfg.sample_steps = 6;
    cfg.sample_count = 64;
    da = fs::temp_directory_path() / "hcma_accept_repro_a";
    db = fs::temp_directory_path() / "hcma_accept_repro_b";
    run_pipeline(cfg, da);
    run_pipeline(cfg, db);
    scale_note = " (inline reduced-scale runs)";
  } else {
    return {false, "no repro run directories given (use --repro-a/--repro-b or --repro-inline)"};
  }

  RunPaths pa{da}, pb{db};
  if (!fs::exists(pa.report()) || !fs::exists(pb.report()))
    return {false, "missing eval report in one of the repro runs"};
  if (slurp(pa.report()) != slurp(pb.report())) return {false, "eval reports differ"};
  for (const char* st : {"codec", "towers", "align", "diffusion"}) {
    if (Checkpoint::load(pa.checkpoint(st)).digest() !=
        Checkpoint::load(pb.checkpoint(st)).digest())
      return {false, std::string(st) + " checkpoint digests differ"};
    if (slurp(pa.checkpoint(st)) != slurp(pb.checkpoint(st)))
      return {false, std::string(st) + " checkpoint bytes differ"};
  }
  return {true, "reports bit-exact, all four checkpoints byte-identical" + scale_note};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance gate"};
  std::string run_dir = "runs/reference";
  std::string config_path;
  std::optional<std::string> repro_a, repro_b;
  bool repro_inline = false;
  app.add_option("--run-dir", run_dir, "reference pipeline output directory");
  app.add_option("--config", config_path, "reference config (defaults to built-in reference)");
  app.add_option("--repro-a", repro_a, "first same-seed pipeline run (criterion 9)");
  app.add_option("--repro-b", repro_b, "second same-seed pipeline run (criterion 9)");
  app.add_flag("--repro-inline", repro_inline, "execute two reduced-scale runs for criterion 9");
  CLI11_PARSE(app, argc, argv);

  RunConfig cfg;
  if (!config_path.empty()) cfg = RunConfig::load(config_path);

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> entries = {
      {1, "gradient suite", [] { return criterion_gradients(); }},
      {2, "guidance additivity", [] { return criterion_guidance_additivity(); }},
      {3, "alignment descent", [] { return criterion_alignment_descent(); }},
      {4, "O2RA locality", [] { return criterion_o2ra_locality(); }},
      {5, "metric oracles", [] { return criterion_metric_oracles(); }},
      {6, "embedding-space gate", [&] { return criterion_retrieval(cfg, run_dir); }},
      {7, "forward-diffusion statistics", [] { return criterion_q_sample_stats(); }},
      {8, "end-to-end trend", [&] { return criterion_trend(cfg, run_dir); }},
      {9, "reproducibility", [&] {
         return criterion_reproducibility(
             repro_a ? std::optional<fs::path>(*repro_a) : std::nullopt,
             repro_b ? std::optional<fs::path>(*repro_b) : std::nullopt, repro_inline);
       }},
  };

  int failures = 0;
  for (const auto& e : entries) {
    Outcome o;
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    if (!o.pass) ++failures;
    std::printf("criterion %d %s: %s — %s\n", e.id, e.name, o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
