#include "hcma/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hcma {

void UNetResBlock::reg(ParamList<float>& list, const std::string& prefix) {
  c1.reg(list, prefix + ".c1");
  c2.reg(list, prefix + ".c2");
  temb.reg(list, prefix + ".temb");
}

void UNetCrossAttn::reg(ParamList<float>& list, const std::string& prefix) {
  wq.reg(list, prefix + ".wq");
  wk.reg(list, prefix + ".wk");
  wv.reg(list, prefix + ".wv");
  wo.reg(list, prefix + ".wo");
}

ParamList<float> UNetParams::params() {
  ParamList<float> list;
  list.push_back({"unet/ctx_table", &ctx_table});
  list.push_back({"unet/null_ground", &null_ground});
  ground_proj.reg(list, "unet/ground_proj");
  temb1.reg(list, "unet/temb1");
  temb2.reg(list, "unet/temb2");
  conv_in.reg(list, "unet/conv_in");
  rb_d1.reg(list, "unet/rb_d1");
  xa_d1.reg(list, "unet/xa_d1");
  down1.reg(list, "unet/down1");
  rb_d2.reg(list, "unet/rb_d2");
  xa_d2.reg(list, "unet/xa_d2");
  down2.reg(list, "unet/down2");
  rb_m1.reg(list, "unet/rb_m1");
  xa_m.reg(list, "unet/xa_m");
  rb_m2.reg(list, "unet/rb_m2");
  up_conv2.reg(list, "unet/up_conv2");
  rb_u2.reg(list, "unet/rb_u2");
  xa_u2.reg(list, "unet/xa_u2");
  up_conv1.reg(list, "unet/up_conv1");
  rb_u1.reg(list, "unet/rb_u1");
  xa_u1.reg(list, "unet/xa_u1");
  conv_out.reg(list, "unet/conv_out");
  return list;
}

namespace {

UNetResBlock make_resblock(Rng& rng, int channels) {
  UNetResBlock rb;
  rb.c1 = make_conv<float>(rng, channels, channels, 3, 1, 1);
  rb.c2 = make_conv<float>(rng, channels, channels, 3, 1, 1);
  rb.temb = make_linear<float>(rng, kTembDim, channels);
  return rb;
}

UNetCrossAttn make_crossattn(Rng& rng, int channels) {
  UNetCrossAttn xa;
  xa.wq = make_linear<float>(rng, channels, channels);
  xa.wk = make_linear<float>(rng, kCtxWidth, channels);
  xa.wv = make_linear<float>(rng, kCtxWidth, channels);
  xa.wo = make_linear<float>(rng, channels, channels);
  // Zero output projection: each attention block starts as the identity, so
  // the residual path is well-conditioned from the first step.
  std::fill(xa.wo.w.data->begin(), xa.wo.w.data->end(), 0.0f);
  return xa;
}

void fill_scaled_normal(Rng& rng, Tensor& t, double s) {
  std::vector<double> tmp(size_t(t.numel()));
  rng.fill_normal(std::span<double>(tmp));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = float(tmp[size_t(i)] * s);
}

}  // namespace

UNetParams UNetParams::init(Rng& rng) {
  UNetParams p;
  p.ctx_table = Tensor({vocab::size(), kCtxWidth});
  fill_scaled_normal(rng, p.ctx_table, 0.02);
  p.null_ground = Tensor({1, kCtxWidth});
  fill_scaled_normal(rng, p.null_ground, 0.02);
  p.ground_proj = make_linear<float>(rng, kEmbedDim + 64, kCtxWidth);
  p.temb1 = make_linear<float>(rng, 64, kTembDim);
  p.temb2 = make_linear<float>(rng, kTembDim, kTembDim);
  p.conv_in = make_conv<float>(rng, kLatentChannels, kUNetBase, 3, 1, 1);
  p.rb_d1 = make_resblock(rng, kUNetBase);
  p.xa_d1 = make_crossattn(rng, kUNetBase);
  p.down1 = make_conv<float>(rng, kUNetBase, kUNetMid, 3, 2, 1);
  p.rb_d2 = make_resblock(rng, kUNetMid);
  p.xa_d2 = make_crossattn(rng, kUNetMid);
  p.down2 = make_conv<float>(rng, kUNetMid, kUNetMid, 3, 2, 1);
  p.rb_m1 = make_resblock(rng, kUNetMid);
  p.xa_m = make_crossattn(rng, kUNetMid);
  p.rb_m2 = make_resblock(rng, kUNetMid);
  p.up_conv2 = make_conv<float>(rng, kUNetMid, kUNetMid, 3, 1, 1);
  p.rb_u2 = make_resblock(rng, kUNetMid);
  p.xa_u2 = make_crossattn(rng, kUNetMid);
  p.up_conv1 = make_conv<float>(rng, kUNetMid, kUNetBase, 3, 1, 1);
  p.rb_u1 = make_resblock(rng, kUNetBase);
  p.xa_u1 = make_crossattn(rng, kUNetBase);
  p.conv_out = make_conv<float>(rng, kUNetBase, kLatentChannels, 3, 1, 1);
  // Zero prediction head: eps-hat starts at 0, the mean of the target.
  std::fill(p.conv_out.w.data->begin(), p.conv_out.w.data->end(), 0.0f);
  std::fill(p.conv_out.b.data->begin(), p.conv_out.b.data->end(), 0.0f);
  return p;
}

LayoutSpec LayoutSpec::of(const Scene& s) {
  LayoutSpec l;
  l.caption_tokens = s.caption_tokens;
  for (const auto& o : s.objects) l.objects.push_back({o.category_id, o.box});
  return l;
}

namespace {

Scene layout_scene(const LayoutSpec& l) {
  Scene s;
  s.caption_tokens = l.caption_tokens;
  for (const auto& [cat, box] : l.objects) s.objects.push_back({cat, box});
  return s;
}

}  // namespace

Tensor unet_context(Graph& g, const UNetParams& p, const std::vector<LayoutSpec>& layouts,
                    const Tensor& label_mat) {
  const int64_t B = int64_t(layouts.size());
  if (B == 0) throw shape_error("unet_context: empty batch");
  if (label_mat.shape != Shape{vocab::kNumCategories, kEmbedDim})
    throw shape_error("unet_context: label_mat must be [12, d_t]");
  std::vector<Tensor> rows;
  rows.reserve(size_t(B));
  for (const auto& l : layouts) {
    if (int64_t(l.caption_tokens.size()) > kCtxCaption)
      throw shape_error("unet_context: caption longer than " + std::to_string(kCtxCaption));
    if (int64_t(l.objects.size()) > kCtxGround)
      throw shape_error("unet_context: more than " + std::to_string(kCtxGround) + " objects");
    std::vector<int64_t> idx(size_t(kCtxCaption), int64_t(vocab::pad_id()));
    for (size_t i = 0; i < l.caption_tokens.size(); ++i) idx[i] = l.caption_tokens[i];
    Tensor sample = g.gather_rows(p.ctx_table, idx);  // [16, kCtxWidth]
    for (int j = 0; j < kCtxGround; ++j) {
      Tensor slot;
      if (j < int(l.objects.size())) {
        const auto& [cat, box] = l.objects[size_t(j)];
        if (cat < 0 || cat >= vocab::kNumCategories)
          throw shape_error("unet_context: category id out of range");
        Tensor in({1, kEmbedDim + 64});
        for (int64_t k = 0; k < kEmbedDim; ++k) in[k] = label_mat[cat * kEmbedDim + k];
        const std::vector<float> four = fourier_embed(box, 8);
        for (size_t k = 0; k < four.size(); ++k) in[kEmbedDim + int64_t(k)] = four[k];
        slot = p.ground_proj.forward(g, in);
      } else {
        slot = p.null_ground;
      }
      sample = g.rows_concat(sample, slot);
    }
    rows.push_back(sample);  // [20, kCtxWidth]
  }
  Tensor stacked = g.stack_rows(rows);  // [B, 20 * kCtxWidth]
  return stacked.reshaped({B, kCtxCaption + kCtxGround, kCtxWidth});
}

Tensor timestep_features(const std::vector<int>& ts) {
  const int64_t B = int64_t(ts.size());
  const int64_t half = 32;
  Tensor f({B, 2 * half});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t i = 0; i < half; ++i) {
      const double w = std::pow(10000.0, -double(i) / double(half));
      f[b * 2 * half + i] = float(std::sin(double(ts[size_t(b)]) * w));
      f[b * 2 * half + half + i] = float(std::cos(double(ts[size_t(b)]) * w));
    }
  }
  return f;
}

namespace {

// Per-position layernorm over channels of a [B, C, H, W] map.
Tensor ln_chan(Graph& g, const Tensor& x) {
  Tensor t = g.permute(x, {0, 2, 3, 1});
  t = g.layernorm_lastdim(t);
  return g.permute(t, {0, 3, 1, 2});
}

Tensor resblock(Graph& g, const UNetResBlock& rb, const Tensor& x, const Tensor& temb) {
  Tensor h = rb.c1.forward(g, g.relu(ln_chan(g, x)));
  h = g.add_chan_per_sample(h, rb.temb.forward(g, temb));
  h = rb.c2.forward(g, g.relu(ln_chan(g, h)));
  return g.add(x, h);
}

Tensor crossattn(Graph& g, const UNetCrossAttn& xa, const Tensor& x, const Tensor& ctx,
                 std::vector<Tensor>* attn_probs) {
  const int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t S = ctx.shape[1];
  Tensor tok = g.permute(x, {0, 2, 3, 1}).reshaped({B * H * W, C});
  Tensor q = xa.wq.forward(g, tok).reshaped({B, H * W, C});
  Tensor kv_in = ctx.reshaped({B * S, ctx.shape[2]});
  Tensor k = xa.wk.forward(g, kv_in).reshaped({B, S, C});
  Tensor v = xa.wv.forward(g, kv_in).reshaped({B, S, C});
  Tensor att = g.softmax_lastdim(g.scale(g.bmm_nt(q, k), float(1.0 / std::sqrt(double(C)))));
  if (attn_probs != nullptr) attn_probs->push_back(att.detached_copy());
  Tensor o = g.bmm(att, v).reshaped({B * H * W, C});
  o = xa.wo.forward(g, o).reshaped({B, H, W, C});
  return g.add(x, g.permute(o, {0, 3, 1, 2}));
}

}  // namespace

Tensor unet_forward(Graph& g, const UNetParams& p, const Tensor& z,
                    const std::vector<int>& ts, const Tensor& ctx,
                    std::vector<Tensor>* attn_probs) {
  if (z.shape.size() != 4 || z.shape[1] != kLatentChannels)
    throw shape_error("unet_forward: z must be [B, 4, h, h]");
  const int64_t B = z.shape[0], h = z.shape[2];
  if (z.shape[3] != h || h % 4 != 0) throw shape_error("unet_forward: h must be a multiple of 4");
  if (int64_t(ts.size()) != B) throw shape_error("unet_forward: one timestep per sample");
  if (ctx.shape.size() != 3 || ctx.shape[0] != B ||
      ctx.shape[1] != kCtxCaption + kCtxGround || ctx.shape[2] != kCtxWidth)
    throw shape_error("unet_forward: bad context shape");

  Tensor temb = p.temb2.forward(g, g.relu(p.temb1.forward(g, timestep_features(ts))));

  Tensor x = p.conv_in.forward(g, z);
  x = resblock(g, p.rb_d1, x, temb);
  x = crossattn(g, p.xa_d1, x, ctx, attn_probs);
  Tensor s1 = x;
  x = p.down1.forward(g, x);
  x = resblock(g, p.rb_d2, x, temb);
  x = crossattn(g, p.xa_d2, x, ctx, attn_probs);
  Tensor s2 = x;
  x = p.down2.forward(g, x);
  x = resblock(g, p.rb_m1, x, temb);
  x = crossattn(g, p.xa_m, x, ctx, attn_probs);
  x = resblock(g, p.rb_m2, x, temb);
  x = p.up_conv2.forward(g, g.upsample_nearest2(x));
  x = g.add(x, s2);
  x = resblock(g, p.rb_u2, x, temb);
  x = crossattn(g, p.xa_u2, x, ctx, attn_probs);
  x = p.up_conv1.forward(g, g.upsample_nearest2(x));
  x = g.add(x, s1);
  x = resblock(g, p.rb_u1, x, temb);
  x = crossattn(g, p.xa_u1, x, ctx, attn_probs);
  return p.conv_out.forward(g, g.relu(ln_chan(g, x)));
}

DiffusionTrainLog train_diffusion(UNetParams& p, const std::vector<Scene>& scenes,
                                  const CodecParams& codec, const TowerParams& towers,
                                  const AlignEncoderParams& align, const NoiseSchedule& sched,
                                  const AlignmentConfig& acfg, int epochs,
                                  const AdamConfig& opt_cfg, Rng& rng, int batch_size,
                                  int image_side) {
  if (scenes.empty()) throw std::invalid_argument("train_diffusion: no scenes");
  if (batch_size < 1 || int64_t(batch_size) > int64_t(scenes.size()))
    throw std::invalid_argument("train_diffusion: bad batch size");
  const int grid = image_side / 32;
  if (align.grid != grid) throw shape_error("train_diffusion: encoder grid does not match side");
  const int64_t n = int64_t(scenes.size());
  const int64_t h = int64_t(grid) * kPatch;

  // Frozen-stage precomputation: standardized latents and alignment targets.
  const Tensor label_mat = label_embeddings(towers);
  std::vector<Tensor> lat(static_cast<size_t>(n));
  std::vector<AlignTargets> targets(static_cast<size_t>(n));
  std::vector<LayoutSpec> layouts(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const Scene& s = scenes[size_t(i)];
    lat[size_t(i)] = standardize_latent(codec, codec_encode(codec, render(s, image_side)));
    targets[size_t(i)] = make_align_targets(s, embed_text(towers, s.caption_tokens),
                                            label_mat, grid);
    layouts[size_t(i)] = LayoutSpec::of(s);
  }

  ParamList<float> plist = p.params();
  Adam opt(opt_cfg);
  Rng shuffle_rng = rng.stream("diffusion-shuffle");
  Rng t_rng = rng.stream("diffusion-t");
  Rng eps_rng = rng.stream("diffusion-eps");

  DiffusionTrainLog log;
  std::vector<int64_t> order((size_t(n)));
  std::iota(order.begin(), order.end(), 0);
  const int64_t per = kLatentChannels * h * h;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[size_t(i)], order[size_t(shuffle_rng.uniform_int(0, i))]);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t start = 0; start + batch_size <= n; start += batch_size) {
      const int64_t b = batch_size;
      Tensor z0({b, kLatentChannels, h, h});
      Tensor eps({b, kLatentChannels, h, h});
      std::vector<int> ts((size_t(b)));
      std::vector<AlignTargets> tg((size_t(b)));
      std::vector<LayoutSpec> lay((size_t(b)));
      std::vector<float> noise((size_t(per)));
      for (int64_t j = 0; j < b; ++j) {
        const int64_t idx = order[size_t(start + j)];
        std::copy(lat[size_t(idx)].data->begin(), lat[size_t(idx)].data->end(),
                  z0.data->begin() + j * per);
        tg[size_t(j)] = targets[size_t(idx)];
        lay[size_t(j)] = layouts[size_t(idx)];
        ts[size_t(j)] = int(t_rng.uniform_int(0, sched.T - 1));
        eps_rng.fill_normal(std::span<float>(noise));
        std::copy(noise.begin(), noise.end(), eps.data->begin() + j * per);
      }
      Tensor zt({b, kLatentChannels, h, h});
      for (int64_t j = 0; j < b; ++j) {
        const double a = std::sqrt(sched.alpha_bar[size_t(ts[size_t(j)])]);
        const double s = std::sqrt(1.0 - sched.alpha_bar[size_t(ts[size_t(j)])]);
        for (int64_t k = 0; k < per; ++k)
          zt[j * per + k] = float(a * z0[j * per + k] + s * eps[j * per + k]);
      }
      // The aligned latent enters the noise loss as a constant: only the
      // denoiser is trained here.
      Tensor za = align_step(align, zt, tg, acfg).z;

      Graph g;
      track_params(g, plist);
      Tensor ctx = unet_context(g, p, lay, label_mat);
      Tensor eps_hat = unet_forward(g, p, za, ts, ctx);
      Tensor d = g.sub(eps_hat, eps);
      Tensor loss = g.mean_all(g.mul(d, d));
      g.backward(loss);
      std::vector<Tensor> grads = collect_grads(g, plist);
      untrack_params(plist);
      opt.step(param_ptrs(plist), grads);
      const double lv = double(loss[0]);
      if (!std::isfinite(lv)) throw numeric_error("train_diffusion: non-finite loss");
      loss_sum += lv;
      ++batches;
    }
    log.epoch_loss.push_back(batches ? loss_sum / double(batches) : 0.0);
  }
  return log;
}

SampleResult sample(const std::vector<LayoutSpec>& layouts, const UNetParams& unet,
                    const AlignEncoderParams& align, const TowerParams& towers,
                    const CodecParams& codec, const NoiseSchedule& sched,
                    const AlignmentConfig& acfg, int steps, const std::string& mode,
                    Rng& rng, const Tensor* init_z, int t_start) {
  if (layouts.empty()) throw std::invalid_argument("sample: empty layout batch");
  if (steps < 1 || steps > sched.T) throw std::invalid_argument("sample: steps must be in [1, T]");
  if (mode != "ddim" && mode != "literal")
    throw std::invalid_argument("sample: mode must be 'ddim' or 'literal'");
  if ((init_z == nullptr) != (t_start < 0))
    throw std::invalid_argument("sample: init_z and t_start go together");
  if (t_start >= sched.T) throw std::invalid_argument("sample: t_start out of range");

  const int64_t B = int64_t(layouts.size());
  const int64_t h = int64_t(align.grid) * kPatch;
  const int64_t per = kLatentChannels * h * h;

  // Uniformly strided descending timestep ladder; when resuming from a given
  // (z, t_start) the ladder starts exactly at t_start.
  std::vector<int> ladder;
  for (int i = steps - 1; i >= 0; --i) ladder.push_back((i + 1) * sched.T / steps - 1);
  if (t_start >= 0) {
    std::vector<int> cut{t_start};
    for (int t : ladder)
      if (t < t_start) cut.push_back(t);
    ladder = cut;
  }

  Tensor z({B, kLatentChannels, h, h});
  if (init_z != nullptr) {
    if (init_z->shape != z.shape) throw shape_error("sample: init_z shape mismatch");
    *z.data = *init_z->data;
  } else {
    Rng init_rng = rng.stream("sample-init");
    init_rng.fill_normal(std::span<float>(*z.data));
  }

  const Tensor label_mat = label_embeddings(towers);
  std::vector<AlignTargets> targets;
  for (const auto& l : layouts)
    targets.push_back(make_align_targets(layout_scene(l), embed_text(towers, l.caption_tokens),
                                         label_mat, align.grid));
  std::vector<int> ts_batch((size_t(B)));

  SampleResult out;
  for (size_t i = 0; i < ladder.size(); ++i) {
    const int t = ladder[i];
    AlignStepResultT<float> ares = align_step(align, z, targets, acfg);
    out.traces.push_back(std::move(ares.before));
    out.step_timesteps.push_back(t);
    if (!ares.z.all_finite())
      throw sampling_error("sample: non-finite latent after alignment at step " +
                           std::to_string(i) + " (t=" + std::to_string(t) + ")");

    Graph g;
    Tensor ctx = unet_context(g, unet, layouts, label_mat);
    std::fill(ts_batch.begin(), ts_batch.end(), t);
    Tensor eps_hat = unet_forward(g, unet, ares.z, ts_batch, ctx);

    const double ab_t = sched.alpha_bar[size_t(t)];
    Tensor next(z.shape);
    if (mode == "ddim") {
      const double ab_prev = (i + 1 < ladder.size()) ? sched.alpha_bar[size_t(ladder[i + 1])] : 1.0;
      const double sa = std::sqrt(ab_t), sb = std::sqrt(1.0 - ab_t);
      const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
      for (int64_t k = 0; k < B * per; ++k) {
        const double z0_hat = (double(ares.z[k]) - sb * double(eps_hat[k])) / sa;
        next[k] = float(pa * z0_hat + pb * double(eps_hat[k]));
      }
    } else {
      const double gamma = sched.beta[size_t(t)] / std::sqrt(1.0 - ab_t);
      for (int64_t k = 0; k < B * per; ++k)
        next[k] = float(double(ares.z[k]) - gamma * double(eps_hat[k]));
    }
    if (!next.all_finite())
      throw sampling_error("sample: non-finite latent after denoising at step " +
                           std::to_string(i) + " (t=" + std::to_string(t) + ")");
    z = next;
  }

  out.latents = z;
  Graph g;
  Tensor decoded = codec_forward_decode(g, codec, destandardize_latent(codec, z));
  out.images = tensor_to_images(decoded);
  return out;
}

void unet_save(const UNetParams& p, Checkpoint& ck) {
  UNetParams& mp = const_cast<UNetParams&>(p);
  save_params(ck, mp.params());
}

UNetParams unet_load(const Checkpoint& ck) {
  Rng dummy(0);
  UNetParams p = UNetParams::init(dummy);
  load_params(ck, p.params());
  return p;
}

}  // namespace hcma
