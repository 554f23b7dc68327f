#include "hcma/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace hcma {

template <class T>
void AlignBlockT<T>::reg(ParamList<T>& list, const std::string& prefix) {
  ln1.reg(list, prefix + ".ln1");
  ln2.reg(list, prefix + ".ln2");
  wq.reg(list, prefix + ".wq");
  wk.reg(list, prefix + ".wk");
  wv.reg(list, prefix + ".wv");
  wo.reg(list, prefix + ".wo");
  mlp1.reg(list, prefix + ".mlp1");
  mlp2.reg(list, prefix + ".mlp2");
}

template <class T>
ParamList<T> AlignEncoderParamsT<T>::params() {
  ParamList<T> list;
  patch_fc1.reg(list, "align/patch_fc1");
  patch_fc2.reg(list, "align/patch_fc2");
  list.push_back({"align/cls", &cls});
  list.push_back({"align/pos", &pos});
  for (size_t b = 0; b < blocks.size(); ++b)
    blocks[b].reg(list, "align/block" + std::to_string(b));
  ln_f.reg(list, "align/ln_f");
  c2ia_fc1.reg(list, "align/c2ia_fc1");
  c2ia_fc2.reg(list, "align/c2ia_fc2");
  c2ia_fc3.reg(list, "align/c2ia_fc3");
  o2ra_fc1.reg(list, "align/o2ra_fc1");
  o2ra_fc2.reg(list, "align/o2ra_fc2");
  return list;
}

template <class T>
AlignEncoderParamsT<T> AlignEncoderParamsT<T>::init(Rng& rng, int grid) {
  if (grid < 2) throw shape_error("align encoder: grid >= 2 required");
  Rng r = rng.stream("align-init");
  AlignEncoderParamsT<T> p;
  p.grid = grid;
  const int n_tok = grid * grid + 1;
  p.patch_fc1 = make_linear<T>(r, kDk, kDv);
  p.patch_fc2 = make_linear<T>(r, kDv, kDv);
  p.cls = TensorT<T>({1, kDv});
  p.pos = TensorT<T>({n_tok, kDv});
  {
    std::vector<double> tmp(size_t(n_tok + 1) * kDv);
    r.fill_normal(std::span<double>(tmp));
    for (int64_t i = 0; i < p.cls.numel(); ++i) (*p.cls.data)[i] = T(tmp[i] * 0.02);
    for (int64_t i = 0; i < p.pos.numel(); ++i)
      (*p.pos.data)[i] = T(tmp[kDv + i] * 0.02);
  }
  for (int b = 0; b < kBlocks; ++b) {
    AlignBlockT<T> blk;
    blk.ln1 = make_layernorm<T>(kDv);
    blk.ln2 = make_layernorm<T>(kDv);
    blk.wq = make_linear<T>(r, kDv, kDv);
    blk.wk = make_linear<T>(r, kDv, kDv);
    blk.wv = make_linear<T>(r, kDv, kDv);
    blk.wo = make_linear<T>(r, kDv, kDv);
    blk.mlp1 = make_linear<T>(r, kDv, kDv * kMlpRatio);
    blk.mlp2 = make_linear<T>(r, kDv * kMlpRatio, kDv);
    p.blocks.push_back(std::move(blk));
  }
  p.ln_f = make_layernorm<T>(kDv);
  p.c2ia_fc1 = make_linear<T>(r, kDv, kDv);
  p.c2ia_fc2 = make_linear<T>(r, kDv, kDv);
  p.c2ia_fc3 = make_linear<T>(r, kDv, kEmbedDim);
  p.o2ra_fc1 = make_linear<T>(r, kDv, 256);
  p.o2ra_fc2 = make_linear<T>(r, 256, kEmbedDim);
  return p;
}

template <class To, class From>
AlignEncoderParamsT<To> cast_align_params(const AlignEncoderParamsT<From>& src) {
  Rng dummy(0);
  AlignEncoderParamsT<To> dst = AlignEncoderParamsT<To>::init(dummy, src.grid);
  auto s = const_cast<AlignEncoderParamsT<From>&>(src).params();
  auto d = dst.params();
  if (s.size() != d.size()) throw shape_error("cast_align_params: layout mismatch");
  for (size_t i = 0; i < s.size(); ++i) *d[i].second = tensor_cast<To>(*s[i].second);
  return dst;
}

template <class T>
TensorT<T> tokenize_latent(GraphT<T>& g, const AlignEncoderParamsT<T>& p,
                           const TensorT<T>& z) {
  const int64_t side = int64_t(p.grid) * kPatch;
  if (z.rank() != 4 || z.dim(1) != kLatentChannels || z.dim(2) != side || z.dim(3) != side)
    throw shape_error("tokenize_latent: expected [B,4," + std::to_string(side) + "," +
                      std::to_string(side) + "], got " + shape_str(z.shape));
  const int64_t B = z.dim(0), N = int64_t(p.grid) * p.grid;
  // [B,4,G,p,G,p] -> [B,G,G,4,p,p] -> [B*N, d_k]
  TensorT<T> r = z.reshaped({B, kLatentChannels, p.grid, kPatch, p.grid, kPatch});
  r = g.permute(r, {0, 2, 4, 1, 3, 5});
  r = r.reshaped({B * N, kDk});
  TensorT<T> tok = p.patch_fc2.forward(g, g.gelu(p.patch_fc1.forward(g, r)));
  std::vector<TensorT<T>> per_sample;
  for (int64_t b = 0; b < B; ++b) {
    std::vector<int64_t> idx(N);
    std::iota(idx.begin(), idx.end(), b * N);
    per_sample.push_back(g.rows_concat(p.cls, g.gather_rows(tok, idx)));
  }
  TensorT<T> x = g.stack_rows(per_sample).reshaped({B * (N + 1), kDv});
  x = g.add(x, g.tile_vert(p.pos, B));
  return x.reshaped({B, N + 1, kDv});
}

namespace {

template <class T>
TensorT<T> attention(GraphT<T>& g, const AlignBlockT<T>& blk, const TensorT<T>& x,
                     std::vector<TensorT<T>>* attn_probs) {
  const int64_t B = x.dim(0), S = x.dim(1);
  const int64_t hd = kDv / kHeads;
  TensorT<T> h = blk.ln1.forward(g, x).reshaped({B * S, kDv});
  auto split = [&](const TensorT<T>& m) {
    TensorT<T> t = m.reshaped({B, S, kHeads, hd});
    return g.permute(t, {0, 2, 1, 3}).reshaped({B * kHeads, S, hd});
  };
  TensorT<T> q = split(blk.wq.forward(g, h));
  TensorT<T> k = split(blk.wk.forward(g, h));
  TensorT<T> v = split(blk.wv.forward(g, h));
  TensorT<T> att = g.softmax_lastdim(g.scale(g.bmm_nt(q, k), T(1.0 / std::sqrt(double(hd)))));
  if (attn_probs) attn_probs->push_back(att.detached_copy());
  TensorT<T> o = g.bmm(att, v).reshaped({B, kHeads, S, hd});
  o = g.permute(o, {0, 2, 1, 3}).reshaped({B * S, kDv});
  o = blk.wo.forward(g, o);
  return g.add(x, o.reshaped({B, S, kDv}));
}

template <class T>
TensorT<T> block_mlp(GraphT<T>& g, const AlignBlockT<T>& blk, const TensorT<T>& x) {
  const int64_t B = x.dim(0), S = x.dim(1);
  TensorT<T> h = blk.ln2.forward(g, x).reshaped({B * S, kDv});
  h = blk.mlp2.forward(g, g.gelu(blk.mlp1.forward(g, h)));
  return g.add(x, h.reshaped({B, S, kDv}));
}

}  // namespace

template <class T>
std::pair<TensorT<T>, TensorT<T>> encode_latent(GraphT<T>& g,
                                                const AlignEncoderParamsT<T>& p,
                                                const TensorT<T>& z,
                                                std::vector<TensorT<T>>* attn_probs) {
  TensorT<T> x = tokenize_latent(g, p, z);
  for (const auto& blk : p.blocks) {
    x = attention(g, blk, x, attn_probs);
    x = block_mlp(g, blk, x);
  }
  x = p.ln_f.forward(g, x);
  const int64_t B = x.dim(0), S = x.dim(1), N = S - 1;
  TensorT<T> flat = x.reshaped({B * S, kDv});
  std::vector<int64_t> cls_idx, patch_idx;
  for (int64_t b = 0; b < B; ++b) {
    cls_idx.push_back(b * S);
    for (int64_t n = 1; n < S; ++n) patch_idx.push_back(b * S + n);
  }
  TensorT<T> zg = g.gather_rows(flat, cls_idx);
  TensorT<T> zl = g.gather_rows(flat, patch_idx).reshaped({B, N, kDv});
  return {zg, zl};
}

template <class T>
TensorT<T> c2ia(GraphT<T>& g, const AlignEncoderParamsT<T>& p, const TensorT<T>& zg) {
  TensorT<T> x = zg.rank() == 1 ? zg.reshaped({1, kDv}) : zg;
  if (x.rank() != 2 || x.dim(1) != kDv) throw shape_error("c2ia: expected [B, d_v]");
  x = g.relu(p.c2ia_fc1.forward(g, x));
  x = g.relu(p.c2ia_fc2.forward(g, x));
  return p.c2ia_fc3.forward(g, x);
}

template <class T>
TensorT<T> o2ra(GraphT<T>& g, const AlignEncoderParamsT<T>& p, const TensorT<T>& zl,
                const TensorT<T>& weights) {
  if (zl.rank() != 2 || zl.dim(1) != kDv) throw shape_error("o2ra: zl must be [N, d_v]");
  TensorT<T> pooled = g.boxpool(zl, weights);  // [M, d_v]
  return p.o2ra_fc2.forward(g, g.relu(p.o2ra_fc1.forward(g, pooled)));
}

template <class T>
TensorT<T> global_loss(GraphT<T>& g, const TensorT<T>& f_g, const TensorT<T>& f_c) {
  TensorT<T> cos = g.cosine_sim(f_g, f_c);
  return g.add(g.scale(cos, T(-1)), TensorT<T>::scalar(T(1)));
}

template <class T>
TensorT<T> local_loss(GraphT<T>& g, const TensorT<T>& f_l, const TensorT<T>& labels) {
  if (f_l.rank() != 2 || labels.rank() != 2 || f_l.shape != labels.shape)
    throw shape_error("local_loss: row count / shape mismatch");
  const int64_t M = f_l.dim(0);
  if (M == 0) return TensorT<T>::scalar(T(0));
  TensorT<T> acc;
  for (int64_t i = 0; i < M; ++i) {
    TensorT<T> cos = g.cosine_sim(g.gather_rows(f_l, {i}), g.gather_rows(labels, {i}));
    TensorT<T> om = g.add(g.scale(cos, T(-1)), TensorT<T>::scalar(T(1)));
    acc = i == 0 ? om : g.add(acc, om);
  }
  return g.scale(acc, T(1) / T(M));
}

template <class T>
std::vector<TensorT<T>> align_losses(GraphT<T>& g, const AlignEncoderParamsT<T>& p,
                                     const TensorT<T>& z,
                                     const std::vector<AlignTargetsT<T>>& targets,
                                     T lambda1, T lambda2,
                                     std::vector<AlignLossValues>* parts) {
  const int64_t B = z.dim(0);
  if (int64_t(targets.size()) != B) throw shape_error("align_losses: targets size mismatch");
  auto [zg, zl3] = encode_latent(g, p, z);
  const int64_t N = zl3.dim(1);
  TensorT<T> fg;
  if (lambda1 > T(0)) fg = c2ia(g, p, zg);
  TensorT<T> zl_flat = zl3.reshaped({B * N, kDv});
  std::vector<TensorT<T>> out;
  if (parts) parts->clear();
  for (int64_t b = 0; b < B; ++b) {
    AlignLossValues v;
    TensorT<T> combined = TensorT<T>::scalar(T(0));
    if (lambda1 > T(0)) {
      TensorT<T> og = global_loss(g, g.gather_rows(fg, {b}), targets[b].f_c);
      v.omega_g = double((*og.data)[0]);
      combined = g.add(combined, g.scale(og, lambda1));
    }
    const int64_t M = targets[b].labels.rank() == 2 ? targets[b].labels.dim(0) : 0;
    if (lambda2 > T(0) && M > 0) {
      std::vector<int64_t> idx(N);
      std::iota(idx.begin(), idx.end(), b * N);
      TensorT<T> zl_b = g.gather_rows(zl_flat, idx);
      TensorT<T> fl = o2ra(g, p, zl_b, targets[b].box_weights);
      TensorT<T> ol = local_loss(g, fl, targets[b].labels);
      v.omega_l = double((*ol.data)[0]);
      combined = g.add(combined, g.scale(ol, lambda2));
    }
    if (parts) parts->push_back(v);
    out.push_back(combined);
  }
  return out;
}

template <class T>
AlignStepResultT<T> align_step(const AlignEncoderParamsT<T>& p, const TensorT<T>& z,
                               const std::vector<AlignTargetsT<T>>& targets,
                               const AlignmentConfig& cfg) {
  if (cfg.lambda1 < 0 || cfg.lambda2 < 0 || cfg.eta < 0)
    throw std::invalid_argument("align_step: lambdas and eta must be >= 0");
  if (!z.all_finite()) throw numeric_error("align_step: non-finite input latent");
  AlignStepResultT<T> res;
  const int64_t B = z.dim(0);
  if (cfg.eta == 0.0 || (cfg.lambda1 == 0.0 && cfg.lambda2 == 0.0)) {
    res.z = z;  // bit-exact identity, no forward pass
    res.eta_used.assign(size_t(B), 0.0);
    return res;
  }
  const T l1 = T(cfg.lambda1), l2 = T(cfg.lambda2);

  GraphT<T> g;
  TensorT<T> z_leaf = g.leaf(z.detached_copy());
  std::vector<TensorT<T>> losses = align_losses(g, p, z_leaf, targets, l1, l2, &res.before);
  TensorT<T> total = losses[0];
  for (size_t i = 1; i < losses.size(); ++i) total = g.add(total, losses[i]);
  std::vector<double> before_combined;
  for (auto& l : losses) before_combined.push_back(double((*l.data)[0]));
  if (!tracked(total)) {  // every per-sample loss was constant: zero gradient
    res.z = z;
    res.eta_used.assign(size_t(B), 0.0);
    return res;
  }
  g.backward(total);
  TensorT<T> grad = g.grad(z_leaf);
  if (!grad.all_finite()) throw numeric_error("align_step: non-finite alignment gradient");

  const int64_t per = z.numel() / B;
  res.eta_used.assign(size_t(B), cfg.eta);
  TensorT<T> za = z.detached_copy();
  auto apply = [&](int64_t b) {
    const T* zp = z.ptr() + b * per;
    const T* gp = grad.ptr() + b * per;
    T* op = za.ptr() + b * per;
    const T eta = T(res.eta_used[size_t(b)]);
    for (int64_t i = 0; i < per; ++i) op[i] = zp[i] - eta * gp[i];
  };
  for (int64_t b = 0; b < B; ++b) apply(b);

  if (cfg.backtrack) {
    std::vector<int64_t> active((size_t(B)));
    std::iota(active.begin(), active.end(), 0);
    for (int halvings = 0; !active.empty(); ++halvings) {
      TensorT<T> sub({int64_t(active.size()), kLatentChannels, z.dim(2), z.dim(3)});
      std::vector<AlignTargetsT<T>> sub_t;
      for (size_t i = 0; i < active.size(); ++i) {
        std::memcpy(sub.ptr() + int64_t(i) * per, za.ptr() + active[i] * per,
                    sizeof(T) * per);
        sub_t.push_back(targets[size_t(active[i])]);
      }
      GraphT<T> ge;
      std::vector<TensorT<T>> after = align_losses(ge, p, sub, sub_t, l1, l2);
      std::vector<int64_t> still;
      for (size_t i = 0; i < active.size(); ++i)
        if (double((*after[i].data)[0]) > before_combined[size_t(active[i])])
          still.push_back(active[i]);
      if (still.empty()) break;
      if (halvings >= cfg.max_halvings) {
        // Out of halvings and the loss would still rise: keep those latents
        // unchanged so the step is never an ascent step.
        for (int64_t b : still) {
          res.eta_used[size_t(b)] = 0.0;
          std::memcpy(za.ptr() + b * per, z.ptr() + b * per, sizeof(T) * per);
        }
        break;
      }
      for (int64_t b : still) {
        res.eta_used[size_t(b)] *= cfg.halve;
        apply(b);
      }
      active = std::move(still);
    }
  }
  if (!za.all_finite()) throw numeric_error("align_step: non-finite aligned latent");
  res.z = za;
  return res;
}

AlignTargets make_align_targets(const Scene& s, const Tensor& caption_embed,
                                const Tensor& label_mat, int grid) {
  AlignTargets t;
  t.f_c = caption_embed.detached_copy();
  t.f_c.node = -1;
  const int64_t M = int64_t(s.objects.size());
  t.labels = Tensor({M, kEmbedDim});
  std::vector<Box> boxes;
  for (int64_t i = 0; i < M; ++i) {
    const int cat = s.objects[size_t(i)].category_id;
    std::memcpy(t.labels.ptr() + i * kEmbedDim, label_mat.ptr() + int64_t(cat) * kEmbedDim,
                sizeof(float) * kEmbedDim);
    boxes.push_back(s.objects[size_t(i)].box);
  }
  t.box_weights = box_map(boxes, grid).reshaped({int64_t(grid) * grid, M});
  return t;
}

AlignTrainLog train_align_encoder(AlignEncoderParams& p, const std::vector<Scene>& scenes,
                                  const CodecParams& codec, const TowerParams& towers,
                                  const NoiseSchedule& sched, int epochs,
                                  const AdamConfig& opt_cfg, Rng& rng, int batch_size,
                                  int image_side, double lambda1, double lambda2) {
  if (scenes.empty()) throw std::invalid_argument("train_align_encoder: empty dataset");
  if (image_side / 32 != p.grid)
    throw shape_error("train_align_encoder: grid does not match image side");
  const int64_t h = image_side / 8;
  const int64_t per = kLatentChannels * h * h;

  // Frozen-stage precomputation: standardized latents and tower targets.
  Tensor label_mat = label_embeddings(towers);
  std::vector<Tensor> latents;
  std::vector<AlignTargets> targets;
  {
    std::vector<std::vector<int>> caps;
    for (const auto& s : scenes) caps.push_back(s.caption_tokens);
    Graph tg;
    Tensor cap_emb = towers_forward_text(tg, towers, caps);  // [n, d_t]
    for (size_t start = 0; start < scenes.size(); start += 64) {
      const size_t end = std::min(scenes.size(), start + 64);
      std::vector<Image> imgs;
      for (size_t i = start; i < end; ++i) imgs.push_back(render(scenes[i], image_side));
      Tensor z = standardize_latent(codec, codec_encode_batch(codec, imgs));
      for (size_t i = start; i < end; ++i) {
        Tensor zi({kLatentChannels, h, h});
        std::memcpy(zi.ptr(), z.ptr() + int64_t(i - start) * per, sizeof(float) * per);
        latents.push_back(std::move(zi));
        Tensor ce({kEmbedDim});
        std::memcpy(ce.ptr(), cap_emb.ptr() + int64_t(i) * kEmbedDim,
                    sizeof(float) * kEmbedDim);
        targets.push_back(make_align_targets(scenes[i], ce, label_mat, p.grid));
      }
    }
  }

  Adam opt(opt_cfg);
  Rng shuffle_rng = rng.stream("align-shuffle");
  Rng noise_rng = rng.stream("align-noise");
  auto plist = p.params();
  AlignTrainLog log;

  std::vector<int> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, int64_t(i) - 1)]);
    double sum = 0.0;
    int64_t count = 0;
    for (size_t start = 0; start < order.size(); start += batch_size) {
      const size_t end = std::min(order.size(), start + size_t(batch_size));
      const int64_t B = int64_t(end - start);
      Tensor zt({B, kLatentChannels, h, h});
      std::vector<AlignTargets> bt;
      std::vector<float> eps((size_t(per)));
      for (int64_t b = 0; b < B; ++b) {
        const int i = order[start + size_t(b)];
        const int t = int(noise_rng.uniform_int(0, sched.T - 1));
        noise_rng.fill_normal(std::span<float>(eps));
        const float a = float(std::sqrt(sched.alpha_bar[t]));
        const float bb = float(std::sqrt(1.0 - sched.alpha_bar[t]));
        const float* z0 = latents[size_t(i)].ptr();
        float* dst = zt.ptr() + b * per;
        for (int64_t k = 0; k < per; ++k) dst[k] = a * z0[k] + bb * eps[size_t(k)];
        bt.push_back(targets[size_t(i)]);
      }
      Graph g;
      track_params(g, plist);
      std::vector<Tensor> losses = align_losses(g, p, zt, bt, float(lambda1), float(lambda2));
      Tensor total = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) total = g.add(total, losses[i]);
      total = g.scale(total, 1.0f / float(B));
      const double loss_v = total[0];
      if (!std::isfinite(loss_v)) throw numeric_error("train_align_encoder: loss diverged");
      g.backward(total);
      auto grads = collect_grads(g, plist);
      untrack_params(plist);
      opt.step(param_ptrs(plist), grads);
      sum += loss_v * double(B);
      count += B;
    }
    log.epoch_loss.push_back(sum / double(count));
  }
  return log;
}

void align_save(const AlignEncoderParams& p, Checkpoint& ck) {
  save_params(ck, const_cast<AlignEncoderParams&>(p).params());
}

AlignEncoderParams align_load(const Checkpoint& ck, int grid) {
  Rng dummy(0);
  AlignEncoderParams p = AlignEncoderParams::init(dummy, grid);
  load_params(ck, p.params());
  return p;
}

// explicit instantiations
template struct AlignBlockT<float>;
template struct AlignBlockT<double>;
template struct AlignEncoderParamsT<float>;
template struct AlignEncoderParamsT<double>;
template AlignEncoderParamsT<double> cast_align_params<double, float>(
    const AlignEncoderParamsT<float>&);
template AlignEncoderParamsT<float> cast_align_params<float, double>(
    const AlignEncoderParamsT<double>&);
template Tensor tokenize_latent<float>(Graph&, const AlignEncoderParams&, const Tensor&);
template TensorD tokenize_latent<double>(GraphD&, const AlignEncoderParamsT<double>&,
                                         const TensorD&);
template std::pair<Tensor, Tensor> encode_latent<float>(Graph&, const AlignEncoderParams&,
                                                        const Tensor&, std::vector<Tensor>*);
template std::pair<TensorD, TensorD> encode_latent<double>(
    GraphD&, const AlignEncoderParamsT<double>&, const TensorD&, std::vector<TensorD>*);
template Tensor c2ia<float>(Graph&, const AlignEncoderParams&, const Tensor&);
template TensorD c2ia<double>(GraphD&, const AlignEncoderParamsT<double>&, const TensorD&);
template Tensor o2ra<float>(Graph&, const AlignEncoderParams&, const Tensor&, const Tensor&);
template TensorD o2ra<double>(GraphD&, const AlignEncoderParamsT<double>&, const TensorD&,
                              const TensorD&);
template Tensor global_loss<float>(Graph&, const Tensor&, const Tensor&);
template TensorD global_loss<double>(GraphD&, const TensorD&, const TensorD&);
template Tensor local_loss<float>(Graph&, const Tensor&, const Tensor&);
template TensorD local_loss<double>(GraphD&, const TensorD&, const TensorD&);
template std::vector<Tensor> align_losses<float>(Graph&, const AlignEncoderParams&,
                                                 const Tensor&,
                                                 const std::vector<AlignTargets>&, float,
                                                 float, std::vector<AlignLossValues>*);
template std::vector<TensorD> align_losses<double>(
    GraphD&, const AlignEncoderParamsT<double>&, const TensorD&,
    const std::vector<AlignTargetsT<double>>&, double, double,
    std::vector<AlignLossValues>*);
template AlignStepResultT<float> align_step<float>(const AlignEncoderParams&, const Tensor&,
                                                   const std::vector<AlignTargets>&,
                                                   const AlignmentConfig&);
template AlignStepResultT<double> align_step<double>(
    const AlignEncoderParamsT<double>&, const TensorD&,
    const std::vector<AlignTargetsT<double>>&, const AlignmentConfig&);

}  // namespace hcma
