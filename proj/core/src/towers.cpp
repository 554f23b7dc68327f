#include "hcma/towers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hcma {

ParamList<float> TowerParams::params() {
  ParamList<float> list;
  list.push_back({"towers/token_table", &token_table});
  t_fc1.reg(list, "towers/t_fc1");
  t_fc2.reg(list, "towers/t_fc2");
  i_c1.reg(list, "towers/i_c1");
  i_c2.reg(list, "towers/i_c2");
  i_c3.reg(list, "towers/i_c3");
  i_c4.reg(list, "towers/i_c4");
  i_fc1.reg(list, "towers/i_fc1");
  i_fc2.reg(list, "towers/i_fc2");
  list.push_back({"towers/inv_tau", &inv_tau});
  return list;
}

TowerParams TowerParams::init(Rng& rng) {
  Rng r = rng.stream("towers-init");
  TowerParams p;
  p.token_table = Tensor({vocab::size(), kTokenDim});
  r.fill_normal(std::span<float>(p.token_table.ptr(), p.token_table.numel()), 0.0f, 0.1f);
  p.t_fc1 = make_linear<float>(r, kTokenDim, kEmbedDim);
  p.t_fc2 = make_linear<float>(r, kEmbedDim, kEmbedDim);
  p.i_c1 = make_conv<float>(r, 3, 48, 3, 2, 1);
  p.i_c2 = make_conv<float>(r, 48, 96, 3, 2, 1);
  p.i_c3 = make_conv<float>(r, 96, 192, 3, 2, 1);
  p.i_c4 = make_conv<float>(r, 192, 192, 3, 2, 1);
  p.i_fc1 = make_linear<float>(r, 192, kEmbedDim);
  p.i_fc2 = make_linear<float>(r, kEmbedDim, kEmbedDim);
  p.inv_tau = Tensor::scalar(1.0f / 0.07f);
  return p;
}

Tensor towers_forward_text(Graph& g, const TowerParams& p,
                           const std::vector<std::vector<int>>& token_batch) {
  if (token_batch.empty()) throw shape_error("towers_forward_text: empty batch");
  std::vector<Tensor> pooled;
  for (const auto& tokens : token_batch) {
    if (tokens.empty()) throw shape_error("towers_forward_text: empty token list");
    std::vector<int64_t> idx;
    for (int t : tokens) {
      if (t < 0 || t >= vocab::size())
        throw std::out_of_range("towers_forward_text: unknown token id " + std::to_string(t));
      idx.push_back(t);
    }
    pooled.push_back(g.mean_rows(g.gather_rows(p.token_table, idx)));
  }
  Tensor h = g.stack_rows(pooled);
  h = g.relu(p.t_fc1.forward(g, h));
  h = p.t_fc2.forward(g, h);
  return g.normalize_rows(h);
}

namespace {

// Per-position normalization over channels keeps the relu stack well
// conditioned; without it the tower needs several times more epochs.
Tensor ln_chan(Graph& g, const Tensor& h) {
  Tensor t = g.permute(h, {0, 2, 3, 1});
  t = g.layernorm_lastdim(t);
  return g.permute(t, {0, 3, 1, 2});
}

}  // namespace

Tensor towers_forward_image(Graph& g, const TowerParams& p, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != x.dim(3) || x.dim(2) % 16 != 0)
    throw shape_error("towers_forward_image: expected [B,3,side,side], side % 16 == 0");
  Tensor h = g.relu(ln_chan(g, p.i_c1.forward(g, x)));
  h = g.relu(ln_chan(g, p.i_c2.forward(g, h)));
  h = g.relu(ln_chan(g, p.i_c3.forward(g, h)));
  h = g.relu(ln_chan(g, p.i_c4.forward(g, h)));
  h = g.avgpool_global(h);
  h = g.relu(p.i_fc1.forward(g, h));
  h = p.i_fc2.forward(g, h);
  return g.normalize_rows(h);
}

Tensor embed_text(const TowerParams& p, const std::vector<int>& tokens) {
  Graph g;
  return towers_forward_text(g, p, {tokens}).reshaped({kEmbedDim});
}

Tensor embed_image(const TowerParams& p, const Image& img) {
  Graph g;
  Tensor x({1, 3, img.side, img.side}, img.data);
  return towers_forward_image(g, p, x).reshaped({kEmbedDim});
}

Tensor embed_image_batch(const TowerParams& p, const std::vector<Image>& imgs) {
  Graph g;
  Tensor x({int64_t(imgs.size()), 3, imgs[0].side, imgs[0].side});
  float* dst = x.ptr();
  for (const auto& img : imgs) {
    if (img.side != imgs[0].side) throw shape_error("embed_image_batch: mixed sides");
    std::copy(img.data.begin(), img.data.end(), dst);
    dst += img.data.size();
  }
  return towers_forward_image(g, p, x);
}

Tensor label_embeddings(const TowerParams& p) {
  Graph g;
  std::vector<std::vector<int>> labels;
  for (int c = 0; c < vocab::kNumCategories; ++c) labels.push_back(vocab::label_tokens(c));
  return towers_forward_text(g, p, labels);
}

namespace {

double contrastive_step(TowerParams& p, ParamList<float>& plist, Adam* opt,
                        const std::vector<Scene>& batch, int image_side) {
  std::vector<Image> imgs;
  std::vector<std::vector<int>> caps;
  for (const auto& s : batch) {
    imgs.push_back(render(s, image_side));
    caps.push_back(s.caption_tokens);
  }
  Tensor x({int64_t(imgs.size()), 3, image_side, image_side});
  float* dst = x.ptr();
  for (const auto& img : imgs) {
    std::copy(img.data.begin(), img.data.end(), dst);
    dst += img.data.size();
  }

  Graph g;
  if (opt) track_params(g, plist);
  Tensor ft = towers_forward_text(g, p, caps);
  Tensor fi = towers_forward_image(g, p, x);
  Tensor logits = g.mul(g.matmul_nt(ft, fi), p.inv_tau);  // [B,B], rows = text
  std::vector<int64_t> targets(batch.size());
  std::iota(targets.begin(), targets.end(), 0);
  Tensor loss_t = g.ce_index_targets(logits, targets);
  Tensor loss_i = g.ce_index_targets(g.permute(logits, {1, 0}), targets);
  Tensor loss = g.scale(g.add(loss_t, loss_i), 0.5f);
  const double loss_v = loss[0];
  if (!std::isfinite(loss_v)) throw numeric_error("train_contrastive: loss diverged");
  if (opt) {
    g.backward(loss);
    auto grads = collect_grads(g, plist);
    untrack_params(plist);
    opt->step(param_ptrs(plist), grads);
    p.inv_tau[0] = std::clamp(p.inv_tau[0], 0.1f, 100.0f);
  }
  return loss_v;
}

}  // namespace

ContrastiveTrainLog train_contrastive(TowerParams& p, const std::vector<Scene>& scenes,
                                      int epochs, const AdamConfig& opt_cfg, Rng& rng,
                                      int batch_size, int image_side) {
  if (scenes.size() < 8000) throw std::invalid_argument("train_contrastive: needs >= 8000 scenes");
  Adam opt(opt_cfg);
  Rng shuffle_rng = rng.stream("towers-shuffle");
  auto plist = p.params();
  ContrastiveTrainLog log;
  log.first_batch_loss = contrastive_step(
      p, plist, nullptr, {scenes.begin(), scenes.begin() + batch_size}, image_side);

  std::vector<int> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  const double base_lr = opt_cfg.lr;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Half-cosine decay to 10% of the base rate; the late epochs contribute
    // most of the retrieval accuracy and benefit from the smaller steps.
    const double frac = epochs > 1 ? double(epoch) / double(epochs - 1) : 0.0;
    opt.config().lr = base_lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, int64_t(i) - 1)]);
    double sum = 0.0;
    int64_t batches = 0;
    for (size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
      std::vector<Scene> batch;
      for (size_t i = start; i < start + batch_size; ++i) batch.push_back(scenes[order[i]]);
      sum += contrastive_step(p, plist, &opt, batch, image_side);
      ++batches;
    }
    log.epoch_loss.push_back(sum / double(batches));
  }
  return log;
}

std::vector<int> scene_category_key(const Scene& s) {
  std::vector<int> key;
  for (const auto& o : s.objects) key.push_back(o.category_id);
  std::sort(key.begin(), key.end());
  return key;
}

std::vector<int> scene_caption_key(const Scene& s) {
  std::vector<int> key = s.caption_tokens;
  std::sort(key.begin(), key.end());
  return key;
}

RetrievalResult retrieval_from_sim(const Tensor& sim,
                                   const std::vector<std::vector<int>>& keys) {
  const int n = int(keys.size());
  if (sim.rank() != 2 || sim.dim(0) != n || sim.dim(1) != n)
    throw shape_error("retrieval_from_sim: sim must be [n,n]");
  RetrievalResult r;
  for (int dir = 0; dir < 2; ++dir) {
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      int best = -1;
      float best_v = -1e30f;
      for (int j = 0; j < n; ++j) {
        const float v = dir == 0 ? sim[int64_t(i) * n + j] : sim[int64_t(j) * n + i];
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      if (keys[best] == keys[i]) ++correct;
    }
    (dir == 0 ? r.text_to_image : r.image_to_text) = double(correct) / n;
  }
  return r;
}

RetrievalResult retrieval_eval(const TowerParams& p, const std::vector<Scene>& scenes,
                               int image_side) {
  if (scenes.size() < 100) throw std::invalid_argument("retrieval_eval: needs >= 100 scenes");
  std::vector<Image> imgs;
  std::vector<std::vector<int>> caps;
  std::vector<std::vector<int>> keys;
  for (const auto& s : scenes) {
    imgs.push_back(render(s, image_side));
    caps.push_back(s.caption_tokens);
    keys.push_back(scene_caption_key(s));
  }
  Graph g;
  Tensor ft = towers_forward_text(g, p, caps);
  Tensor fi = embed_image_batch(p, imgs);
  return retrieval_from_sim(g.matmul_nt(ft, fi), keys);
}

void towers_save(const TowerParams& p, Checkpoint& ck) {
  save_params(ck, const_cast<TowerParams&>(p).params());
}

TowerParams towers_load(const Checkpoint& ck) {
  Rng dummy(0);
  TowerParams p = TowerParams::init(dummy);
  load_params(ck, p.params());
  return p;
}

}  // namespace hcma
