#pragma once

#include <vector>

#include "hcma/checkpoint.hpp"
#include "hcma/image.hpp"
#include "hcma/nn.hpp"
#include "hcma/optim.hpp"
#include "hcma/scene.hpp"

namespace hcma {

constexpr int kEmbedDim = 128;  // d_t
constexpr int kTokenDim = 64;

/// Two-tower contrastive model: frozen after training it supplies the text /
/// label embeddings and image features for alignment and evaluation.
struct TowerParams {
  Tensor token_table;                     // [vocab, 64]
  LinearT<float> t_fc1, t_fc2;            // 64 -> 128 -> 128
  ConvT<float> i_c1, i_c2, i_c3, i_c4;    // 4 stride-2 stages 48/96/192/192
  LinearT<float> i_fc1, i_fc2;            // 192 -> 128 -> 128
  // Temperature is learned as 1/tau (no division op on the tape); clamped to
  // [0.1, 100] after each step, keeping tau in [0.01, 10] and positive.
  Tensor inv_tau;                         // [1]

  ParamList<float> params();
  static TowerParams init(Rng& rng);
  double tau() const { return 1.0 / inv_tau[0]; }
};

/// Batched tape-visible forwards; outputs have unit-norm rows [B, d_t].
Tensor towers_forward_text(Graph& g, const TowerParams& p,
                           const std::vector<std::vector<int>>& token_batch);
Tensor towers_forward_image(Graph& g, const TowerParams& p, const Tensor& x);

Tensor embed_text(const TowerParams& p, const std::vector<int>& tokens);  // [d_t]
Tensor embed_image(const TowerParams& p, const Image& img);               // [d_t]
Tensor embed_image_batch(const TowerParams& p, const std::vector<Image>& imgs);
/// Text-tower embeddings of the 12 category label word pairs, rows in
/// category order. [12, d_t].
Tensor label_embeddings(const TowerParams& p);

struct ContrastiveTrainLog {
  double first_batch_loss = 0.0;  // before any update
  std::vector<double> epoch_loss;
};

/// Symmetric in-batch InfoNCE over (image, caption) pairs. Requires >= 8000
/// scenes; throws numeric_error on divergence.
ContrastiveTrainLog train_contrastive(TowerParams& p, const std::vector<Scene>& scenes,
                                      int epochs, const AdamConfig& opt_cfg, Rng& rng,
                                      int batch_size, int image_side);

struct RetrievalResult {
  double text_to_image = 0.0;
  double image_to_text = 0.0;
};

/// Top-1 retrieval over the pool, both directions. A retrieval counts as
/// correct when the retrieved scene's caption holds the same multiset of
/// tokens as the query's caption: the mean-pooled text tower is bag-of-words,
/// so captions with equal token content map to identical embeddings and are
/// indistinguishable by construction (this also covers exact-duplicate
/// captions, which are common in the closed world).
RetrievalResult retrieval_eval(const TowerParams& p, const std::vector<Scene>& scenes,
                               int image_side);

/// Retrieval core on a precomputed text-by-image similarity matrix [n,n];
/// keys[i] identifies item i's content class.
RetrievalResult retrieval_from_sim(const Tensor& sim,
                                   const std::vector<std::vector<int>>& keys);

/// Sorted category ids of a scene (region-level content key).
std::vector<int> scene_category_key(const Scene& s);

/// Sorted caption tokens of a scene (the retrieval content key).
std::vector<int> scene_caption_key(const Scene& s);

void towers_save(const TowerParams& p, Checkpoint& ck);
TowerParams towers_load(const Checkpoint& ck);

}  // namespace hcma
