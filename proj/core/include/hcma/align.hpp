#pragma once

#include <utility>
#include <vector>

#include "hcma/checkpoint.hpp"
#include "hcma/codec.hpp"
#include "hcma/nn.hpp"
#include "hcma/optim.hpp"
#include "hcma/scene.hpp"
#include "hcma/schedule.hpp"
#include "hcma/towers.hpp"

namespace hcma {

constexpr int kDv = 512;       // ViT width
constexpr int kDk = 64;        // flattened 4x4 latent patch (4 channels)
constexpr int kHeads = 8;
constexpr int kBlocks = 6;
constexpr int kMlpRatio = 4;
constexpr int kPatch = 4;      // latent cells per patch side

template <class T>
struct AlignBlockT {
  LayerNormT<T> ln1, ln2;
  LinearT<T> wq, wk, wv, wo;
  LinearT<T> mlp1, mlp2;
  void reg(ParamList<T>& list, const std::string& prefix);
};

/// ViT over noisy-latent patch tokens with a global (C2IA) and a region-level
/// (O2RA) head, both mapping into the frozen tower embedding space.
template <class T>
struct AlignEncoderParamsT {
  int grid = 4;  // G = image_side / 32; N = grid * grid patch tokens
  LinearT<T> patch_fc1, patch_fc2;  // d_k -> d_v -> d_v
  TensorT<T> cls;                   // [1, d_v]
  TensorT<T> pos;                   // [N + 1, d_v]
  std::vector<AlignBlockT<T>> blocks;
  LayerNormT<T> ln_f;
  LinearT<T> c2ia_fc1, c2ia_fc2, c2ia_fc3;  // d_v -> d_v -> d_v -> d_t
  LinearT<T> o2ra_fc1, o2ra_fc2;            // d_v -> 256 -> d_t

  int tokens() const { return grid * grid + 1; }
  ParamList<T> params();
  static AlignEncoderParamsT init(Rng& rng, int grid);
};

using AlignEncoderParams = AlignEncoderParamsT<float>;

template <class To, class From>
AlignEncoderParamsT<To> cast_align_params(const AlignEncoderParamsT<From>& src);

/// z [B,4,h,h] -> patch tokens with [CLS] prepended and positions added,
/// [B, N+1, d_v]. h must equal grid * kPatch.
template <class T>
TensorT<T> tokenize_latent(GraphT<T>& g, const AlignEncoderParamsT<T>& p,
                           const TensorT<T>& z);

/// Full ViT encode: returns (Z^G [B, d_v], Z^L [B, N, d_v]). When attn_probs
/// is given, the per-block attention probabilities [B*heads, S, S] are copied
/// out for inspection.
template <class T>
std::pair<TensorT<T>, TensorT<T>> encode_latent(GraphT<T>& g,
                                                const AlignEncoderParamsT<T>& p,
                                                const TensorT<T>& z,
                                                std::vector<TensorT<T>>* attn_probs = nullptr);

template <class T>
TensorT<T> c2ia(GraphT<T>& g, const AlignEncoderParamsT<T>& p, const TensorT<T>& zg);

/// zl [N, d_v] (one sample), box weights [N, M] (constants) -> f^L [M, d_t].
template <class T>
TensorT<T> o2ra(GraphT<T>& g, const AlignEncoderParamsT<T>& p, const TensorT<T>& zl,
                const TensorT<T>& weights);

/// Omega^G = 1 - cos(f_g, f_c); scalar in [0, 2].
template <class T>
TensorT<T> global_loss(GraphT<T>& g, const TensorT<T>& f_g, const TensorT<T>& f_c);

/// Omega^L = mean_i (1 - cos(f_l[i], labels[i])); M = 0 gives constant 0.
template <class T>
TensorT<T> local_loss(GraphT<T>& g, const TensorT<T>& f_l, const TensorT<T>& labels);

struct AlignmentConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double eta = 0.1;
  bool backtrack = false;
  double halve = 0.5;
  int max_halvings = 5;
};

/// Per-sample conditioning for the alignment losses.
template <class T>
struct AlignTargetsT {
  TensorT<T> f_c;          // [d_t]
  TensorT<T> labels;       // [M, d_t] (M may be 0)
  TensorT<T> box_weights;  // [N, M] coverage fractions, constants
};

using AlignTargets = AlignTargetsT<float>;

struct AlignLossValues {
  double omega_g = 0.0;
  double omega_l = 0.0;
};

/// Per-sample combined losses lambda1*Omega^G + lambda2*Omega^L as scalar
/// tensors on g (one ViT pass for the whole batch). Heads whose lambda is 0
/// are skipped. `parts` receives the raw Omega values when non-null.
template <class T>
std::vector<TensorT<T>> align_losses(GraphT<T>& g, const AlignEncoderParamsT<T>& p,
                                     const TensorT<T>& z,
                                     const std::vector<AlignTargetsT<T>>& targets,
                                     T lambda1, T lambda2,
                                     std::vector<AlignLossValues>* parts = nullptr);

template <class T>
struct AlignStepResultT {
  TensorT<T> z;                         // aligned latents [B,4,h,h]
  std::vector<AlignLossValues> before;  // Omega at the input (empty if skipped)
  std::vector<double> eta_used;         // per-sample step size after backtracking
};

/// The alignment update z^(a) = z - eta * grad_z(lambda1*Omega^G +
/// lambda2*Omega^L). eta = 0 or lambda1 = lambda2 = 0 returns z bit-exactly
/// (no forward pass). With backtracking, eta is halved per sample until the
/// combined loss does not increase or max_halvings is reached.
template <class T>
AlignStepResultT<T> align_step(const AlignEncoderParamsT<T>& p, const TensorT<T>& z,
                               const std::vector<AlignTargetsT<T>>& targets,
                               const AlignmentConfig& cfg);

/// Build per-scene targets from frozen tower outputs. label_mat is
/// label_embeddings(towers) [12, d_t].
AlignTargets make_align_targets(const Scene& s, const Tensor& caption_embed,
                                const Tensor& label_mat, int grid);

struct AlignTrainLog {
  std::vector<double> epoch_loss;
};

/// Train the alignment encoder on q_sample-noised standardized latents of
/// real scenes against frozen tower targets, minimizing the mean combined
/// loss. Codec and towers stay untouched.
AlignTrainLog train_align_encoder(AlignEncoderParams& p, const std::vector<Scene>& scenes,
                                  const CodecParams& codec, const TowerParams& towers,
                                  const NoiseSchedule& sched, int epochs,
                                  const AdamConfig& opt_cfg, Rng& rng, int batch_size,
                                  int image_side, double lambda1, double lambda2);

void align_save(const AlignEncoderParams& p, Checkpoint& ck);
AlignEncoderParams align_load(const Checkpoint& ck, int grid);

}  // namespace hcma
