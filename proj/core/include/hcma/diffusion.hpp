#pragma once

#include <vector>

#include "hcma/align.hpp"
#include "hcma/checkpoint.hpp"
#include "hcma/codec.hpp"
#include "hcma/nn.hpp"
#include "hcma/optim.hpp"
#include "hcma/scene.hpp"
#include "hcma/schedule.hpp"
#include "hcma/towers.hpp"

namespace hcma {

struct sampling_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kCtxWidth = 128;    // cross-attention context width
constexpr int kCtxCaption = 16;   // caption slots (max caption is 15 tokens)
constexpr int kCtxGround = 4;     // grounding slots (max objects per scene)
constexpr int kTembDim = 256;
constexpr int kUNetBase = 64;     // width at full latent resolution
constexpr int kUNetMid = 128;     // width at the two downsampled resolutions

struct UNetResBlock {
  ConvT<float> c1, c2;
  LinearT<float> temb;  // kTembDim -> channels, added per sample and channel
  void reg(ParamList<float>& list, const std::string& prefix);
};

struct UNetCrossAttn {
  LinearT<float> wq, wk, wv, wo;  // q from latent tokens, k/v from context
  void reg(ParamList<float>& list, const std::string& prefix);
};

/// 3-resolution conditional U-Net over 4 x h x h latents with one
/// cross-attention block per resolution. Context is a fixed sequence of 16
/// caption-token slots (pad-token filled) plus 4 grounding slots (learned
/// null token where no box exists).
struct UNetParams {
  Tensor ctx_table;           // [vocab, kCtxWidth] caption slot embeddings
  Tensor null_ground;         // [1, kCtxWidth]
  LinearT<float> ground_proj; // d_t + 64 Fourier -> kCtxWidth
  LinearT<float> temb1, temb2;
  ConvT<float> conv_in;
  UNetResBlock rb_d1; UNetCrossAttn xa_d1; ConvT<float> down1;
  UNetResBlock rb_d2; UNetCrossAttn xa_d2; ConvT<float> down2;
  UNetResBlock rb_m1; UNetCrossAttn xa_m;  UNetResBlock rb_m2;
  ConvT<float> up_conv2; UNetResBlock rb_u2; UNetCrossAttn xa_u2;
  ConvT<float> up_conv1; UNetResBlock rb_u1; UNetCrossAttn xa_u1;
  ConvT<float> conv_out;

  ParamList<float> params();
  static UNetParams init(Rng& rng);
};

/// Conditioning inputs for one sample: caption tokens plus labeled boxes.
struct LayoutSpec {
  std::vector<int> caption_tokens;
  std::vector<std::pair<int, Box>> objects;  // (category_id, box)

  static LayoutSpec of(const Scene& s);
};

/// Build the [B, 20, kCtxWidth] cross-attention context. label_mat is
/// label_embeddings(towers) [12, d_t] (constants).
Tensor unet_context(Graph& g, const UNetParams& p, const std::vector<LayoutSpec>& layouts,
                    const Tensor& label_mat);

/// Sinusoidal timestep features [B, 64] (constants).
Tensor timestep_features(const std::vector<int>& ts);

/// eps-hat = U-Net(z, t, context); output shape equals z's. When attn_probs
/// is given, each cross-attention block's probabilities [B, HW, 20] are
/// copied out for inspection.
Tensor unet_forward(Graph& g, const UNetParams& p, const Tensor& z,
                    const std::vector<int>& ts, const Tensor& ctx,
                    std::vector<Tensor>* attn_probs = nullptr);

struct DiffusionTrainLog {
  std::vector<double> epoch_loss;
};

/// Algorithm-1 training: noise the standardized latent, apply the alignment
/// update (constant w.r.t. the noise loss), regress the injected noise.
/// Only the U-Net parameters are updated.
DiffusionTrainLog train_diffusion(UNetParams& p, const std::vector<Scene>& scenes,
                                  const CodecParams& codec, const TowerParams& towers,
                                  const AlignEncoderParams& align, const NoiseSchedule& sched,
                                  const AlignmentConfig& acfg, int epochs,
                                  const AdamConfig& opt_cfg, Rng& rng, int batch_size,
                                  int image_side);

struct SampleResult {
  Tensor latents;                    // [B, 4, h, h] final standardized latents
  std::vector<Image> images;         // decoded, clamped
  std::vector<int> step_timesteps;   // visited t per sampler step
  // traces[step][sample]: Omega values at the pre-alignment latent (empty
  // per-step when guidance is inactive)
  std::vector<std::vector<AlignLossValues>> traces;
};

/// Interleaved align-then-denoise sampling over a uniformly strided timestep
/// subsequence. mode is "ddim" or "literal" (z_prev = z_a - gamma_t *
/// eps_hat, gamma_t = beta_t / sqrt(1 - alpha_bar_t)). When init_z is given
/// the walk starts at timestep t_start with that latent instead of N(0, I)
/// at T-1. Throws sampling_error naming the step on non-finite latents.
SampleResult sample(const std::vector<LayoutSpec>& layouts, const UNetParams& unet,
                    const AlignEncoderParams& align, const TowerParams& towers,
                    const CodecParams& codec, const NoiseSchedule& sched,
                    const AlignmentConfig& acfg, int steps, const std::string& mode,
                    Rng& rng, const Tensor* init_z = nullptr, int t_start = -1);

void unet_save(const UNetParams& p, Checkpoint& ck);
UNetParams unet_load(const Checkpoint& ck);

}  // namespace hcma
