#pragma once

#include <vector>

#include "hcma/checkpoint.hpp"
#include "hcma/image.hpp"
#include "hcma/nn.hpp"
#include "hcma/optim.hpp"
#include "hcma/scene.hpp"

namespace hcma {

/// Deterministic convolutional autoencoder: 3 x side x side images to
/// 4 x side/8 x side/8 latents and back. Stands in for a frozen VAE.
struct CodecParams {
  ConvT<float> e1, e2, e3, e4;  // 3 stride-2 stages (32, 64, 64) then 1x1 to 4
  ConvT<float> d1, d2, d3, d4;  // mirror with nearest-neighbor upsampling
  Tensor lat_mean, lat_std;     // per-channel standardization stats, [4] each

  ParamList<float> params();  // trainable tensors only (stats excluded)
  static CodecParams init(Rng& rng);
};

constexpr int kLatentChannels = 4;

/// Tape-visible forwards; x is [B,3,side,side], z is [B,4,side/8,side/8].
/// Decode output is unclamped (losses are computed pre-clamp).
Tensor codec_forward_encode(Graph& g, const CodecParams& p, const Tensor& x);
Tensor codec_forward_decode(Graph& g, const CodecParams& p, const Tensor& z);

Tensor image_to_tensor(const std::vector<Image>& imgs);        // [B,3,side,side]
std::vector<Image> tensor_to_images(const Tensor& x);          // clamps to [0,1]

Tensor codec_encode(const CodecParams& p, const Image& img);   // [4,side/8,side/8]
Image codec_decode(const CodecParams& p, const Tensor& z);     // clamped to [0,1]
Tensor codec_encode_batch(const CodecParams& p, const std::vector<Image>& imgs);

/// Standardize / undo with the recorded per-channel stats. z may be a single
/// latent [4,h,w] or a batch [B,4,h,w].
Tensor standardize_latent(const CodecParams& p, const Tensor& z);
Tensor destandardize_latent(const CodecParams& p, const Tensor& z);

struct CodecTrainLog {
  std::vector<double> epoch_mse;  // per-epoch mean reconstruction MSE
};

/// Train by MSE on rendered scenes and record latent stats over the training
/// set. Requires >= 2000 scenes; throws numeric_error on divergence (NaN loss).
CodecTrainLog codec_train(CodecParams& p, const std::vector<Scene>& scenes, int epochs,
                          const AdamConfig& opt_cfg, Rng& rng, int batch_size,
                          int image_side);

void codec_save(const CodecParams& p, Checkpoint& ck);
CodecParams codec_load(const Checkpoint& ck);

}  // namespace hcma
