#include "hcma/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hcma {

ParamList<float> CodecParams::params() {
  ParamList<float> list;
  e1.reg(list, "codec/e1");
  e2.reg(list, "codec/e2");
  e3.reg(list, "codec/e3");
  e4.reg(list, "codec/e4");
  d1.reg(list, "codec/d1");
  d2.reg(list, "codec/d2");
  d3.reg(list, "codec/d3");
  d4.reg(list, "codec/d4");
  return list;
}

CodecParams CodecParams::init(Rng& rng) {
  Rng r = rng.stream("codec-init");
  CodecParams p;
  p.e1 = make_conv<float>(r, 3, 32, 3, 2, 1);
  p.e2 = make_conv<float>(r, 32, 64, 3, 2, 1);
  p.e3 = make_conv<float>(r, 64, 64, 3, 2, 1);
  p.e4 = make_conv<float>(r, 64, kLatentChannels, 1, 1, 0);
  p.d1 = make_conv<float>(r, kLatentChannels, 64, 1, 1, 0);
  p.d2 = make_conv<float>(r, 64, 64, 3, 1, 1);
  p.d3 = make_conv<float>(r, 64, 32, 3, 1, 1);
  p.d4 = make_conv<float>(r, 32, 3, 3, 1, 1);
  p.lat_mean = Tensor::zeros({kLatentChannels});
  p.lat_std = Tensor::full({kLatentChannels}, 1.0f);
  return p;
}

Tensor codec_forward_encode(Graph& g, const CodecParams& p, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != x.dim(3) || x.dim(2) % 8 != 0)
    throw shape_error("codec_encode: expected [B,3,side,side] with side % 8 == 0, got " +
                      shape_str(x.shape));
  Tensor h = g.relu(p.e1.forward(g, x));
  h = g.relu(p.e2.forward(g, h));
  h = g.relu(p.e3.forward(g, h));
  return p.e4.forward(g, h);
}

Tensor codec_forward_decode(Graph& g, const CodecParams& p, const Tensor& z) {
  if (z.rank() != 4 || z.dim(1) != kLatentChannels || z.dim(2) != z.dim(3))
    throw shape_error("codec_decode: expected [B,4,h,h], got " + shape_str(z.shape));
  Tensor h = g.relu(p.d1.forward(g, z));
  h = g.relu(p.d2.forward(g, g.upsample_nearest2(h)));
  h = g.relu(p.d3.forward(g, g.upsample_nearest2(h)));
  return p.d4.forward(g, g.upsample_nearest2(h));
}

Tensor image_to_tensor(const std::vector<Image>& imgs) {
  if (imgs.empty()) throw shape_error("image_to_tensor: empty batch");
  const int side = imgs[0].side;
  Tensor x({int64_t(imgs.size()), 3, side, side});
  float* dst = x.ptr();
  for (const auto& img : imgs) {
    if (img.side != side) throw shape_error("image_to_tensor: mixed image sides");
    std::copy(img.data.begin(), img.data.end(), dst);
    dst += img.data.size();
  }
  return x;
}

std::vector<Image> tensor_to_images(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != x.dim(3))
    throw shape_error("tensor_to_images: expected [B,3,side,side]");
  const int side = static_cast<int>(x.dim(2));
  std::vector<Image> out;
  const float* src = x.ptr();
  for (int64_t b = 0; b < x.dim(0); ++b) {
    Image img(side);
    for (size_t i = 0; i < img.data.size(); ++i)
      img.data[i] = std::clamp(src[i], 0.0f, 1.0f);
    src += img.data.size();
    out.push_back(std::move(img));
  }
  return out;
}

Tensor codec_encode(const CodecParams& p, const Image& img) {
  Graph g;
  Tensor z = codec_forward_encode(g, p, image_to_tensor({img}));
  if (!z.all_finite()) throw numeric_error("codec_encode: non-finite latent");
  return z.reshaped({kLatentChannels, z.dim(2), z.dim(3)});
}

Image codec_decode(const CodecParams& p, const Tensor& z) {
  if (z.rank() != 3) throw shape_error("codec_decode: expected [4,h,h]");
  Graph g;
  Tensor x = codec_forward_decode(g, p, z.reshaped({1, z.dim(0), z.dim(1), z.dim(2)}));
  return tensor_to_images(x)[0];
}

Tensor codec_encode_batch(const CodecParams& p, const std::vector<Image>& imgs) {
  Graph g;
  Tensor z = codec_forward_encode(g, p, image_to_tensor(imgs));
  if (!z.all_finite()) throw numeric_error("codec_encode: non-finite latent");
  return z;
}

namespace {

Tensor apply_channel_affine(const Tensor& z, const Tensor& scale_num, const Tensor& shift,
                            bool divide) {
  const bool single = z.rank() == 3;
  if (!single && z.rank() != 4) throw shape_error("latent must be rank 3 or 4");
  const int64_t C = single ? z.dim(0) : z.dim(1);
  if (C != kLatentChannels) throw shape_error("latent channel count must be 4");
  Tensor out(z.shape);
  const int64_t hw = single ? z.dim(1) * z.dim(2) : z.dim(2) * z.dim(3);
  const int64_t batch = single ? 1 : z.dim(0);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const float s = scale_num[c];
      if (divide && s <= 1e-8f) throw numeric_error("latent std too small to standardize");
      const float* src = z.ptr() + (b * C + c) * hw;
      float* dst = out.ptr() + (b * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i)
        dst[i] = divide ? (src[i] - shift[c]) / s : src[i] * s + shift[c];
    }
  return out;
}

}  // namespace

Tensor standardize_latent(const CodecParams& p, const Tensor& z) {
  return apply_channel_affine(z, p.lat_std, p.lat_mean, true);
}

Tensor destandardize_latent(const CodecParams& p, const Tensor& z) {
  return apply_channel_affine(z, p.lat_std, p.lat_mean, false);
}

CodecTrainLog codec_train(CodecParams& p, const std::vector<Scene>& scenes, int epochs,
                          const AdamConfig& opt_cfg, Rng& rng, int batch_size,
                          int image_side) {
  if (scenes.size() < 2000) throw std::invalid_argument("codec_train: needs >= 2000 scenes");
  if (epochs < 1) throw std::invalid_argument("codec_train: epochs >= 1");

  std::vector<Image> images;
  images.reserve(scenes.size());
  for (const auto& s : scenes) images.push_back(render(s, image_side));

  Adam opt(opt_cfg);
  Rng shuffle_rng = rng.stream("codec-shuffle");
  auto plist = p.params();
  CodecTrainLog log;

  std::vector<int> order(images.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, int64_t(i) - 1)]);
    double mse_sum = 0.0;
    int64_t count = 0;
    for (size_t start = 0; start < order.size(); start += batch_size) {
      const size_t end = std::min(order.size(), start + batch_size);
      std::vector<Image> batch;
      for (size_t i = start; i < end; ++i) batch.push_back(images[order[i]]);
      Tensor x = image_to_tensor(batch);

      Graph g;
      track_params(g, plist);
      Tensor z = codec_forward_encode(g, p, x);
      Tensor recon = codec_forward_decode(g, p, z);
      Tensor loss = g.mean_all(g.mul(g.sub(recon, x), g.sub(recon, x)));
      const double loss_v = loss[0];
      if (!std::isfinite(loss_v)) throw numeric_error("codec_train: loss diverged");
      g.backward(loss);
      auto grads = collect_grads(g, plist);
      untrack_params(plist);
      opt.step(param_ptrs(plist), grads);

      mse_sum += loss_v * double(end - start);
      count += int64_t(end - start);
    }
    log.epoch_mse.push_back(mse_sum / double(count));
  }

  // Latent statistics over the training set, for pre-diffusion standardization.
  double sum[kLatentChannels] = {0}, sumsq[kLatentChannels] = {0};
  int64_t n = 0;
  for (size_t start = 0; start < images.size(); start += batch_size) {
    const size_t end = std::min(images.size(), start + batch_size);
    std::vector<Image> batch(images.begin() + start, images.begin() + end);
    Tensor z = codec_encode_batch(p, batch);
    const int64_t hw = z.dim(2) * z.dim(3);
    for (int64_t b = 0; b < z.dim(0); ++b)
      for (int64_t c = 0; c < kLatentChannels; ++c) {
        const float* src = z.ptr() + (b * kLatentChannels + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          sum[c] += src[i];
          sumsq[c] += double(src[i]) * src[i];
        }
      }
    n += z.dim(0) * hw;
  }
  for (int c = 0; c < kLatentChannels; ++c) {
    const double mean = sum[c] / double(n);
    const double var = std::max(0.0, sumsq[c] / double(n) - mean * mean);
    p.lat_mean[c] = float(mean);
    p.lat_std[c] = float(std::sqrt(var));
  }
  return log;
}

void codec_save(const CodecParams& p, Checkpoint& ck) {
  save_params(ck, const_cast<CodecParams&>(p).params());
  ck.add("codec/lat_mean", p.lat_mean.detached_copy());
  ck.add("codec/lat_std", p.lat_std.detached_copy());
}

CodecParams codec_load(const Checkpoint& ck) {
  Rng dummy(0);
  CodecParams p = CodecParams::init(dummy);
  load_params(ck, p.params());
  p.lat_mean = ck.get("codec/lat_mean").detached_copy();
  p.lat_std = ck.get("codec/lat_std").detached_copy();
  return p;
}

}  // namespace hcma
