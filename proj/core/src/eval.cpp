#include "hcma/eval.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

namespace hcma {

GaussianStats fit_gaussian(const Tensor& features) {
  if (features.shape.size() != 2) throw shape_error("fit_gaussian: features must be [n, d]");
  const int64_t n = features.shape[0], d = features.shape[1];
  if (n < 2) throw eval_error("fit_gaussian: need at least 2 samples");
  GaussianStats g;
  g.n = n;
  g.mu = TensorD({d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) g.mu[j] += double(features[i * d + j]);
  for (int64_t j = 0; j < d; ++j) g.mu[j] /= double(n);
  g.sigma = TensorD({d, d});
  std::vector<double> c(static_cast<size_t>(d));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d; ++j) c[size_t(j)] = double(features[i * d + j]) - g.mu[j];
    for (int64_t j = 0; j < d; ++j)
      for (int64_t k = j; k < d; ++k) g.sigma[j * d + k] += c[size_t(j)] * c[size_t(k)];
  }
  for (int64_t j = 0; j < d; ++j)
    for (int64_t k = j; k < d; ++k) {
      const double v = g.sigma[j * d + k] / double(n - 1);
      g.sigma[j * d + k] = v;
      g.sigma[k * d + j] = v;
    }
  return g;
}

namespace {

using Mat = Eigen::MatrixXd;

Mat to_eigen(const TensorD& t) {
  const int64_t d = t.shape[0];
  Mat m(d, d);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) m(i, j) = t[i * d + j];
  return m;
}

// Symmetric PSD square root; negative eigenvalues are clamped at 0 and their
// magnitude accumulated into clamp_mass.
Mat psd_sqrt(const Mat& a, double& clamp_mass) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw eval_error("frechet_distance: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i)
    if (ev(i) < 0.0) {
      clamp_mass += -ev(i);
      ev(i) = 0.0;
    }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianStats& g1, const GaussianStats& g2, double* clamp_mass) {
  if (g1.mu.shape != g2.mu.shape) throw shape_error("frechet_distance: dimension mismatch");
  const int64_t d = g1.mu.shape[0];
  double mean_term = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double diff = g1.mu[i] - g2.mu[i];
    mean_term += diff * diff;
  }
  const Mat s1 = to_eigen(g1.sigma), s2 = to_eigen(g2.sigma);
  double clamped = 0.0;
  const Mat r1 = psd_sqrt(s1, clamped);
  const Mat inner = psd_sqrt(r1 * s2 * r1, clamped);
  const double d2 = mean_term + s1.trace() + s2.trace() - 2.0 * inner.trace();
  if (clamp_mass != nullptr) *clamp_mass = clamped;
  if (clamped > 1e-6)
    std::cerr << "frechet_distance: warning: clamped eigenvalue mass " << clamped << "\n";
  return std::max(d2, 0.0);
}

double clip_score(const std::vector<Image>& images,
                  const std::vector<std::vector<int>>& texts, const TowerParams& towers) {
  if (images.size() != texts.size()) throw eval_error("clip_score: count mismatch");
  if (images.empty()) throw eval_error("clip_score: empty input");
  const Tensor fi = embed_image_batch(towers, images);
  double sum = 0.0;
  for (size_t i = 0; i < images.size(); ++i) {
    const Tensor ft = embed_text(towers, texts[i]);
    double dot = 0.0;
    for (int64_t k = 0; k < kEmbedDim; ++k) dot += double(fi[int64_t(i) * kEmbedDim + k]) * double(ft[k]);
    sum += dot;
  }
  return sum / double(images.size());
}

std::vector<Image> region_crops(const Image& image, const std::vector<Box>& boxes,
                                int out_side) {
  if (image.side <= 0) throw eval_error("region_crops: empty image");
  if (out_side < 1) throw eval_error("region_crops: bad output side");
  std::vector<Image> crops;
  for (const Box& b : boxes) {
    if (!b.valid()) throw eval_error("region_crops: invalid box");
    const int px0 = int(std::llround(b.x0 * image.side));
    const int py0 = int(std::llround(b.y0 * image.side));
    const int px1 = int(std::llround(b.x1 * image.side));
    const int py1 = int(std::llround(b.y1 * image.side));
    if (px1 - px0 < 1 || py1 - py0 < 1)
      throw eval_error("region_crops: box spans less than one pixel");
    crops.push_back(crop_resize_nearest(image, px0, py0, px1, py1, out_side));
  }
  return crops;
}

double region_label_accuracy(const std::vector<Image>& images,
                             const std::vector<Scene>& scenes, const TowerParams& towers) {
  if (images.empty()) throw eval_error("region_label_accuracy: empty image set");
  if (images.size() != scenes.size()) throw eval_error("region_label_accuracy: count mismatch");
  const Tensor labels = label_embeddings(towers);  // [12, d_t]
  std::vector<Image> crops;
  std::vector<int> truth;
  for (size_t i = 0; i < images.size(); ++i) {
    std::vector<Box> boxes;
    for (const auto& o : scenes[i].objects) boxes.push_back(o.box);
    std::vector<Image> c = region_crops(images[i], boxes);
    for (size_t j = 0; j < c.size(); ++j) {
      crops.push_back(std::move(c[j]));
      truth.push_back(scenes[i].objects[j].category_id);
    }
  }
  if (crops.empty()) throw eval_error("region_label_accuracy: no objects to classify");
  const Tensor f = embed_image_batch(towers, crops);
  int64_t correct = 0;
  for (size_t i = 0; i < crops.size(); ++i) {
    double best = -2.0;
    int arg = -1;
    for (int c = 0; c < vocab::kNumCategories; ++c) {
      double dot = 0.0;
      for (int64_t k = 0; k < kEmbedDim; ++k)
        dot += double(f[int64_t(i) * kEmbedDim + k]) * double(labels[c * kEmbedDim + k]);
      if (dot > best) {
        best = dot;
        arg = c;
      }
    }
    if (arg == truth[i]) ++correct;
  }
  return double(correct) / double(crops.size());
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string EvalReport::serialize() const {
  std::ostringstream os;
  os << "eval_report_v1\n";
  os << "image_fid " << fmt_double(image_fid) << "\n";
  os << "image_clip " << fmt_double(image_clip) << "\n";
  os << "region_fid " << fmt_double(region_fid) << "\n";
  os << "region_clip " << fmt_double(region_clip) << "\n";
  os << "n_real " << n_real << "\n";
  os << "n_generated " << n_generated << "\n";
  os << "config_digest " << config_digest << "\n";
  return os.str();
}

EvalReport EvalReport::parse(const std::string& text) {
  std::istringstream is(text);
  std::string header;
  if (!std::getline(is, header) || header != "eval_report_v1")
    throw eval_error("EvalReport::parse: bad header");
  EvalReport r;
  std::string key;
  bool seen[7] = {};
  while (is >> key) {
    if (key == "image_fid" && (is >> r.image_fid)) seen[0] = true;
    else if (key == "image_clip" && (is >> r.image_clip)) seen[1] = true;
    else if (key == "region_fid" && (is >> r.region_fid)) seen[2] = true;
    else if (key == "region_clip" && (is >> r.region_clip)) seen[3] = true;
    else if (key == "n_real" && (is >> r.n_real)) seen[4] = true;
    else if (key == "n_generated" && (is >> r.n_generated)) seen[5] = true;
    else if (key == "config_digest" && (is >> r.config_digest)) seen[6] = true;
    else throw eval_error("EvalReport::parse: unexpected field '" + key + "'");
  }
  for (bool s : seen)
    if (!s) throw eval_error("EvalReport::parse: missing field");
  return r;
}

std::string EvalReport::table() const {
  char buf[256];
  std::string out;
  out += "                    FID        CLIP\n";
  std::snprintf(buf, sizeof buf, "  image-level  %10.4f  %10.4f\n", image_fid, image_clip);
  out += buf;
  std::snprintf(buf, sizeof buf, "  region-level %10.4f  %10.4f\n", region_fid, region_clip);
  out += buf;
  std::snprintf(buf, sizeof buf, "  (n_real=%lld, n_generated=%lld)\n",
                static_cast<long long>(n_real), static_cast<long long>(n_generated));
  out += buf;
  return out;
}

EvalReport eval_report(const std::vector<Scene>& real_scenes,
                       const std::vector<Image>& gen_images,
                       const std::vector<Scene>& gen_layouts, const TowerParams& towers,
                       uint64_t config_digest) {
  if (real_scenes.size() < 64 || gen_images.size() < 64)
    throw eval_error("eval_report: need at least 64 samples per side");
  if (gen_images.size() != gen_layouts.size())
    throw eval_error("eval_report: generated images and layouts must pair up");
  const int side = gen_images.front().side;
  for (const Image& im : gen_images)
    if (im.side != side) throw eval_error("eval_report: mixed generated image sizes");

  std::vector<Image> real_images;
  for (const Scene& s : real_scenes) real_images.push_back(render(s, side));

  EvalReport r;
  r.n_real = int64_t(real_scenes.size());
  r.n_generated = int64_t(gen_images.size());
  r.config_digest = config_digest;

  // Image level: toy-tower features of whole canvases.
  const GaussianStats g_real = fit_gaussian(embed_image_batch(towers, real_images));
  const GaussianStats g_gen = fit_gaussian(embed_image_batch(towers, gen_images));
  r.image_fid = frechet_distance(g_real, g_gen);
  std::vector<std::vector<int>> gen_caps;
  for (const Scene& s : gen_layouts) gen_caps.push_back(s.caption_tokens);
  r.image_clip = clip_score(gen_images, gen_caps, towers);

  // Region level: per-object crops against their category labels.
  auto collect = [&](const std::vector<Image>& imgs, const std::vector<Scene>& scenes,
                     std::vector<Image>& crops, std::vector<std::vector<int>>& labels) {
    for (size_t i = 0; i < imgs.size(); ++i) {
      std::vector<Box> boxes;
      for (const auto& o : scenes[i].objects) boxes.push_back(o.box);
      std::vector<Image> c = region_crops(imgs[i], boxes);
      for (size_t j = 0; j < c.size(); ++j) {
        crops.push_back(std::move(c[j]));
        labels.push_back(vocab::label_tokens(scenes[i].objects[j].category_id));
      }
    }
  };
  std::vector<Image> real_crops, gen_crops;
  std::vector<std::vector<int>> real_labels, gen_labels;
  collect(real_images, real_scenes, real_crops, real_labels);
  collect(gen_images, gen_layouts, gen_crops, gen_labels);
  if (real_crops.size() < 2 || gen_crops.size() < 2)
    throw eval_error("eval_report: not enough region crops");
  const GaussianStats rg_real = fit_gaussian(embed_image_batch(towers, real_crops));
  const GaussianStats rg_gen = fit_gaussian(embed_image_batch(towers, gen_crops));
  r.region_fid = frechet_distance(rg_real, rg_gen);
  r.region_clip = clip_score(gen_crops, gen_labels, towers);
  return r;
}

}  // namespace hcma
