#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcma/image.hpp"
#include "hcma/scene.hpp"
#include "hcma/tensor.hpp"
#include "hcma/towers.hpp"

namespace hcma {

struct eval_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mean and unbiased covariance of a feature sample, kept in double precision
/// so the Frechet identities hold to tight tolerances.
struct GaussianStats {
  TensorD mu;     // [d]
  TensorD sigma;  // [d, d], symmetric by construction
  int64_t n = 0;
};

/// features [n, d], n >= 2.
GaussianStats fit_gaussian(const Tensor& features);

/// Squared Frechet distance ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2
/// S1^1/2)^1/2). Matrix square roots use symmetric eigendecomposition with
/// eigenvalues clamped at 0; the clamped magnitude is written to clamp_mass
/// when given and warned to stderr above 1e-6.
double frechet_distance(const GaussianStats& g1, const GaussianStats& g2,
                        double* clamp_mass = nullptr);

/// Mean cosine between each image and its caption under the frozen towers.
double clip_score(const std::vector<Image>& images,
                  const std::vector<std::vector<int>>& texts, const TowerParams& towers);

/// One axis-aligned crop per box, nearest-neighbor resized to out_side.
/// A box spanning less than one pixel is an error.
std::vector<Image> region_crops(const Image& image, const std::vector<Box>& boxes,
                                int out_side = 64);

/// Fraction of object crops whose nearest label embedding (argmax cosine over
/// the 12 categories) matches the object's category. images[i] pairs with
/// scenes[i]'s boxes; empty input or zero total crops is an error.
double region_label_accuracy(const std::vector<Image>& images,
                             const std::vector<Scene>& scenes, const TowerParams& towers);

/// Table-1-shaped summary: image-level and region-level FID and CLIP-score.
struct EvalReport {
  double image_fid = 0.0;
  double image_clip = 0.0;
  double region_fid = 0.0;
  double region_clip = 0.0;
  int64_t n_real = 0;
  int64_t n_generated = 0;
  uint64_t config_digest = 0;

  std::string serialize() const;                     // fixed schema, exact round trip
  static EvalReport parse(const std::string& text);  // throws eval_error on bad input
  std::string table() const;                         // fixed-width display table
};

/// Feature extractor is the frozen toy image tower, so absolute FID values
/// are not comparable to Inception-based numbers. Real renders are rasterized
/// at the generated images' resolution. Requires >= 64 samples per side.
EvalReport eval_report(const std::vector<Scene>& real_scenes,
                       const std::vector<Image>& gen_images,
                       const std::vector<Scene>& gen_layouts, const TowerParams& towers,
                       uint64_t config_digest);

}  // namespace hcma
