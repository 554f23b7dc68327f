#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace hcma {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Run-level knobs shared by every pipeline stage. Parsed from a flat
/// `key = value` text file; unknown keys are errors so typos cannot silently
/// fall back to defaults.
struct RunConfig {
  uint64_t seed = 1234;
  int image_side = 128;

  int train_scenes = 8000;
  int codec_scenes = 2000;
  int holdout_scenes = 512;
  int min_objects = 1;
  int max_objects = 4;

  int codec_epochs = 20;
  int towers_epochs = 30;
  int align_epochs = 20;
  int diffusion_epochs = 40;
  int batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 5e-4;

  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double eta = 0.1;
  int backtrack = 0;

  std::string sampler_mode = "ddim";  // "ddim" or "literal"
  int sample_steps = 50;
  int sample_count = 256;
  int diffusion_T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  void validate() const;  // throws config_error
  /// Canonical text form (fixed key order, full float precision).
  std::string serialize() const;
  uint64_t digest() const;
  /// Digest over the fields that pin the trained artifacts. The sampling-time
  /// knobs (sampler_mode, sample_steps, sample_count, and the guidance knobs
  /// lambda1/lambda2/eta/backtrack) are excluded, so overriding them — as the
  /// ablation does — keeps existing checkpoints valid. The full digest(),
  /// which covers every field, is recorded in manifests and reports.
  uint64_t train_digest() const;

  static RunConfig parse_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace hcma
