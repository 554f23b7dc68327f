#pragma once

#include <filesystem>
#include <string>

#include "hcma/config.hpp"
#include "hcma/eval.hpp"

namespace hcma {

/// Contract violations surfaced by the command layer (missing prerequisites,
/// mixed-config artifacts, bad requests). Maps to exit code 1; io_error and
/// filesystem failures map to exit code 2.
struct pipeline_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Layout of one run directory.
struct RunPaths {
  std::filesystem::path out;

  std::filesystem::path dataset() const { return out / "dataset.jsonl"; }
  std::filesystem::path holdout() const { return out / "holdout.jsonl"; }
  std::filesystem::path gen_summary() const { return out / "gen_summary.txt"; }
  std::filesystem::path checkpoint(const std::string& stage) const {
    return out / (stage + ".ckpt");
  }
  std::filesystem::path loss_log(const std::string& stage) const {
    return out / (stage + "_loss.txt");
  }
  std::filesystem::path stage_time(const std::string& stage) const {
    return out / (stage + "_time.txt");
  }
  std::filesystem::path samples_dir() const { return out / "samples"; }
  std::filesystem::path sample_image(int index) const;
  std::filesystem::path sample_layouts() const { return samples_dir() / "layouts.jsonl"; }
  std::filesystem::path manifest() const { return samples_dir() / "manifest.jsonl"; }
  std::filesystem::path report() const { return out / "report.txt"; }
  std::filesystem::path ablation() const { return out / "ablation.txt"; }
};

/// Deterministic dataset + holdout files and a per-category summary.
void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out);

/// stage in {codec, towers, align, diffusion}. Prerequisites: codec and
/// towers need only the dataset; align needs codec + towers; diffusion needs
/// all three. Missing prerequisites raise pipeline_error naming the stage;
/// checkpoints from a different training config are rejected.
void cmd_train(const std::string& stage, const RunConfig& cfg,
               const std::filesystem::path& out);

/// Samples cfg.sample_count fresh layouts, writes P6 images, the layout list
/// and a JSONL manifest with per-step Omega traces.
void cmd_sample(const RunConfig& cfg, const std::filesystem::path& out);

/// Evaluates the sample directory against the holdout set; writes and
/// returns the report.
EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& out);

/// One ablation row: the sampling-time guidance setting plus its metrics.
struct AblationRow {
  double lambda1 = 0.0, lambda2 = 0.0;
  EvalReport report;
  double region_accuracy = 0.0;
};

/// Re-samples and evaluates with (lambda1, lambda2) in {(0,0), (0,1), (1,0),
/// (1,1)} under a shared seed; writes a 4-row table and returns the rows.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out);

/// Rendering of the ablation table (also written to RunPaths::ablation()).
std::string ablation_table(const std::vector<AblationRow>& rows, const RunConfig& cfg);

}  // namespace hcma
