#include "hcma/pipeline.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hcma/align.hpp"
#include "hcma/codec.hpp"
#include "hcma/diffusion.hpp"
#include "hcma/towers.hpp"

namespace hcma {

namespace fs = std::filesystem;

std::filesystem::path RunPaths::sample_image(int index) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%04d.ppm", index);
  return samples_dir() / buf;
}

namespace {

DatasetConfig dataset_config(const RunConfig& cfg) {
  DatasetConfig dc;
  dc.min_objects = cfg.min_objects;
  dc.max_objects = cfg.max_objects;
  return dc;
}

std::vector<Scene> make_scenes(const RunConfig& cfg, const std::string& stream, int count) {
  Rng rng = Rng(cfg.seed).stream(stream);
  const DatasetConfig dc = dataset_config(cfg);
  std::vector<Scene> scenes;
  scenes.reserve(size_t(count));
  for (int i = 0; i < count; ++i) scenes.push_back(sample_scene(dc, rng.next_u64()));
  return scenes;
}

std::vector<Scene> load_scenes(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path))
    throw pipeline_error("missing " + path.filename().string() + "; run " + producer + " first");
  return load_dataset(path);
}

void write_loss_log(const fs::path& path, const std::vector<double>& losses) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path.string());
  for (size_t i = 0; i < losses.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "epoch %zu loss %.17g\n", i + 1, losses[i]);
    out << buf;
  }
}

Checkpoint load_stage_checkpoint(const RunPaths& paths, const std::string& stage,
                                 const std::string& wanted_by, uint64_t train_digest) {
  const fs::path p = paths.checkpoint(stage);
  if (!fs::exists(p))
    throw pipeline_error(wanted_by + " requires the '" + stage +
                         "' checkpoint; run `train " + stage + "` first");
  Checkpoint ck = Checkpoint::load(p);
  if (ck.digest() != train_digest)
    throw pipeline_error("checkpoint " + p.filename().string() +
                         " was trained under a different config (digest mismatch)");
  return ck;
}

void save_stage_checkpoint(const RunPaths& paths, const std::string& stage,
                           Checkpoint& ck, uint64_t train_digest) {
  ck.set_digest(train_digest);
  ck.save(paths.checkpoint(stage));
}

AlignmentConfig alignment_config(const RunConfig& cfg) {
  AlignmentConfig a;
  a.lambda1 = cfg.lambda1;
  a.lambda2 = cfg.lambda2;
  a.eta = cfg.eta;
  a.backtrack = cfg.backtrack != 0;
  return a;
}

AdamConfig adam_config(const RunConfig& cfg) {
  AdamConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  return oc;
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  RunPaths paths{out};
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw io_error("cannot create output directory " + out.string());

  const std::vector<Scene> train = make_scenes(cfg, "dataset-train", cfg.train_scenes);
  const std::vector<Scene> holdout = make_scenes(cfg, "dataset-holdout", cfg.holdout_scenes);
  save_dataset(paths.dataset(), train);
  save_dataset(paths.holdout(), holdout);

  int64_t counts[vocab::kNumCategories] = {};
  int64_t total = 0;
  for (const Scene& s : train)
    for (const auto& o : s.objects) {
      ++counts[o.category_id];
      ++total;
    }
  std::ostringstream sum;
  sum << "config_digest " << cfg.digest() << "\n";
  sum << "train_scenes " << train.size() << "\n";
  sum << "holdout_scenes " << holdout.size() << "\n";
  sum << "total_objects " << total << "\n";
  for (int c = 0; c < vocab::kNumCategories; ++c)
    sum << "category \"" << vocab::category_name(c) << "\" " << counts[c] << "\n";
  std::ofstream f(paths.gen_summary());
  if (!f) throw io_error("cannot write " + paths.gen_summary().string());
  f << sum.str();
  std::cout << sum.str();
}

void cmd_train(const std::string& stage, const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunPaths paths{out};
  const uint64_t td = cfg.train_digest();
  const std::vector<Scene> train = load_scenes(paths.dataset(), "gen-data");
  if (int64_t(train.size()) < cfg.train_scenes)
    throw pipeline_error("dataset has fewer scenes than the config requests");
  Rng rng = Rng(cfg.seed).stream("train-" + stage);
  const AdamConfig oc = adam_config(cfg);
  const int grid = cfg.image_side / 32;

  if (stage == "codec") {
    std::vector<Scene> subset(train.begin(), train.begin() + cfg.codec_scenes);
    CodecParams p = CodecParams::init(rng);
    CodecTrainLog log = codec_train(p, subset, cfg.codec_epochs, oc, rng, cfg.batch_size,
                                    cfg.image_side);
    Checkpoint ck;
    codec_save(p, ck);
    save_stage_checkpoint(paths, stage, ck, td);
    write_loss_log(paths.loss_log(stage), log.epoch_mse);
  } else if (stage == "towers") {
    TowerParams p = TowerParams::init(rng);
    ContrastiveTrainLog log = train_contrastive(p, train, cfg.towers_epochs, oc, rng,
                                                cfg.batch_size, cfg.image_side);
    Checkpoint ck;
    towers_save(p, ck);
    save_stage_checkpoint(paths, stage, ck, td);
    write_loss_log(paths.loss_log(stage), log.epoch_loss);
  } else if (stage == "align") {
    const CodecParams codec =
        codec_load(load_stage_checkpoint(paths, "codec", "align", td));
    const TowerParams towers =
        towers_load(load_stage_checkpoint(paths, "towers", "align", td));
    const NoiseSchedule sched =
        NoiseSchedule::make(cfg.diffusion_T, cfg.beta_start, cfg.beta_end);
    AlignEncoderParams p = AlignEncoderParams::init(rng, grid);
    AlignTrainLog log = train_align_encoder(p, train, codec, towers, sched, cfg.align_epochs,
                                            oc, rng, cfg.batch_size, cfg.image_side,
                                            cfg.lambda1, cfg.lambda2);
    Checkpoint ck;
    align_save(p, ck);
    save_stage_checkpoint(paths, stage, ck, td);
    write_loss_log(paths.loss_log(stage), log.epoch_loss);
  } else if (stage == "diffusion") {
    const CodecParams codec =
        codec_load(load_stage_checkpoint(paths, "codec", "diffusion", td));
    const TowerParams towers =
        towers_load(load_stage_checkpoint(paths, "towers", "diffusion", td));
    const AlignEncoderParams align =
        align_load(load_stage_checkpoint(paths, "align", "diffusion", td), grid);
    const NoiseSchedule sched =
        NoiseSchedule::make(cfg.diffusion_T, cfg.beta_start, cfg.beta_end);
    UNetParams p = UNetParams::init(rng);
    DiffusionTrainLog log =
        train_diffusion(p, train, codec, towers, align, sched, alignment_config(cfg),
                        cfg.diffusion_epochs, oc, rng, cfg.batch_size, cfg.image_side);
    Checkpoint ck;
    unet_save(p, ck);
    save_stage_checkpoint(paths, stage, ck, td);
    write_loss_log(paths.loss_log(stage), log.epoch_loss);
  } else {
    throw pipeline_error("unknown training stage '" + stage +
                         "' (expected codec, towers, align or diffusion)");
  }

  // Wall time per stage; the acceptance gates on the training budget read it.
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream tf(paths.stage_time(stage));
  if (!tf) throw io_error("cannot write " + paths.stage_time(stage).string());
  char buf[64];
  std::snprintf(buf, sizeof buf, "wall_seconds %.3f\n", secs);
  tf << buf;
}

void cmd_sample(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  RunPaths paths{out};
  const uint64_t td = cfg.train_digest();
  const CodecParams codec = codec_load(load_stage_checkpoint(paths, "codec", "sample", td));
  const TowerParams towers = towers_load(load_stage_checkpoint(paths, "towers", "sample", td));
  const int grid = cfg.image_side / 32;
  const AlignEncoderParams align =
      align_load(load_stage_checkpoint(paths, "align", "sample", td), grid);
  const UNetParams unet = unet_load(load_stage_checkpoint(paths, "diffusion", "sample", td));
  const NoiseSchedule sched =
      NoiseSchedule::make(cfg.diffusion_T, cfg.beta_start, cfg.beta_end);
  const AlignmentConfig acfg = alignment_config(cfg);

  std::error_code ec;
  fs::create_directories(paths.samples_dir(), ec);
  if (ec) throw io_error("cannot create " + paths.samples_dir().string());

  const std::vector<Scene> layouts = make_scenes(cfg, "sample-layouts", cfg.sample_count);
  save_dataset(paths.sample_layouts(), layouts);

  std::ofstream mf(paths.manifest());
  if (!mf) throw io_error("cannot write " + paths.manifest().string());

  const Rng root = Rng(cfg.seed).stream("sample");
  const int kBatch = 32;
  for (int start = 0, batch_idx = 0; start < cfg.sample_count; start += kBatch, ++batch_idx) {
    const int b = std::min(kBatch, cfg.sample_count - start);
    std::vector<LayoutSpec> ls;
    for (int j = 0; j < b; ++j) ls.push_back(LayoutSpec::of(layouts[size_t(start + j)]));
    Rng r = root.stream("batch-" + std::to_string(batch_idx));
    SampleResult res = sample(ls, unet, align, towers, codec, sched, acfg, cfg.sample_steps,
                              cfg.sampler_mode, r);
    for (int j = 0; j < b; ++j) {
      write_ppm(res.images[size_t(j)], paths.sample_image(start + j));
      nlohmann::ordered_json rec;
      rec["index"] = start + j;
      rec["image"] = paths.sample_image(start + j).filename().string();
      rec["seed"] = cfg.seed;
      rec["mode"] = cfg.sampler_mode;
      rec["steps"] = cfg.sample_steps;
      rec["lambda1"] = cfg.lambda1;
      rec["lambda2"] = cfg.lambda2;
      rec["eta"] = cfg.eta;
      rec["config_digest"] = std::to_string(cfg.digest());
      rec["train_digest"] = std::to_string(td);
      auto og = nlohmann::json::array(), ol = nlohmann::json::array();
      for (const auto& step : res.traces) {
        if (step.empty()) continue;  // guidance inactive: no Omega evaluations
        og.push_back(step[size_t(j)].omega_g);
        ol.push_back(step[size_t(j)].omega_l);
      }
      rec["omega_g"] = og;
      rec["omega_l"] = ol;
      mf << rec.dump() << "\n";
    }
  }
}

EvalReport cmd_eval(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  RunPaths paths{out};
  const uint64_t td = cfg.train_digest();
  const TowerParams towers = towers_load(load_stage_checkpoint(paths, "towers", "eval", td));
  const std::vector<Scene> holdout = load_scenes(paths.holdout(), "gen-data");
  const std::vector<Scene> layouts = load_scenes(paths.sample_layouts(), "sample");
  std::vector<Image> images;
  for (int i = 0; i < int(layouts.size()); ++i) {
    const fs::path p = paths.sample_image(i);
    if (!fs::exists(p)) throw pipeline_error("missing sampled image " + p.string());
    images.push_back(read_ppm(p));
  }
  EvalReport report = eval_report(holdout, images, layouts, towers, cfg.digest());
  std::ofstream f(paths.report());
  if (!f) throw io_error("cannot write " + paths.report().string());
  f << report.serialize();
  std::cout << report.table();
  return report;
}

std::string ablation_table(const std::vector<AblationRow>& rows, const RunConfig& cfg) {
  std::ostringstream os;
  os << "config_digest " << cfg.digest() << " seed " << cfg.seed << " samples "
     << cfg.sample_count << "\n";
  os << "  lambda1  lambda2   image_fid  image_clip  region_fid  region_clip  region_acc\n";
  for (const AblationRow& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "  %7.2f  %7.2f  %10.4f  %10.4f  %10.4f  %11.4f  %10.4f\n",
                  r.lambda1, r.lambda2, r.report.image_fid, r.report.image_clip,
                  r.report.region_fid, r.report.region_clip, r.region_accuracy);
    os << buf;
  }
  return os.str();
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  RunPaths paths{out};
  // Table-2 row order: none, O2RA only, C2IA only, both.
  const std::pair<double, double> settings[4] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  std::vector<AblationRow> rows;
  for (auto [l1, l2] : settings) {
    RunConfig row_cfg = cfg;
    row_cfg.lambda1 = l1;
    row_cfg.lambda2 = l2;
    cmd_sample(row_cfg, out);
    AblationRow row;
    row.lambda1 = l1;
    row.lambda2 = l2;
    row.report = cmd_eval(row_cfg, out);
    const std::vector<Scene> layouts = load_scenes(paths.sample_layouts(), "sample");
    const TowerParams towers = towers_load(
        load_stage_checkpoint(paths, "towers", "ablate", cfg.train_digest()));
    std::vector<Image> images;
    for (int i = 0; i < int(layouts.size()); ++i) images.push_back(read_ppm(paths.sample_image(i)));
    row.region_accuracy = region_label_accuracy(images, layouts, towers);
    rows.push_back(row);
    // Preserve this row's artifacts before the next row overwrites them.
    char tag[64];
    std::snprintf(tag, sizeof tag, "ablate_l1_%g_l2_%g", l1, l2);
    const fs::path keep = out / tag;
    std::error_code ec;
    fs::remove_all(keep, ec);
    fs::rename(paths.samples_dir(), keep, ec);
    if (ec) throw io_error("cannot archive ablation samples to " + keep.string());
    fs::rename(paths.report(), keep / "report.txt", ec);
  }
  const std::string table = ablation_table(rows, cfg);
  std::ofstream f(paths.ablation());
  if (!f) throw io_error("cannot write " + paths.ablation().string());
  f << table;
  std::cout << table;
  return rows;
}

}  // namespace hcma
