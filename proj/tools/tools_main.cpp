#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "hcma/pipeline.hpp"

namespace {

struct Cli {
  std::string config_path;
  std::string out = "run";
  std::optional<uint64_t> seed;
  std::optional<int> steps;
  std::optional<double> lambda1, lambda2, eta;
  std::optional<std::string> mode;

  hcma::RunConfig effective() const {
    hcma::RunConfig cfg;
    if (!config_path.empty()) cfg = hcma::RunConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (steps) cfg.sample_steps = *steps;
    if (lambda1) cfg.lambda1 = *lambda1;
    if (lambda2) cfg.lambda2 = *lambda2;
    if (eta) cfg.eta = *eta;
    if (mode) cfg.sampler_mode = *mode;
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Cli& cli) {
  cmd->add_option("--config", cli.config_path, "run configuration file");
  cmd->add_option("--seed", cli.seed, "override the global seed");
  cmd->add_option("--out", cli.out, "output directory (default: run)");
  cmd->add_option("--steps", cli.steps, "override sampler step count");
  cmd->add_option("--lambda1", cli.lambda1, "override the global-alignment weight");
  cmd->add_option("--lambda2", cli.lambda2, "override the region-alignment weight");
  cmd->add_option("--eta", cli.eta, "override the alignment step size");
  cmd->add_option("--mode", cli.mode, "sampler mode: literal or ddim")
      ->check(CLI::IsMember({"literal", "ddim"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical cross-modal alignment pipeline"};
  app.require_subcommand(1);
  Cli cli;

  std::string stage;
  CLI::App* gen = app.add_subcommand("gen-data", "generate the dataset and holdout files");
  CLI::App* train = app.add_subcommand("train", "train one pipeline stage");
  train->add_option("stage", stage, "codec, towers, align or diffusion")->required();
  CLI::App* smp = app.add_subcommand("sample", "sample layouts into images");
  CLI::App* evl = app.add_subcommand("eval", "evaluate sampled images against the holdout");
  CLI::App* abl = app.add_subcommand("ablate", "4-row guidance ablation (sample + eval)");
  for (CLI::App* c : {gen, train, smp, evl, abl}) add_common(c, cli);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;  // bad usage is a contract violation
  }

  try {
    const hcma::RunConfig cfg = cli.effective();
    if (gen->parsed()) {
      hcma::cmd_gen_data(cfg, cli.out);
    } else if (train->parsed()) {
      hcma::cmd_train(stage, cfg, cli.out);
    } else if (smp->parsed()) {
      hcma::cmd_sample(cfg, cli.out);
    } else if (evl->parsed()) {
      hcma::cmd_eval(cfg, cli.out);
    } else if (abl->parsed()) {
      hcma::cmd_ablate(cfg, cli.out);
    }
  } catch (const hcma::io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
