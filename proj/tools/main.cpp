#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "resmimic/config.hpp"
#include "resmimic/errors.hpp"
#include "resmimic/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace resmimic;
  CLI::App app{"Residual motion-tracking trainer for planar chains"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());

  std::string config_path;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out;
  std::optional<int> iters;

  auto common = [&](CLI::App* cmd, bool run_flags) {
    cmd->add_option("--config", config_path, "Experiment configuration (YAML)")->required();
    cmd->add_option("--out", out, "Output directory (default: output_dir from the config)");
    if (run_flags) {
      cmd->add_option("--seed", seed, "Override the config seed");
      cmd->add_option("--workers", workers, "Rollout worker threads")->check(CLI::Range(1, 256));
      cmd->add_option("--iters", iters, "Override training.iterations")->check(CLI::NonNegativeNumber);
    }
  };

  auto* train = app.add_subcommand("train", "Train a policy");
  common(train, true);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with deterministic rollouts");
  common(eval, false);
  std::string checkpoint;
  std::string clip;
  int episodes = 1;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--clip", clip, "Evaluate on this clip instead of the training clips");
  eval->add_option("--episodes", episodes, "Number of evaluation episodes")->check(CLI::NonNegativeNumber);

  auto* ablate = app.add_subcommand("ablate", "Run an ablation study");
  common(ablate, true);
  std::string study = "residual";
  std::vector<std::uint64_t> seeds;
  bool null_test = false;
  ablate->add_option("--study", study, "residual or sampling")->check(CLI::IsMember({"residual", "sampling"}));
  ablate->add_option("--seeds", seeds, "Seeds (default: --seed or the config seed)")->delimiter(',');
  ablate->add_flag("--null-test", null_test, "Force ALL and SELECTIVE to the same all-joint mask");

  auto* synth = app.add_subcommand("synth", "Generate the configured clips");
  common(synth, false);
  auto* analyze = app.add_subcommand("analyze", "Joint statistics, occupancy and balancing report");
  common(analyze, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    const ExperimentConfig cfg = load_config(config_path);
    RunOptions opts;
    opts.workers = workers;
    opts.seed = seed;
    opts.iterations = iters;
    opts.progress = &std::cerr;
    if (!out.empty()) opts.out_dir = out;
    const std::filesystem::path out_dir = out.empty() ? cfg.output_dir : std::filesystem::path(out);

    if (*train) return cmd_train(cfg, opts, std::cout);
    if (*eval) {
      std::optional<std::filesystem::path> clip_path;
      if (!clip.empty()) clip_path = clip;
      return cmd_eval(cfg, checkpoint, clip_path, episodes, out_dir, std::cout);
    }
    if (*ablate) {
      if (seeds.empty()) seeds.push_back(seed.value_or(cfg.seed));
      return cmd_ablate(cfg, study_from_string(study), seeds, opts, null_test, std::cout);
    }
    if (*synth) return cmd_synth(cfg, out_dir, std::cout);
    if (*analyze) return cmd_analyze(cfg, out_dir, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
