#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "resmimic/config.hpp"
#include "resmimic/env.hpp"
#include "resmimic/metrics.hpp"
#include "resmimic/ppo.hpp"

namespace resmimic {

/// splitmix64 of (seed, stream, index); used for every derived generator.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

/// Runs fn(i) for i in [0, n) on up to `workers` threads, contiguous chunks.
/// Exceptions are rethrown on the caller (lowest chunk first).
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

std::vector<MotionClip> load_clips(const ExperimentConfig& config, const RobotModel& model);

// Everything derived from a config before training starts.
struct PreparedExperiment {
  ExperimentConfig config;
  RobotModel model;
  std::shared_ptr<const std::vector<MotionClip>> clips;
  EnvConfig env;
  std::vector<int> key_dofs;
  std::vector<Segment> segments;
  Mat occupancy;
  BalanceWeights balance;
};

PreparedExperiment prepare(const ExperimentConfig& config);

/// ResidualConfig with mask, bounds and default pose resolved against clips.
ResidualConfig resolve_residual(const ExperimentConfig& config, const std::vector<MotionClip>& clips,
                                const std::vector<int>& key_dofs, int n_joints);

struct EvalEpisode {
  TrackingMetrics metrics;
  double tracking_return = 0.0;  // sum of tracking heads
  double normalized_reward = 0.0;  // tracking_return / (n_frames - 1)
  int length = 0;
  bool reached_end = false;
  Termination termination = Termination::kNone;
};

/// Deterministic rollout from frame 0: mean action, nominal model, no jitter.
EvalEpisode evaluate_episode(const ActorCritic& policy, const PreparedExperiment& exp,
                             std::shared_ptr<const std::vector<MotionClip>> clips, int clip_id,
                             EpisodeTrace* trace = nullptr);

struct CurvePoint {
  int iteration = 0;
  double eval_reward = 0.0;
  TrackingMetrics metrics;
  double eval_length = 0.0;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: no files written
  int workers = 1;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::ostream* progress = nullptr;
};

struct TrainResult {
  ActorCritic policy;
  int iterations = 0;
  std::vector<CurvePoint> curve;
  CurvePoint final_eval;
  CurriculumState curriculum;
  std::string config_hash;
};

/// Full loop: sample, reset, rollout, GAE, PPO update, curriculum and
/// priority updates. On divergence writes the last good checkpoint and
/// rethrows DivergenceError.
TrainResult train(const PreparedExperiment& exp, const RunOptions& options);

// CSV headers, kept stable for downstream consumers.
/// Fixed columns, then one value_loss_<head> column per reward component.
std::string train_log_header(const std::vector<std::string>& heads);
std::string eval_curve_header();
std::string sampler_log_header();
std::string ablation_runs_header();
std::string ablation_curves_header();

enum class Study { kResidual, kSampling };
Study study_from_string(const std::string& name);

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  TrainResult result;
  double plateau = 0.0;
  std::optional<int> iterations_to_threshold;
};

struct AblationReport {
  Study study = Study::kResidual;
  std::vector<AblationRun> runs;
  double threshold = 0.0;  // sampling study only
  std::string verdict_json;
};

/// Mean of the last 10% of curve points (at least one).
double curve_plateau(const std::vector<CurvePoint>& curve);

/// First evaluated iteration with eval_reward >= threshold.
std::optional<int> iterations_to_threshold(const std::vector<CurvePoint>& curve, double threshold);

/// `null_test` forces the ALL and SELECTIVE variants to the same all-joint
/// mask (residual study only).
AblationReport run_ablation(const ExperimentConfig& config, Study study,
                            const std::vector<std::uint64_t>& seeds, const RunOptions& options,
                            bool null_test = false);

// Command entry points. Each returns the process exit code; ConfigError and
// DivergenceError propagate to the caller.
int cmd_train(const ExperimentConfig& config, const RunOptions& options, std::ostream& log);
int cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
             const std::optional<std::filesystem::path>& clip, int episodes,
             const std::filesystem::path& out_dir, std::ostream& log);
int cmd_ablate(const ExperimentConfig& config, Study study, const std::vector<std::uint64_t>& seeds,
               const RunOptions& options, bool null_test, std::ostream& log);
int cmd_synth(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& log);
int cmd_analyze(const ExperimentConfig& config, const std::filesystem::path& out_dir, std::ostream& log);

/// Version string baked in at configure time.
const char* code_version();

}  // namespace resmimic
