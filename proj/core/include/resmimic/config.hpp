#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "resmimic/env.hpp"
#include "resmimic/motion_library.hpp"
#include "resmimic/ppo.hpp"
#include "resmimic/sampling.hpp"

namespace resmimic {

inline constexpr int kConfigSchemaVersion = 1;

// Per-link and per-joint lists accept either a scalar (broadcast) or one
// entry per link.
struct RobotSpec {
  int n_links = 3;
  std::string base = "fixed";
  std::vector<double> link_length{0.4};
  std::vector<double> link_mass{1.0};
  std::vector<double> link_inertia;  // empty: slender rod m l^2 / 12
  std::vector<double> joint_damping{0.1};
  std::vector<double> joint_limit_lo{-1.5};
  std::vector<double> joint_limit_hi{1.5};
  std::vector<double> joint_vel_limit{30.0};
  std::vector<double> torque_limit{60.0};
  std::vector<double> kp{60.0};
  std::vector<double> kd{3.0};
  double base_mass = 2.0;
  double base_inertia = 0.05;
  std::vector<int> foot_links;
  double gravity = 9.81;
  double contact_stiffness = 2.0e4;
  double contact_damping = 400.0;
  double contact_tangent_damping = 400.0;

  RobotModel build_model() const;
  PdGains build_gains() const;
};

struct SynthClipSpec {
  std::string name = "synth";
  std::uint64_t seed = 1;
  double duration_s = 10.0;
  double fps = 50.0;
  int n_phrases = 1;
  double tail_fraction = 0.0;
  double blend_s = 0.25;
  std::vector<double> center{0.0};
  std::vector<double> amplitude_lo{0.1};
  std::vector<double> amplitude_hi{0.3};
  std::vector<double> frequency_lo{0.2};
  std::vector<double> frequency_hi{0.6};
  std::vector<double> tail_amplitude{0.0};
  double root_height = 0.0;
  double pitch_amplitude = 0.0;
  double pitch_frequency = 0.5;

  /// Broadcasts scalar lists to n joints and takes limits from the robot.
  SynthSpec resolve(const RobotModel& model) const;
};

struct ClipSource {
  std::filesystem::path path;   // .rmclip binary or .csv
  double csv_fps = 50.0;
  std::optional<SynthClipSpec> synth;
};

struct ResidualSetup {
  ResidualMode mode = ResidualMode::kSelective;
  std::string mask = "auto";          // "auto" (key DOFs), "all", or comma list "0,2"
  double bound_quantile = 0.95;
  double bound_ratio = 1.0;
  double min_bound = 0.1;
  double action_scale = 0.25;
  double absolute_action_scale = 1.0;
  std::vector<double> default_pose{0.0};
};

struct KeyDofSetup {
  double quantile = 0.5;
  int bins = 16;
  BinningMode binning = BinningMode::kMarginal;
};

struct PrioritySetup {
  double alpha = 0.1;
  double beta = 2.0;
  double epsilon = 0.01;
};

struct NetworkSetup {
  std::vector<int> hidden{128, 64, 32};
  double init_log_std = -1.0;
};

struct TrainingSetup {
  int iterations = 2000;
  int n_envs = 64;
  int steps_per_env = 64;
  int checkpoint_every = 500;
  int sampler_log_every = 50;
};

// Deterministic evaluation rollouts: mean action, nominal model, frame 0.
struct EvalSetup {
  int every = 50;          // 0 disables the learning-curve evaluation
  bool terminate = false;  // apply the termination rules with a fixed eps_q
  double eps_q = 0.3;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 1;
  int workers = 1;
  std::filesystem::path output_dir = "runs/default";

  RobotSpec robot;
  std::vector<ClipSource> clips;
  ObsConfig obs;
  ResidualSetup residual;
  KeyDofSetup key_dofs;
  RewardConfig reward = RewardConfig::defaults();
  SamplerConfig sampler;
  PrioritySetup priority;
  BalanceOptions balance;
  PpoConfig ppo;
  NetworkSetup network;
  CurriculumState curriculum;
  RandomizationRanges randomization;
  TerminationConfig termination;
  int decimation = 20;
  double dt = 1e-3;
  TrainingSetup training;
  EvalSetup eval;

  /// Range checks on every field; throws ConfigError naming the key.
  void validate() const;
};

/// Parses YAML text. Unknown keys and a missing or unsupported
/// schema_version raise ConfigError. Relative clip paths resolve against
/// `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical YAML of the whole configuration; parse_config(dump_config(c))
/// reproduces c.
std::string dump_config(const ExperimentConfig& config);

/// FNV-1a 64 of the canonical dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace resmimic
