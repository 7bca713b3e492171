#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "resmimic/motion_library.hpp"
#include "resmimic/rewards.hpp"
#include "resmimic/sampling.hpp"
#include "resmimic/sim_core.hpp"

namespace resmimic {

// Per-channel-group normalization scales (multiplicative).
struct ObsScales {
  double q = 1.0;
  double qdot = 0.1;
  double gravity = 1.0;
  double ang_vel = 0.25;
  double action = 1.0;
  double q_ref = 1.0;
  double v_base = 0.5;
  double link_pos = 0.5;
  double xi = 1.0;
};

struct ObsConfig {
  int history = 4;  // k
  ObsScales scales;
  void validate() const;
};

// Actor observation: k stacked [q, qdot, g_proj(2), ang_vel(1), a_prev]
// (oldest first), then k stacked q_ref frames for t-k+2 .. t+1.
// Critic observation: actor observation, k stacked v_base(2), k stacked
// reference link endpoints (2 per link), then the randomization features.
int actor_obs_size(int n_joints, int history);
int critic_obs_size(int n_joints, int n_links, int history);

struct ProprioFrame {
  Vec q;
  Vec qdot;
  Vec2 gravity = Vec2(0.0, 1.0);
  double ang_vel = 0.0;
  Vec prev_action;
};

struct PrivilegedFrame {
  Vec2 v_base = Vec2::Zero();
  std::vector<Vec2> link_ref;
};

/// Histories hold at most k frames, oldest first; missing older slots are
/// zero-filled.
Vec build_actor_obs(std::span<const ProprioFrame> proprio, std::span<const Vec> goals,
                    const ObsConfig& config, int n_joints);
Vec build_critic_obs(const Vec& actor_obs, std::span<const PrivilegedFrame> privileged,
                     const Vec& xi, const ObsConfig& config, int n_links);

enum class ResidualMode { kNone, kAll, kSelective };
const char* to_string(ResidualMode mode);
ResidualMode residual_mode_from_string(const std::string& name);

struct ResidualConfig {
  ResidualMode mode = ResidualMode::kSelective;
  std::vector<bool> mask;    // per joint, SELECTIVE only
  Vec bound_lo;              // per joint residual bounds, rad
  Vec bound_hi;
  double action_scale = 0.25;           // rad per unit action, residual modes
  double absolute_action_scale = 1.0;   // rad per unit action, NONE
  Vec default_pose;                     // NONE offset

  void validate(int n_joints) const;
  /// Joints driven by the policy, ascending.
  std::vector<int> active_joints(int n_joints) const;
  int action_dim(int n_joints) const { return static_cast<int>(active_joints(n_joints).size()); }
  /// Expands a policy output to a full per-joint action (zeros elsewhere).
  Vec scatter(const Vec& policy_action, int n_joints) const;
};

/// Per-joint symmetric bounds: max(min_bound, ratio * quantile of
/// |q_ref - median|) over all frames.
void set_residual_bounds_from_clips(ResidualConfig& rc, const std::vector<MotionClip>& clips,
                                    double quantile, double ratio, double min_bound);

/// Commanded joint targets; always inside the joint limits.
Vec apply_residual(const Vec& action, const Vec& q_ref_next, const ResidualConfig& rc,
                   const RobotModel& model);

struct CurriculumState {
  double progress = 0.0;
  double avg_episode_length = 0.0;
  double eps_q = 0.5;
  double eps_q_min = 0.1;
  double eps_q_max = 0.5;
  double tighten_factor = 0.95;
  double target_length = 100.0;
  double length_ema = 0.1;

  void validate() const;
};

/// EMA of episode lengths; tightens eps_q once per call when the average is
/// above target. eps_q never increases and progress never decreases.
CurriculumState update_curriculum(CurriculumState state, std::span<const int> episode_lengths);

enum class Termination { kNone, kJointError, kAttitude, kLimitViolation };
const char* to_string(Termination t);

struct TerminationConfig {
  bool enabled = true;
  double attitude_ratio = 1.25;
  double attitude_floor = 0.05;
  double limit_tolerance = 0.05;
};

Termination check_termination(const SimState& state, const MotionFrame& ref, double eps_q,
                              const RobotModel& model, const TerminationConfig& config);

struct EnvConfig {
  ObsConfig obs;
  ResidualConfig residual;
  RewardConfig reward = RewardConfig::defaults();
  RsiJitter rsi_jitter;
  RandomizationRanges randomization;
  PdGains gains;
  TerminationConfig termination;
  int decimation = 20;
  double dt = 1e-3;

  void validate(const RobotModel& model) const;
};

/// Simulator state that exactly matches a reference frame (root fields only
/// in floating mode).
SimState reference_state(const RobotModel& model, const MotionFrame& frame);

struct ObsPair {
  Vec actor;
  Vec critic;
};

struct EpisodeResult {
  int length = 0;
  Termination termination = Termination::kNone;
  bool truncated = false;
  int clip_id = 0;
  int start_frame = 0;
  int start_segment = 0;
  int end_segment = 0;
  double total_return = 0.0;
  Vec component_return;
};

struct StepResult {
  ObsPair obs;
  RewardVector reward;
  Termination verdict = Termination::kNone;
  bool truncated = false;
  bool diverged = false;
  Vec q_tar;
  Vec tau;
  bool episode_over() const { return verdict != Termination::kNone || truncated; }
};

struct TraceRow {
  int step = 0;
  int ref_index = 0;
  Vec q;
  Vec q_ref;
  Vec q_tar;
  Vec tau;
  Vec reward;  // per head
  double total = 0.0;
};

struct EpisodeTrace {
  std::vector<std::string> component_names;
  std::vector<TraceRow> rows;
  /// Columns: step, ref_index, q_i, q_ref_i, q_tar_i, tau_i, <components>, total
  void write_csv(const std::filesystem::path& path) const;
};

// One tracking environment instance. Owns its generator; clips are shared
// read-only.
class TrackingEnv {
 public:
  TrackingEnv(std::shared_ptr<const std::vector<MotionClip>> clips, RobotModel model,
              EnvConfig config, std::uint64_t seed);

  ObsPair reset(const StartSample& start);
  StepResult step(const Vec& policy_action);

  void set_curriculum(const CurriculumState& c) { curriculum_ = c; }
  const CurriculumState& curriculum() const { return curriculum_; }
  void set_trace(EpisodeTrace* trace) { trace_ = trace; }
  std::mt19937_64& rng() { return rng_; }

  int actor_obs_size() const;
  int critic_obs_size() const;
  int action_dim() const { return config_.residual.action_dim(model_.n_joints()); }
  int n_reward_components() const { return config_.reward.n_components(); }

  const RobotModel& model() const { return model_; }
  const RobotModel& randomized_model() const { return randomized_.model; }
  const RandomizationParams& randomization() const { return randomized_.params; }
  const EnvConfig& config() const { return config_; }
  const SimState& state() const { return state_; }
  const MotionClip& clip() const { return (*clips_)[clip_id_]; }
  int clip_id() const { return clip_id_; }
  int ref_index() const { return ref_index_; }
  int episode_length() const { return episode_length_; }
  bool active() const { return active_; }
  const EpisodeResult& last_episode() const { return last_episode_; }

 private:
  ObsPair observe();
  void push_history();

  std::shared_ptr<const std::vector<MotionClip>> clips_;
  RobotModel model_;
  EnvConfig config_;
  std::mt19937_64 rng_;
  Randomized randomized_;
  CurriculumState curriculum_;
  SimState state_;
  int clip_id_ = 0;
  int ref_index_ = 0;
  int start_frame_ = 0;
  int start_segment_ = 0;
  int episode_length_ = 0;
  bool active_ = false;
  Vec prev_action_;
  std::deque<Vec> command_fifo_;
  std::deque<ProprioFrame> proprio_;
  std::deque<Vec> goals_;
  std::deque<PrivilegedFrame> privileged_;
  double return_ = 0.0;
  Vec component_return_;
  EpisodeResult last_episode_;
  EpisodeTrace* trace_ = nullptr;
  std::vector<int> segment_starts_;  // per clip, global index of first segment
};

}  // namespace resmimic
