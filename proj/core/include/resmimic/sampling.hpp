#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "resmimic/motion_library.hpp"

namespace resmimic {

/// Euclidean projection onto the probability simplex (sort-based).
Vec simplex_project(const Vec& v);

// min_w ||P^T w - U||^2 over the simplex, where `occupancy` is S x B
// (one row per segment). U defaults to uniform 1/B.
struct BalanceProblem {
  Mat occupancy;
  Vec target;

  static BalanceProblem uniform_target(Mat occupancy);
  void validate() const;
  double objective(const Vec& w) const;
  Vec gradient(const Vec& w) const;
};

struct BalanceOptions {
  int max_iterations = 200000;
  double tolerance = 1e-12;  // on the projected-gradient step length
};

struct BalanceWeights {
  Vec w;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Accelerated projected gradient with exact simplex projection. On hitting
/// the iteration cap returns the best iterate with converged = false.
BalanceWeights balance_weights(const BalanceProblem& problem, const BalanceOptions& options = {});

/// Largest violation of the simplex KKT conditions at w.
double kkt_residual(const BalanceProblem& problem, const Vec& w, double active_threshold = 1e-9);

struct PriorityState {
  Vec r;
  double alpha = 0.1;
  double beta = 2.0;
  double epsilon = 0.01;

  static PriorityState make(int segments, double alpha = 0.1, double beta = 2.0,
                            double epsilon = 0.01);
  void validate() const;
};

/// r_s <- (1 - alpha) r_s + alpha * failed on the given segment only.
PriorityState ema_update(PriorityState state, int segment, bool failed);

/// p_s = (r_s + eps)^beta / sum_j (r_j + eps)^beta
Vec tempered_prior(const PriorityState& state);

struct SamplerMix {
  double uniform_time = 0.3;
  double balanced = 0.35;
  double priority = 0.35;
  void validate() const;
};

struct RsiJitter {
  double q = 0.0;
  double qdot = 0.0;
  double root_pos = 0.0;
  double root_vel = 0.0;
  double pitch = 0.0;
  double pitch_rate = 0.0;
};

struct SamplerConfig {
  SamplerMix mix;
  RsiJitter rsi_jitter;
  int priority_warmup_iters = 0;
  bool attribute_failure_to_start = true;
  void validate() const;
};

/// Mix with the priority branch ramped in linearly over the warm-up; the
/// withheld mass goes to uniform-time sampling.
SamplerMix effective_mix(const SamplerConfig& config, int iteration);

enum class SampleBranch { kUniformTime, kBalanced, kPriority };

struct StartSample {
  int clip_id = 0;
  int frame = 0;
  int segment = 0;  // global segment index
  SampleBranch branch = SampleBranch::kUniformTime;
};

// Immutable per-batch view of the sampling distributions shared by workers.
// Start frames exclude each clip's last frame so every episode has a step.
class StartSampler {
 public:
  StartSampler(const std::vector<MotionClip>& clips, std::vector<Segment> segments);

  const std::vector<Segment>& segments() const { return segments_; }
  int segment_of(int clip_id, int frame) const;

  StartSample sample(const SamplerMix& mix, const Vec& balance_w, const Vec& prior,
                     std::mt19937_64& rng) const;

 private:
  StartSample in_segment(int segment, std::mt19937_64& rng) const;

  std::vector<int> clip_frames_;
  std::vector<Segment> segments_;
  std::vector<int> clip_first_segment_;
  std::vector<int> cumulative_starts_;  // prefix sums of valid start frames per clip
};

StartSample sample_start(const SamplerConfig& config, const Vec& balance_w, const Vec& prior,
                         const std::vector<MotionClip>& clips, std::mt19937_64& rng);

/// Reference state plus Gaussian jitter; q clamped to the joint limits.
SimState rsi_state(const MotionClip& clip, int frame, const RsiJitter& jitter,
                   const RobotModel& model, std::mt19937_64& rng);

}  // namespace resmimic
