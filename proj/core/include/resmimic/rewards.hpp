#pragma once

#include <string>
#include <vector>

#include "resmimic/motion_library.hpp"
#include "resmimic/sim_core.hpp"

namespace resmimic {

enum class ErrorKind { kJointPos, kJointVel, kRootPose, kRootTwist, kLinkPos };

const char* to_string(ErrorKind kind);
ErrorKind error_kind_from_string(const std::string& name);

struct TrackingTerm {
  std::string name;
  ErrorKind kind = ErrorKind::kJointPos;
  double weight = 1.0;
  double sigma = 1.0;
};

struct RewardConfig {
  std::vector<TrackingTerm> tracking;
  double lambda_torque = 0.0;
  double lambda_action_rate = 0.0;
  double lambda_limits = 0.0;
  double lambda_contact = 0.0;
  double lambda_termination = 0.0;
  double s_min = 0.1;
  double s_max = 1.0;
  double soft_limit_margin = 0.9;
  double contact_force_threshold = 200.0;

  static RewardConfig defaults();
  void validate() const;
  int n_components() const { return static_cast<int>(tracking.size()) + kRegularizationTerms; }
  /// Component names in head order: tracking terms, then regularization.
  std::vector<std::string> component_names() const;

  static constexpr int kRegularizationTerms = 5;
};

// Inputs of the tracking kernels for one control step.
struct TrackingSample {
  const SimState* state = nullptr;
  const std::vector<Vec2>* links = nullptr;
  const MotionFrame* ref = nullptr;
  const std::vector<Vec2>* ref_links = nullptr;
  bool floating = false;
};

/// Averaged squared error of one term.
double tracking_error(ErrorKind kind, const TrackingSample& sample);

/// w * exp(-e / sigma^2) for each configured term.
Vec tracking_reward(const TrackingSample& sample, const RewardConfig& config);

struct RegularizationInput {
  Vec tau;
  Vec action;
  Vec prev_action;
  const SimState* state = nullptr;
  const RobotModel* model = nullptr;
  std::vector<ContactForce> contacts;
  bool terminated = false;
};

/// Order: torque, action_rate, soft_limits, contact, termination. All >= 0.
Vec regularization_reward(const RegularizationInput& in, const RewardConfig& config);

/// Squared hinge on |x - center| beyond margin * half_range.
double soft_limit_excess(double x, double center, double half_range, double margin);

/// Linear in curriculum progress: s_min at 0, s_max at 1.
double penalty_scale(double progress, const RewardConfig& config);

struct RewardVector {
  Vec tracking;
  Vec regularization;
  double s_pen = 0.0;
  double total = 0.0;

  /// Per-head rewards: tracking terms followed by -s_pen * regularization.
  /// Sums to total.
  Vec head_rewards() const;
};

RewardVector total_reward(Vec tracking, Vec regularization, double s_pen);

}  // namespace resmimic
