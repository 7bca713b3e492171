#include "resmimic/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "resmimic/errors.hpp"

namespace resmimic {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kJointPos: return "joint_pos";
    case ErrorKind::kJointVel: return "joint_vel";
    case ErrorKind::kRootPose: return "root_pose";
    case ErrorKind::kRootTwist: return "root_twist";
    case ErrorKind::kLinkPos: return "link_pos";
  }
  return "unknown";
}

ErrorKind error_kind_from_string(const std::string& name) {
  for (ErrorKind k : {ErrorKind::kJointPos, ErrorKind::kJointVel, ErrorKind::kRootPose,
                      ErrorKind::kRootTwist, ErrorKind::kLinkPos})
    if (name == to_string(k)) return k;
  throw ConfigError("unknown error kind '" + name + "'", "reward.tracking.kind");
}

RewardConfig RewardConfig::defaults() {
  RewardConfig c;
  c.tracking = {
      {"joint_pos", ErrorKind::kJointPos, 1.0, 0.3},
      {"joint_vel", ErrorKind::kJointVel, 0.3, 3.0},
      {"root_pose", ErrorKind::kRootPose, 0.3, 0.3},
      {"root_twist", ErrorKind::kRootTwist, 0.2, 1.0},
      {"link_pos", ErrorKind::kLinkPos, 0.5, 0.3},
  };
  c.lambda_torque = 1e-5;
  c.lambda_action_rate = 0.01;
  c.lambda_limits = 1.0;
  c.lambda_contact = 0.01;
  c.lambda_termination = 1.0;
  return c;
}

void RewardConfig::validate() const {
  if (tracking.empty()) throw ConfigError("need at least one tracking term", "reward.tracking");
  for (const auto& t : tracking) {
    if (!(t.weight > 0)) throw ConfigError("weight must be > 0", "reward.tracking." + t.name);
    if (!(t.sigma > 0)) throw ConfigError("sigma must be > 0", "reward.tracking." + t.name);
  }
  const double lambdas[] = {lambda_torque, lambda_action_rate, lambda_limits, lambda_contact,
                            lambda_termination};
  for (double l : lambdas)
    if (!(l >= 0)) throw ConfigError("regularization coefficients must be >= 0", "reward.lambda");
  if (!(s_min >= 0 && s_min <= s_max)) throw ConfigError("need 0 <= s_min <= s_max", "reward.s_min");
  if (!(soft_limit_margin > 0 && soft_limit_margin <= 1))
    throw ConfigError("must lie in (0, 1]", "reward.soft_limit_margin");
  if (!(contact_force_threshold >= 0))
    throw ConfigError("must be >= 0", "reward.contact_force_threshold");
}

std::vector<std::string> RewardConfig::component_names() const {
  std::vector<std::string> names;
  for (const auto& t : tracking) names.push_back(t.name);
  for (const char* r : {"reg_torque", "reg_action_rate", "reg_soft_limits", "reg_contact",
                        "reg_termination"})
    names.emplace_back(r);
  return names;
}

double tracking_error(ErrorKind kind, const TrackingSample& s) {
  const SimState& st = *s.state;
  const MotionFrame& ref = *s.ref;
  switch (kind) {
    case ErrorKind::kJointPos:
      if (st.q.size() != ref.q_ref.size()) throw ContractViolation("joint dimension mismatch");
      return (st.q - ref.q_ref).squaredNorm() / static_cast<double>(st.q.size());
    case ErrorKind::kJointVel:
      if (st.qdot.size() != ref.qdot_ref.size()) throw ContractViolation("joint dimension mismatch");
      return (st.qdot - ref.qdot_ref).squaredNorm() / static_cast<double>(st.qdot.size());
    case ErrorKind::kRootPose: {
      if (!s.floating) return 0.0;
      const double dp = st.root_pitch - ref.root_pitch_ref;
      return ((st.root_pos - ref.root_pos_ref).squaredNorm() + dp * dp) / 3.0;
    }
    case ErrorKind::kRootTwist: {
      if (!s.floating) return 0.0;
      const double dw = st.root_pitch_rate - ref.root_pitch_rate_ref;
      return ((st.root_vel - ref.root_vel_ref).squaredNorm() + dw * dw) / 3.0;
    }
    case ErrorKind::kLinkPos: {
      const auto& a = *s.links;
      const auto& b = *s.ref_links;
      if (a.size() != b.size() || a.empty()) throw ContractViolation("link count mismatch");
      double sum = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).squaredNorm();
      return sum / static_cast<double>(a.size());
    }
  }
  return 0.0;
}

Vec tracking_reward(const TrackingSample& sample, const RewardConfig& config) {
  Vec out(static_cast<Eigen::Index>(config.tracking.size()));
  for (std::size_t i = 0; i < config.tracking.size(); ++i) {
    const auto& term = config.tracking[i];
    const double e = tracking_error(term.kind, sample);
    out[static_cast<Eigen::Index>(i)] = term.weight * std::exp(-e / (term.sigma * term.sigma));
  }
  return out;
}

double soft_limit_excess(double x, double center, double half_range, double margin) {
  const double over = std::abs(x - center) - margin * half_range;
  return over > 0 ? over * over : 0.0;
}

Vec regularization_reward(const RegularizationInput& in, const RewardConfig& config) {
  const RobotModel& model = *in.model;
  const SimState& st = *in.state;
  const int n = model.n_joints();
  if (in.tau.size() != n || in.action.size() != in.prev_action.size())
    throw ContractViolation("regularization_reward: dimension mismatch");
  Vec out = Vec::Zero(RewardConfig::kRegularizationTerms);
  out[0] = config.lambda_torque * in.tau.squaredNorm();
  out[1] = config.lambda_action_rate * (in.action - in.prev_action).squaredNorm();
  double limits = 0.0;
  const double m = config.soft_limit_margin;
  for (int j = 0; j < n; ++j) {
    const auto& lim = model.joint_limits[j];
    limits += soft_limit_excess(st.q[j], lim.center(), lim.half_range(), m);
    limits += soft_limit_excess(st.qdot[j], 0.0, model.joint_vel_limit[j], m);
    limits += soft_limit_excess(in.tau[j], 0.0, model.joint_torque_limit[j], m);
  }
  out[2] = config.lambda_limits * limits;
  double contact = 0.0;
  if (model.floating()) {
    for (const auto& c : in.contacts) {
      if (c.normal > 0) contact += c.slip_speed;
      contact += std::max(0.0, c.normal - config.contact_force_threshold);
    }
  }
  out[3] = config.lambda_contact * contact;
  out[4] = in.terminated ? config.lambda_termination : 0.0;
  return out;
}

double penalty_scale(double progress, const RewardConfig& config) {
  const double p = std::clamp(progress, 0.0, 1.0);
  return config.s_min + (config.s_max - config.s_min) * p;
}

Vec RewardVector::head_rewards() const {
  Vec out(tracking.size() + regularization.size());
  out << tracking, -s_pen * regularization;
  return out;
}

RewardVector total_reward(Vec tracking, Vec regularization, double s_pen) {
  RewardVector r;
  r.total = tracking.sum() - s_pen * regularization.sum();
  r.tracking = std::move(tracking);
  r.regularization = std::move(regularization);
  r.s_pen = s_pen;
  return r;
}

}  // namespace resmimic
