#include "resmimic/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "resmimic/errors.hpp"

namespace resmimic {

void ObsConfig::validate() const {
  if (history < 1) throw ConfigError("must be >= 1", "obs.history");
}

int actor_obs_size(int n_joints, int history) {
  return history * (3 * n_joints + 3) + history * n_joints;
}

int critic_obs_size(int n_joints, int n_links, int history) {
  return actor_obs_size(n_joints, history) + 2 * history + 2 * n_links * history +
         RandomizationParams::feature_size(n_links, n_joints);
}

Vec build_actor_obs(std::span<const ProprioFrame> proprio, std::span<const Vec> goals,
                    const ObsConfig& config, int n) {
  const int k = config.history;
  if (static_cast<int>(proprio.size()) > k || static_cast<int>(goals.size()) > k)
    throw ContractViolation("build_actor_obs: history longer than the window");
  const int frame = 3 * n + 3;
  const ObsScales& sc = config.scales;
  Vec out = Vec::Zero(actor_obs_size(n, k));
  const int pad_p = k - static_cast<int>(proprio.size());
  for (std::size_t i = 0; i < proprio.size(); ++i) {
    const ProprioFrame& p = proprio[i];
    if (p.q.size() != n || p.qdot.size() != n || p.prev_action.size() != n)
      throw ContractViolation("build_actor_obs: proprioception layout mismatch");
    auto slot = out.segment((pad_p + static_cast<int>(i)) * frame, frame);
    slot.head(n) = sc.q * p.q;
    slot.segment(n, n) = sc.qdot * p.qdot;
    slot.segment(2 * n, 2) = sc.gravity * p.gravity;
    slot[2 * n + 2] = sc.ang_vel * p.ang_vel;
    slot.tail(n) = sc.action * p.prev_action;
  }
  const int goal_base = k * frame;
  const int pad_g = k - static_cast<int>(goals.size());
  for (std::size_t i = 0; i < goals.size(); ++i) {
    if (goals[i].size() != n) throw ContractViolation("build_actor_obs: goal layout mismatch");
    out.segment(goal_base + (pad_g + static_cast<int>(i)) * n, n) = sc.q_ref * goals[i];
  }
  return out;
}

Vec build_critic_obs(const Vec& actor_obs, std::span<const PrivilegedFrame> privileged,
                     const Vec& xi, const ObsConfig& config, int n_links) {
  const int k = config.history;
  if (static_cast<int>(privileged.size()) > k)
    throw ContractViolation("build_critic_obs: history longer than the window");
  const ObsScales& sc = config.scales;
  Vec out = Vec::Zero(actor_obs.size() + 2 * k + 2 * n_links * k + xi.size());
  out.head(actor_obs.size()) = actor_obs;
  Eigen::Index base = actor_obs.size();
  const int pad = k - static_cast<int>(privileged.size());
  for (std::size_t i = 0; i < privileged.size(); ++i)
    out.segment(base + 2 * (pad + static_cast<int>(i)), 2) = sc.v_base * privileged[i].v_base;
  base += 2 * k;
  for (std::size_t i = 0; i < privileged.size(); ++i) {
    const auto& links = privileged[i].link_ref;
    if (static_cast<int>(links.size()) != n_links)
      throw ContractViolation("build_critic_obs: link layout mismatch");
    for (int l = 0; l < n_links; ++l)
      out.segment(base + 2 * ((pad + static_cast<int>(i)) * n_links + l), 2) = sc.link_pos * links[l];
  }
  base += 2 * n_links * k;
  out.tail(xi.size()) = sc.xi * xi;
  return out;
}

const char* to_string(ResidualMode mode) {
  switch (mode) {
    case ResidualMode::kNone: return "NONE";
    case ResidualMode::kAll: return "ALL";
    case ResidualMode::kSelective: return "SELECTIVE";
  }
  return "?";
}

ResidualMode residual_mode_from_string(const std::string& name) {
  if (name == "NONE") return ResidualMode::kNone;
  if (name == "ALL") return ResidualMode::kAll;
  if (name == "SELECTIVE") return ResidualMode::kSelective;
  throw ConfigError("expected NONE, ALL or SELECTIVE, got '" + name + "'", "residual.mode");
}

void ResidualConfig::validate(int n) const {
  if (bound_lo.size() != n || bound_hi.size() != n)
    throw ConfigError("residual bounds need one entry per joint", "residual.bounds");
  for (int j = 0; j < n; ++j)
    if (!(bound_lo[j] < bound_hi[j])) throw ConfigError("need lo < hi", "residual.bounds");
  if (!(action_scale > 0)) throw ConfigError("must be > 0", "residual.action_scale");
  if (!(absolute_action_scale > 0))
    throw ConfigError("must be > 0", "residual.absolute_action_scale");
  if (default_pose.size() != n)
    throw ConfigError("needs one entry per joint", "residual.default_pose");
  if (mode == ResidualMode::kSelective) {
    if (static_cast<int>(mask.size()) != n) throw ConfigError("needs one entry per joint", "residual.mask");
    if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
      throw ConfigError("SELECTIVE needs at least one residual joint", "residual.mask");
  }
}

std::vector<int> ResidualConfig::active_joints(int n) const {
  std::vector<int> out;
  for (int j = 0; j < n; ++j)
    if (mode != ResidualMode::kSelective || mask[j]) out.push_back(j);
  return out;
}

Vec ResidualConfig::scatter(const Vec& policy_action, int n) const {
  const auto active = active_joints(n);
  if (policy_action.size() != static_cast<Eigen::Index>(active.size()))
    throw ContractViolation("action has " + std::to_string(policy_action.size()) +
                            " entries, expected " + std::to_string(active.size()));
  Vec full = Vec::Zero(n);
  for (std::size_t i = 0; i < active.size(); ++i) full[active[i]] = policy_action[static_cast<Eigen::Index>(i)];
  return full;
}

void set_residual_bounds_from_clips(ResidualConfig& rc, const std::vector<MotionClip>& clips,
                                    double quantile, double ratio, double min_bound) {
  if (clips.empty()) throw ContractViolation("residual bounds need at least one clip");
  const int n = clips[0].n_joints();
  rc.bound_lo.resize(n);
  rc.bound_hi.resize(n);
  for (int j = 0; j < n; ++j) {
    std::vector<double> values;
    for (const auto& c : clips)
      for (const auto& f : c.frames) values.push_back(f.q_ref[j]);
    auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    const double median = *mid;
    for (double& v : values) v = std::abs(v - median);
    const auto q_index = static_cast<std::ptrdiff_t>(
        std::clamp(quantile, 0.0, 1.0) * static_cast<double>(values.size() - 1));
    std::nth_element(values.begin(), values.begin() + q_index, values.end());
    const double b = std::max(min_bound, ratio * values[static_cast<std::size_t>(q_index)]);
    rc.bound_lo[j] = -b;
    rc.bound_hi[j] = b;
  }
}

Vec apply_residual(const Vec& action, const Vec& q_ref_next, const ResidualConfig& rc,
                   const RobotModel& model) {
  const int n = model.n_joints();
  if (action.size() != n || q_ref_next.size() != n)
    throw ContractViolation("apply_residual: dimension mismatch");
  Vec q_tar(n);
  for (int j = 0; j < n; ++j) {
    double target = q_ref_next[j];
    switch (rc.mode) {
      case ResidualMode::kNone:
        target = rc.default_pose[j] + rc.absolute_action_scale * action[j];
        break;
      case ResidualMode::kSelective:
        if (!rc.mask[j]) {
          target = q_ref_next[j];
          break;
        }
        [[fallthrough]];
      case ResidualMode::kAll:
        target = q_ref_next[j] +
                 std::clamp(rc.action_scale * action[j], rc.bound_lo[j], rc.bound_hi[j]);
        break;
    }
    q_tar[j] = std::clamp(target, model.joint_limits[j].lo, model.joint_limits[j].hi);
  }
  return q_tar;
}

void CurriculumState::validate() const {
  if (!(eps_q_min > 0 && eps_q_min <= eps_q_max)) throw ConfigError("need 0 < min <= max", "curriculum.eps_q");
  if (!(eps_q >= eps_q_min && eps_q <= eps_q_max)) throw ConfigError("eps_q outside [min, max]", "curriculum.eps_q");
  if (!(tighten_factor > 0 && tighten_factor < 1))
    throw ConfigError("must lie in (0, 1)", "curriculum.tighten_factor");
  if (!(target_length > 0)) throw ConfigError("must be > 0", "curriculum.target_length");
  if (!(length_ema > 0 && length_ema <= 1)) throw ConfigError("must lie in (0, 1]", "curriculum.length_ema");
  if (!(progress >= 0 && progress <= 1)) throw ConfigError("must lie in [0, 1]", "curriculum.progress");
}

CurriculumState update_curriculum(CurriculumState s, std::span<const int> episode_lengths) {
  for (int len : episode_lengths)
    s.avg_episode_length = (1.0 - s.length_ema) * s.avg_episode_length + s.length_ema * len;
  if (!episode_lengths.empty() && s.avg_episode_length > s.target_length) {
    s.eps_q = std::max(s.eps_q * s.tighten_factor, s.eps_q_min);
    const double span = s.eps_q_max - s.eps_q_min;
    const double p = span > 0 ? (s.eps_q_max - s.eps_q) / span : 1.0;
    s.progress = std::clamp(std::max(s.progress, p), 0.0, 1.0);
  }
  return s;
}

const char* to_string(Termination t) {
  switch (t) {
    case Termination::kNone: return "none";
    case Termination::kJointError: return "joint_error";
    case Termination::kAttitude: return "attitude";
    case Termination::kLimitViolation: return "limit_violation";
  }
  return "?";
}

Termination check_termination(const SimState& state, const MotionFrame& ref, double eps_q,
                              const RobotModel& model, const TerminationConfig& config) {
  const int n = model.n_joints();
  const double mean_err = (state.q - ref.q_ref).cwiseAbs().sum() / n;
  if (mean_err > eps_q) return Termination::kJointError;
  if (model.floating()) {
    const double bound =
        config.attitude_ratio * std::max(std::abs(ref.root_pitch_ref), config.attitude_floor);
    if (std::abs(state.root_pitch) > bound) return Termination::kAttitude;
  }
  for (int j = 0; j < n; ++j) {
    const auto& lim = model.joint_limits[j];
    if (state.q[j] < lim.lo - config.limit_tolerance || state.q[j] > lim.hi + config.limit_tolerance)
      return Termination::kLimitViolation;
  }
  return Termination::kNone;
}

void EnvConfig::validate(const RobotModel& model) const {
  model.validate();
  obs.validate();
  residual.validate(model.n_joints());
  reward.validate();
  randomization.validate();
  gains.validate(model.n_joints());
  if (decimation < 1) throw ConfigError("must be >= 1", "sim.decimation");
  if (!(dt > 0 && dt <= 0.01)) throw ConfigError("must lie in (0, 0.01]", "sim.dt");
  if (!(termination.attitude_ratio > 0) || !(termination.attitude_floor >= 0) ||
      !(termination.limit_tolerance >= 0))
    throw ConfigError("invalid termination parameters", "termination");
}

void EpisodeTrace::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open trace file: " + path.string());
  if (rows.empty()) {
    out << "step,ref_index\n";
    return;
  }
  const auto n = rows[0].q.size();
  out << "step,ref_index";
  for (const char* p : {"q_", "q_ref_", "q_tar_", "tau_"})
    for (Eigen::Index j = 0; j < n; ++j) out << ',' << p << j;
  for (const auto& c : component_names) out << ",r_" << c;
  out << ",total\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), ",%.9g", v);
    out << buf;
  };
  for (const auto& r : rows) {
    out << r.step << ',' << r.ref_index;
    for (const Vec* v : {&r.q, &r.q_ref, &r.q_tar, &r.tau})
      for (Eigen::Index j = 0; j < v->size(); ++j) put((*v)[j]);
    for (Eigen::Index j = 0; j < r.reward.size(); ++j) put(r.reward[j]);
    put(r.total);
    out << '\n';
  }
}

TrackingEnv::TrackingEnv(std::shared_ptr<const std::vector<MotionClip>> clips, RobotModel model,
                         EnvConfig config, std::uint64_t seed)
    : clips_(std::move(clips)), model_(std::move(model)), config_(std::move(config)), rng_(seed) {
  if (!clips_ || clips_->empty()) throw ContractViolation("environment needs at least one clip");
  config_.validate(model_);
  for (const auto& c : *clips_) {
    c.validate();
    if (c.n_joints() != model_.n_joints())
      throw ContractViolation("clip '" + c.name + "' joint dimension does not match the robot");
  }
  int first = 0;
  for (const auto& c : *clips_) {
    segment_starts_.push_back(first);
    first += static_cast<int>(segment_clip(c).size());
  }
  randomized_ = {model_, config_.gains, RandomizationParams::identity(model_)};
  state_ = SimState::zero(model_);
  prev_action_ = Vec::Zero(model_.n_joints());
  component_return_ = Vec::Zero(n_reward_components());
}

int TrackingEnv::actor_obs_size() const {
  return resmimic::actor_obs_size(model_.n_joints(), config_.obs.history);
}

int TrackingEnv::critic_obs_size() const {
  return resmimic::critic_obs_size(model_.n_joints(), model_.n_links(), config_.obs.history);
}

SimState reference_state(const RobotModel& model, const MotionFrame& frame) {
  SimState s = SimState::zero(model);
  s.q = frame.q_ref;
  s.qdot = frame.qdot_ref;
  if (model.floating()) {
    s.root_pos = frame.root_pos_ref;
    s.root_vel = frame.root_vel_ref;
    s.root_pitch = frame.root_pitch_ref;
    s.root_pitch_rate = frame.root_pitch_rate_ref;
  }
  return s;
}

void TrackingEnv::push_history() {
  const int k = config_.obs.history;
  const MotionClip& c = clip();
  const double noise = randomized_.params.obs_noise_std;
  std::normal_distribution<double> normal(0.0, 1.0);
  ProprioFrame p;
  p.q = state_.q;
  p.qdot = state_.qdot;
  p.ang_vel = model_.floating() ? state_.root_pitch_rate : 0.0;
  if (noise > 0) {
    for (Eigen::Index j = 0; j < p.q.size(); ++j) p.q[j] += noise * normal(rng_);
    for (Eigen::Index j = 0; j < p.qdot.size(); ++j) p.qdot[j] += noise * normal(rng_);
    if (model_.floating()) p.ang_vel += noise * normal(rng_);
  }
  p.gravity = model_.floating() ? Vec2(std::sin(state_.root_pitch), std::cos(state_.root_pitch))
                                : Vec2(0.0, 1.0);
  p.prev_action = prev_action_;
  const int next = std::min(ref_index_ + 1, c.n_frames() - 1);
  PrivilegedFrame priv;
  priv.v_base = model_.floating() ? state_.root_vel : Vec2::Zero();
  priv.link_ref = forward_kinematics(model_, reference_state(model_, c.frames[next])).endpoints;

  proprio_.push_back(std::move(p));
  goals_.push_back(c.frames[next].q_ref);
  privileged_.push_back(std::move(priv));
  while (static_cast<int>(proprio_.size()) > k) proprio_.pop_front();
  while (static_cast<int>(goals_.size()) > k) goals_.pop_front();
  while (static_cast<int>(privileged_.size()) > k) privileged_.pop_front();
}

ObsPair TrackingEnv::observe() {
  const std::vector<ProprioFrame> p(proprio_.begin(), proprio_.end());
  const std::vector<Vec> g(goals_.begin(), goals_.end());
  const std::vector<PrivilegedFrame> v(privileged_.begin(), privileged_.end());
  ObsPair out;
  out.actor = build_actor_obs(p, g, config_.obs, model_.n_joints());
  out.critic = build_critic_obs(out.actor, v, randomized_.params.features(), config_.obs, model_.n_links());
  return out;
}

ObsPair TrackingEnv::reset(const StartSample& start) {
  if (start.clip_id < 0 || start.clip_id >= static_cast<int>(clips_->size()))
    throw ContractViolation("reset: clip index out of range");
  const MotionClip& c = (*clips_)[start.clip_id];
  if (start.frame < 0 || start.frame > c.n_frames() - 2)
    throw ContractViolation("reset: start frame leaves no step before the clip end");
  clip_id_ = start.clip_id;
  start_frame_ = start.frame;
  start_segment_ = start.segment;
  ref_index_ = start.frame;
  randomized_ = apply_randomization(model_, config_.gains, config_.randomization, rng_());
  state_ = rsi_state(c, start.frame, config_.rsi_jitter, model_, rng_);
  episode_length_ = 0;
  return_ = 0.0;
  component_return_ = Vec::Zero(n_reward_components());
  prev_action_ = Vec::Zero(model_.n_joints());
  command_fifo_.assign(static_cast<std::size_t>(randomized_.params.action_delay) + 1,
                       c.frames[start.frame].q_ref);
  proprio_.clear();
  goals_.clear();
  privileged_.clear();
  push_history();
  active_ = true;
  return observe();
}

StepResult TrackingEnv::step(const Vec& policy_action) {
  if (!active_) throw ContractViolation("step called on an inactive episode; call reset first");
  if (!policy_action.allFinite()) throw ContractViolation("step: action is not finite");
  const int n = model_.n_joints();
  const Vec action = config_.residual.scatter(policy_action, n);
  const MotionClip& c = clip();
  StepResult out;
  out.q_tar = apply_residual(action, c.frames[ref_index_ + 1].q_ref, config_.residual, model_);

  command_fifo_.push_back(out.q_tar);
  while (static_cast<int>(command_fifo_.size()) > randomized_.params.action_delay + 1)
    command_fifo_.pop_front();
  const Vec applied = command_fifo_.front();

  Vec noise = Vec::Zero(n);
  if (randomized_.params.torque_noise_std > 0) {
    std::normal_distribution<double> normal(0.0, randomized_.params.torque_noise_std);
    for (int j = 0; j < n; ++j) noise[j] = normal(rng_);
  }
  const RobotModel& plant = randomized_.model;
  out.tau = Vec::Zero(n);
  try {
    for (int s = 0; s < config_.decimation; ++s) {
      Vec tau = pd_torque(plant, applied, state_.q, state_.qdot, randomized_.gains) + noise;
      for (int j = 0; j < n; ++j)
        tau[j] = std::clamp(tau[j], -plant.joint_torque_limit[j], plant.joint_torque_limit[j]);
      state_ = resmimic::step(plant, state_, tau, randomized_.params, config_.dt);
      out.tau = tau;
    }
  } catch (const DivergenceError&) {
    out.diverged = true;
  }
  ++ref_index_;
  ++episode_length_;
  const MotionFrame& ref = c.frames[ref_index_];

  if (out.diverged) {
    out.verdict = Termination::kLimitViolation;
  } else if (config_.termination.enabled) {
    out.verdict = check_termination(state_, ref, curriculum_.eps_q, model_, config_.termination);
  }
  out.truncated = out.verdict == Termination::kNone && ref_index_ == c.n_frames() - 1;

  const SimState ref_state = reference_state(model_, ref);
  const auto links = forward_kinematics(model_, state_).endpoints;
  const auto ref_links = forward_kinematics(model_, ref_state).endpoints;
  TrackingSample ts{&state_, &links, &ref, &ref_links, model_.floating()};
  Vec tracking = out.diverged ? Vec::Zero(static_cast<Eigen::Index>(config_.reward.tracking.size()))
                              : tracking_reward(ts, config_.reward);
  RegularizationInput reg{out.tau, action, prev_action_, &state_, &model_, state_.contact_forces,
                          out.verdict != Termination::kNone};
  Vec regularization = regularization_reward(reg, config_.reward);
  if (out.diverged) {
    regularization.head(4).setZero();
  }
  out.reward = total_reward(std::move(tracking), std::move(regularization),
                            penalty_scale(curriculum_.progress, config_.reward));

  const Vec heads = out.reward.head_rewards();
  return_ += out.reward.total;
  component_return_ += heads;
  if (trace_) {
    trace_->component_names = config_.reward.component_names();
    trace_->rows.push_back({episode_length_, ref_index_, state_.q, ref.q_ref, out.q_tar, out.tau,
                            heads, out.reward.total});
  }

  prev_action_ = action;
  if (!out.diverged) push_history();
  out.obs = observe();

  if (out.episode_over()) {
    active_ = false;
    const int per = segment_clip(c).front().size();
    last_episode_ = {episode_length_,
                     out.verdict,
                     out.truncated,
                     clip_id_,
                     start_frame_,
                     start_segment_,
                     segment_starts_[clip_id_] + std::min(ref_index_, c.n_frames() - 1) / per,
                     return_,
                     component_return_};
  }
  return out;
}

}  // namespace resmimic
