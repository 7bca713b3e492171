#include "resmimic/sim_core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "resmimic/errors.hpp"

namespace resmimic {
namespace {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Planar spatial vectors are (angular, linear_x, linear_z), expressed in the
// world frame about the world origin.

Vec2 perp(const Vec2& u) { return {-u.y(), u.x()}; }
double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }
Vec2 link_dir(double theta) { return {std::sin(theta), -std::cos(theta)}; }

Vec3 motion_cross(const Vec3& v, const Vec3& m) {
  const Vec2 lin = v[0] * perp(m.tail<2>()) - m[0] * perp(v.tail<2>());
  return {0.0, lin.x(), lin.y()};
}

Vec3 force_cross(const Vec3& v, const Vec3& f) {
  const Vec2 lin = v[0] * perp(f.tail<2>());
  return {cross2(v.tail<2>(), f.tail<2>()), lin.x(), lin.y()};
}

Mat3 spatial_inertia(double mass, double inertia_com, const Vec2& com) {
  Mat3 out;
  out << inertia_com + mass * com.squaredNorm(), -mass * com.y(), mass * com.x(),
      -mass * com.y(), mass, 0.0,
      mass * com.x(), 0.0, mass;
  return out;
}

Vec3 revolute_axis(const Vec2& pivot) { return {1.0, pivot.y(), -pivot.x()}; }

// Bodies of the serial tree in root-to-tip order. Floating mode prepends two
// massless slider bodies and the base body.
struct ChainKinematics {
  std::vector<Vec3> axis;
  std::vector<Mat3> inertia;
  std::vector<Vec3> velocity;
  std::vector<Vec2> pivots;     // proximal point of each link, plus tip
  std::vector<double> theta;    // absolute link angles
  int first_link = 0;           // body index of link 0
};

ChainKinematics chain_kinematics(const RobotModel& model, const SimState& state) {
  const int n = model.n_links();
  ChainKinematics k;
  const int nb = model.n_dof();
  k.axis.reserve(nb);
  k.inertia.reserve(nb);
  k.pivots.resize(n + 1);
  k.theta.resize(n);

  const Vec2 root = model.floating() ? state.root_pos : Vec2::Zero();
  const double pitch = model.floating() ? state.root_pitch : 0.0;
  if (model.floating()) {
    k.axis.push_back({0.0, 1.0, 0.0});
    k.inertia.push_back(Mat3::Zero());
    k.axis.push_back({0.0, 0.0, 1.0});
    k.inertia.push_back(Mat3::Zero());
    k.axis.push_back(revolute_axis(root));
    k.inertia.push_back(spatial_inertia(model.base_mass, model.base_inertia, root));
    k.first_link = 3;
  }
  double theta = pitch;
  Vec2 p = root;
  for (int i = 0; i < n; ++i) {
    theta += state.q[i];
    k.theta[i] = theta;
    k.pivots[i] = p;
    const Vec2 d = link_dir(theta);
    const Vec2 com = p + 0.5 * model.link_length[i] * d;
    k.axis.push_back(revolute_axis(p));
    k.inertia.push_back(spatial_inertia(model.link_mass[i], model.link_inertia[i], com));
    p += model.link_length[i] * d;
  }
  k.pivots[n] = p;

  const Vec qd = state.generalized_velocity(model);
  k.velocity.resize(nb);
  Vec3 v = Vec3::Zero();
  for (int b = 0; b < nb; ++b) {
    v += k.axis[b] * qd[b];
    k.velocity[b] = v;
  }
  return k;
}

Vec2 point_velocity(const Vec3& body_velocity, const Vec2& point) {
  return body_velocity.tail<2>() + body_velocity[0] * perp(point);
}

// Penalty ground contact at the distal end of each foot link. Returns the
// spatial external force per body.
std::vector<Vec3> contact_wrenches(const RobotModel& model, const ChainKinematics& k,
                                   double friction, std::vector<ContactForce>* out) {
  std::vector<Vec3> ext(k.axis.size(), Vec3::Zero());
  if (out) out->assign(model.foot_links.size(), ContactForce{});
  if (!model.floating()) return ext;
  for (std::size_t f = 0; f < model.foot_links.size(); ++f) {
    const int link = model.foot_links[f];
    const int body = k.first_link + link;
    const Vec2& tip = k.pivots[link + 1];
    const Vec2 vel = point_velocity(k.velocity[body], tip);
    const double penetration = -tip.y();
    ContactForce cf;
    cf.slip_speed = std::abs(vel.x());
    if (penetration > 0.0) {
      cf.normal = std::max(0.0, model.contact_stiffness * penetration -
                                    model.contact_damping * vel.y());
      const double cap = friction * cf.normal;
      cf.tangential = std::clamp(-model.contact_tangent_damping * vel.x(), -cap, cap);
    } else {
      cf.slip_speed = 0.0;
    }
    const Vec2 force(cf.tangential, cf.normal);
    ext[body] += Vec3(cross2(tip, force), force.x(), force.y());
    if (out) (*out)[f] = cf;
  }
  return ext;
}

// Recursive Newton-Euler with zero acceleration: gravity, velocity-product
// and external-force contributions to the generalized force.
Vec bias_forces(const ChainKinematics& k, double gravity, const std::vector<Vec3>& ext) {
  const int nb = static_cast<int>(k.axis.size());
  std::vector<Vec3> force(nb);
  Vec3 acc(0.0, 0.0, gravity);
  Vec3 v_prev = Vec3::Zero();
  for (int b = 0; b < nb; ++b) {
    const Vec3& v = k.velocity[b];
    const Vec3 joint_vel = v - v_prev;
    acc = acc + motion_cross(v, joint_vel);
    force[b] = k.inertia[b] * acc + force_cross(v, k.inertia[b] * v) - ext[b];
    v_prev = v;
  }
  Vec out(nb);
  Vec3 total = Vec3::Zero();
  for (int b = nb - 1; b >= 0; --b) {
    total += force[b];
    out[b] = k.axis[b].dot(total);
  }
  return out;
}

Mat composite_mass_matrix(const ChainKinematics& k) {
  const int nb = static_cast<int>(k.axis.size());
  Mat m(nb, nb);
  Mat3 composite = Mat3::Zero();
  for (int j = nb - 1; j >= 0; --j) {
    composite += k.inertia[j];
    const Vec3 f = composite * k.axis[j];
    for (int i = 0; i <= j; ++i) {
      m(i, j) = k.axis[i].dot(f);
      m(j, i) = m(i, j);
    }
  }
  return m;
}

void require_size(const Vec& v, int n, const char* what) {
  if (v.size() != n) {
    throw ContractViolation(std::string(what) + ": expected length " + std::to_string(n) +
                            ", got " + std::to_string(v.size()));
  }
}

}  // namespace

void RobotModel::validate() const {
  const std::size_t n = link_length.size();
  if (n == 0) throw ConfigError("chain needs at least one link", "robot.links");
  auto same = [&](std::size_t m, const char* key) {
    if (m != n) throw ConfigError("length does not match number of links", key);
  };
  same(link_mass.size(), "robot.link_mass");
  same(link_inertia.size(), "robot.link_inertia");
  same(joint_damping.size(), "robot.joint_damping");
  same(joint_limits.size(), "robot.joint_limits");
  same(joint_vel_limit.size(), "robot.joint_vel_limit");
  same(joint_torque_limit.size(), "robot.joint_torque_limit");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(link_length[i] > 0)) throw ConfigError("must be > 0", "robot.link_length");
    if (!(link_mass[i] > 0)) throw ConfigError("must be > 0", "robot.link_mass");
    if (!(link_inertia[i] > 0)) throw ConfigError("must be > 0", "robot.link_inertia");
    if (!(joint_damping[i] >= 0)) throw ConfigError("must be >= 0", "robot.joint_damping");
    if (!(joint_limits[i].lo < joint_limits[i].hi))
      throw ConfigError("min must be < max", "robot.joint_limits");
    if (!(joint_vel_limit[i] > 0)) throw ConfigError("must be > 0", "robot.joint_vel_limit");
    if (!(joint_torque_limit[i] > 0))
      throw ConfigError("must be > 0", "robot.joint_torque_limit");
  }
  if (!(gravity >= 0)) throw ConfigError("must be >= 0", "robot.gravity");
  if (floating()) {
    if (!(base_mass > 0) || !(base_inertia > 0))
      throw ConfigError("base mass/inertia must be > 0", "robot.base_mass");
    if (!(contact_stiffness > 0) || contact_damping < 0 || contact_tangent_damping < 0)
      throw ConfigError("invalid contact parameters", "robot.contact_stiffness");
    for (int f : foot_links)
      if (f < 0 || f >= static_cast<int>(n)) throw ConfigError("out of range", "robot.foot_links");
  } else if (!foot_links.empty()) {
    throw ConfigError("only valid in floating mode", "robot.foot_links");
  }
}

RobotModel RobotModel::uniform_chain(int n_links, double length, double mass) {
  RobotModel m;
  const auto n = static_cast<std::size_t>(n_links);
  m.link_length.assign(n, length);
  m.link_mass.assign(n, mass);
  m.link_inertia.assign(n, mass * length * length / 12.0);
  m.joint_damping.assign(n, 0.0);
  m.joint_limits.assign(n, JointLimits{-3.0, 3.0});
  m.joint_vel_limit.assign(n, 20.0);
  m.joint_torque_limit.assign(n, 100.0);
  return m;
}

SimState SimState::zero(const RobotModel& model) {
  SimState s;
  s.q = Vec::Zero(model.n_joints());
  s.qdot = Vec::Zero(model.n_joints());
  s.contact_forces.assign(model.foot_links.size(), ContactForce{});
  return s;
}

bool SimState::all_finite() const {
  return q.allFinite() && qdot.allFinite() && root_pos.allFinite() && root_vel.allFinite() &&
         std::isfinite(root_pitch) && std::isfinite(root_pitch_rate) && std::isfinite(time);
}

Vec SimState::generalized_position(const RobotModel& model) const {
  if (!model.floating()) return q;
  Vec out(model.n_dof());
  out << root_pos.x(), root_pos.y(), root_pitch, q;
  return out;
}

Vec SimState::generalized_velocity(const RobotModel& model) const {
  if (!model.floating()) return qdot;
  Vec out(model.n_dof());
  out << root_vel.x(), root_vel.y(), root_pitch_rate, qdot;
  return out;
}

void SimState::set_generalized(const RobotModel& model, const Vec& pos, const Vec& vel) {
  const int n = model.n_joints();
  if (!model.floating()) {
    q = pos;
    qdot = vel;
    return;
  }
  root_pos = pos.head<2>();
  root_pitch = pos[2];
  q = pos.tail(n);
  root_vel = vel.head<2>();
  root_pitch_rate = vel[2];
  qdot = vel.tail(n);
}

PdGains PdGains::uniform(int n, double kp, double kd) {
  return PdGains{Vec::Constant(n, kp), Vec::Constant(n, kd)};
}

void PdGains::validate(int n_joints) const {
  if (kp.size() != n_joints || kd.size() != n_joints)
    throw ConfigError("gain vectors must have one entry per joint", "pd");
  if (!(kp.array() > 0).all()) throw ConfigError("kp must be > 0", "pd.kp");
  if (!(kd.array() >= 0).all()) throw ConfigError("kd must be >= 0", "pd.kd");
}

RandomizationParams RandomizationParams::identity(const RobotModel& model) {
  RandomizationParams p;
  p.mass_scale = Vec::Ones(model.n_links());
  p.inertia_scale = Vec::Ones(model.n_links());
  p.kp_scale = Vec::Ones(model.n_joints());
  p.kd_scale = Vec::Ones(model.n_joints());
  return p;
}

Vec RandomizationParams::features() const {
  Vec out(feature_size(static_cast<int>(mass_scale.size()), static_cast<int>(kp_scale.size())));
  out << mass_scale, inertia_scale, friction, kp_scale, kd_scale,
      static_cast<double>(action_delay), obs_noise_std, torque_noise_std;
  return out;
}

void RandomizationRanges::validate() const {
  auto check = [](const Range& r, const char* key, bool strictly_positive) {
    if (!(r.lo <= r.hi)) throw ConfigError("min must be <= max", key);
    if (strictly_positive ? !(r.lo > 0) : !(r.lo >= 0))
      throw ConfigError(strictly_positive ? "must be > 0" : "must be >= 0", key);
  };
  check(mass_scale, "randomization.mass_scale", true);
  check(inertia_scale, "randomization.inertia_scale", true);
  check(friction, "randomization.friction", false);
  check(kp_scale, "randomization.kp_scale", true);
  check(kd_scale, "randomization.kd_scale", true);
  check(obs_noise_std, "randomization.obs_noise_std", false);
  check(torque_noise_std, "randomization.torque_noise_std", false);
  if (action_delay_min < 0 || action_delay_min > action_delay_max ||
      action_delay_max > max_action_delay)
    throw ConfigError("need 0 <= min <= max <= max_action_delay", "randomization.action_delay");
}

Vec pd_torque(const RobotModel& model, const Vec& q_tar, const Vec& q, const Vec& qdot,
              const PdGains& gains) {
  const int n = model.n_joints();
  require_size(q_tar, n, "pd_torque q_tar");
  require_size(q, n, "pd_torque q");
  require_size(qdot, n, "pd_torque qdot");
  require_size(gains.kp, n, "pd_torque kp");
  require_size(gains.kd, n, "pd_torque kd");
  Vec tau(n);
  for (int i = 0; i < n; ++i) {
    const double raw = gains.kp[i] * (q_tar[i] - q[i]) - gains.kd[i] * qdot[i];
    const double lim = model.joint_torque_limit[i];
    tau[i] = std::clamp(raw, -lim, lim);
  }
  return tau;
}

Mat mass_matrix(const RobotModel& model, const SimState& state) {
  return composite_mass_matrix(chain_kinematics(model, state));
}

Vec forward_dynamics(const RobotModel& model, const SimState& state, const Vec& torque,
                     double friction, std::vector<ContactForce>* contacts) {
  const int n = model.n_joints();
  require_size(torque, n, "forward_dynamics torque");
  require_size(state.q, n, "forward_dynamics q");
  require_size(state.qdot, n, "forward_dynamics qdot");
  const ChainKinematics k = chain_kinematics(model, state);
  const auto ext = contact_wrenches(model, k, friction, contacts);
  Vec rhs = -bias_forces(k, model.gravity, ext);
  const int offset = model.n_dof() - n;
  for (int i = 0; i < n; ++i)
    rhs[offset + i] += torque[i] - model.joint_damping[i] * state.qdot[i];
  return composite_mass_matrix(k).ldlt().solve(rhs);
}

SimState step(const RobotModel& model, const SimState& state, const Vec& torque,
              const RandomizationParams& params, double dt) {
  if (!(dt > 0.0 && dt <= 0.01)) throw ContractViolation("step: dt must lie in (0, 0.01]");
  if (!torque.allFinite()) throw ContractViolation("step: torque is not finite");
  SimState next = state;
  const Vec acc = forward_dynamics(model, state, torque, params.friction, &next.contact_forces);
  const Vec vel = state.generalized_velocity(model) + dt * acc;
  const Vec pos = state.generalized_position(model) + dt * vel;
  next.set_generalized(model, pos, vel);
  next.time = state.time + dt;
  if (!next.all_finite()) {
    throw DivergenceError("simulation diverged at t=" + std::to_string(next.time), next.time);
  }
  return next;
}

LinkFrames forward_kinematics(const RobotModel& model, const SimState& state) {
  const int n = model.n_links();
  LinkFrames out;
  out.root = model.floating() ? state.root_pos : Vec2::Zero();
  out.endpoints.resize(n);
  out.coms.resize(n);
  double theta = model.floating() ? state.root_pitch : 0.0;
  Vec2 p = out.root;
  for (int i = 0; i < n; ++i) {
    theta += state.q[i];
    const Vec2 d = link_dir(theta);
    out.coms[i] = p + 0.5 * model.link_length[i] * d;
    p += model.link_length[i] * d;
    out.endpoints[i] = p;
  }
  return out;
}

double total_energy(const RobotModel& model, const SimState& state) {
  const ChainKinematics k = chain_kinematics(model, state);
  double kinetic = 0.0;
  for (std::size_t b = 0; b < k.axis.size(); ++b)
    kinetic += 0.5 * k.velocity[b].dot(k.inertia[b] * k.velocity[b]);
  double potential = 0.0;
  double hanging_depth = 0.0;
  const Vec2 root = model.floating() ? state.root_pos : Vec2::Zero();
  for (int i = 0; i < model.n_links(); ++i) {
    const double lc = 0.5 * model.link_length[i];
    const double com_z = (k.pivots[i] + lc * link_dir(k.theta[i])).y();
    potential += model.link_mass[i] * model.gravity * (com_z + hanging_depth + lc);
    hanging_depth += model.link_length[i];
  }
  if (model.floating()) potential += model.base_mass * model.gravity * root.y();
  return kinetic + potential;
}

Randomized apply_randomization(const RobotModel& model, const PdGains& gains,
                               const RandomizationRanges& ranges, std::uint64_t seed) {
  ranges.validate();
  std::mt19937_64 rng(seed);
  auto draw = [&rng](const Range& r) {
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
  };
  Randomized out{model, gains, RandomizationParams::identity(model)};
  RandomizationParams& p = out.params;
  for (int i = 0; i < model.n_links(); ++i) {
    p.mass_scale[i] = draw(ranges.mass_scale);
    p.inertia_scale[i] = draw(ranges.inertia_scale);
    out.model.link_mass[i] *= p.mass_scale[i];
    out.model.link_inertia[i] *= p.inertia_scale[i];
  }
  p.friction = draw(ranges.friction);
  for (int i = 0; i < model.n_joints(); ++i) {
    p.kp_scale[i] = draw(ranges.kp_scale);
    p.kd_scale[i] = draw(ranges.kd_scale);
  }
  out.gains.kp = gains.kp.cwiseProduct(p.kp_scale);
  out.gains.kd = gains.kd.cwiseProduct(p.kd_scale);
  p.action_delay =
      std::uniform_int_distribution<int>(ranges.action_delay_min, ranges.action_delay_max)(rng);
  p.obs_noise_std = draw(ranges.obs_noise_std);
  p.torque_noise_std = draw(ranges.torque_noise_std);
  return out;
}

}  // namespace resmimic
