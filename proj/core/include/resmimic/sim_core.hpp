#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace resmimic {

using Vec = Eigen::VectorXd;
using Vec2 = Eigen::Vector2d;
using Mat = Eigen::MatrixXd;

enum class BaseMode { kFixed, kFloating };

struct JointLimits {
  double lo = -1.0;
  double hi = 1.0;
  double center() const { return 0.5 * (lo + hi); }
  double half_range() const { return 0.5 * (hi - lo); }
};

// Planar serial chain in the (x, z) plane. Angles are measured
// counter-clockwise from the downward vertical: a link with absolute angle
// theta points along (sin theta, -cos theta), so q = 0 is the hanging pose.
// In floating mode a base body (base_mass, base_inertia) sits at root_pos
// with orientation root_pitch, and joint 0 attaches link 0 to it.
struct RobotModel {
  std::vector<double> link_length;
  std::vector<double> link_mass;
  std::vector<double> link_inertia;  // about the link COM, at mid-length
  std::vector<double> joint_damping;
  std::vector<JointLimits> joint_limits;
  std::vector<double> joint_vel_limit;
  std::vector<double> joint_torque_limit;
  BaseMode base_mode = BaseMode::kFixed;
  double base_mass = 1.0;
  double base_inertia = 0.05;
  std::vector<int> foot_links;  // link indices whose distal end touches ground
  double gravity = 9.81;
  double contact_stiffness = 2.0e4;
  double contact_damping = 400.0;
  double contact_tangent_damping = 400.0;

  int n_links() const { return static_cast<int>(link_length.size()); }
  int n_joints() const { return n_links(); }
  // Generalized coordinates: [x, z, pitch, q...] floating, [q...] fixed.
  int n_dof() const { return n_joints() + (floating() ? 3 : 0); }
  bool floating() const { return base_mode == BaseMode::kFloating; }

  /// Throws ConfigError if any invariant fails.
  void validate() const;

  /// Uniform chain helper used by tests, benches and the default configs.
  static RobotModel uniform_chain(int n_links, double length = 1.0, double mass = 1.0);
};

struct ContactForce {
  double normal = 0.0;
  double tangential = 0.0;
  double slip_speed = 0.0;
};

struct SimState {
  Vec q;
  Vec qdot;
  Vec2 root_pos = Vec2::Zero();
  Vec2 root_vel = Vec2::Zero();
  double root_pitch = 0.0;
  double root_pitch_rate = 0.0;
  double time = 0.0;
  std::vector<ContactForce> contact_forces;  // one per foot link

  static SimState zero(const RobotModel& model);
  bool all_finite() const;

  Vec generalized_position(const RobotModel& model) const;
  Vec generalized_velocity(const RobotModel& model) const;
  void set_generalized(const RobotModel& model, const Vec& pos, const Vec& vel);
};

struct PdGains {
  Vec kp;
  Vec kd;

  static PdGains uniform(int n, double kp, double kd);
  void validate(int n_joints) const;
};

struct RandomizationParams {
  Vec mass_scale;      // per link
  Vec inertia_scale;   // per link
  double friction = 1.0;
  Vec kp_scale;        // per joint
  Vec kd_scale;        // per joint
  int action_delay = 0;  // control steps
  double obs_noise_std = 0.0;
  double torque_noise_std = 0.0;

  static RandomizationParams identity(const RobotModel& model);
  /// Privileged feature vector handed to the critic. Order: mass_scale,
  /// inertia_scale, friction, kp_scale, kd_scale, action_delay,
  /// obs_noise_std, torque_noise_std.
  Vec features() const;
  static int feature_size(int n_links, int n_joints) { return 2 * n_links + 2 * n_joints + 4; }
};

struct Range {
  double lo = 1.0;
  double hi = 1.0;
};

struct RandomizationRanges {
  Range mass_scale{1.0, 1.0};
  Range inertia_scale{1.0, 1.0};
  Range friction{1.0, 1.0};
  Range kp_scale{1.0, 1.0};
  Range kd_scale{1.0, 1.0};
  int action_delay_min = 0;
  int action_delay_max = 0;
  int max_action_delay = 4;
  Range obs_noise_std{0.0, 0.0};
  Range torque_noise_std{0.0, 0.0};

  void validate() const;
};

struct Randomized {
  RobotModel model;
  PdGains gains;
  RandomizationParams params;
};

/// tau_i = kp_i (q_tar_i - q_i) - kd_i qdot_i, clamped to the torque limit.
Vec pd_torque(const RobotModel& model, const Vec& q_tar, const Vec& q, const Vec& qdot,
              const PdGains& gains);

/// Generalized accelerations (layout of SimState::generalized_velocity) from
/// composite-rigid-body mass matrix and recursive Newton-Euler bias forces.
/// `contacts`, if non-null, receives the penalty forces used.
Vec forward_dynamics(const RobotModel& model, const SimState& state, const Vec& torque,
                     double friction, std::vector<ContactForce>* contacts = nullptr);

/// Joint-space mass matrix (CRBA).
Mat mass_matrix(const RobotModel& model, const SimState& state);

/// One semi-implicit Euler step. Throws DivergenceError on non-finite output.
SimState step(const RobotModel& model, const SimState& state, const Vec& torque,
              const RandomizationParams& params, double dt);

struct LinkFrames {
  Vec2 root = Vec2::Zero();
  std::vector<Vec2> endpoints;  // distal end of each link
  std::vector<Vec2> coms;
};

LinkFrames forward_kinematics(const RobotModel& model, const SimState& state);

/// Kinetic plus gravitational potential energy. Potential is zero at the
/// hanging pose with the root at the origin.
double total_energy(const RobotModel& model, const SimState& state);

/// Samples each randomization channel uniformly from its range. Inputs are
/// not modified.
Randomized apply_randomization(const RobotModel& model, const PdGains& gains,
                               const RandomizationRanges& ranges, std::uint64_t seed);

}  // namespace resmimic
