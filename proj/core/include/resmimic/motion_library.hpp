#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resmimic/sim_core.hpp"

namespace resmimic {

struct MotionFrame {
  Vec q_ref;
  Vec qdot_ref;
  Vec2 root_pos_ref = Vec2::Zero();
  Vec2 root_vel_ref = Vec2::Zero();
  double root_pitch_ref = 0.0;
  double root_pitch_rate_ref = 0.0;
};

struct MotionClip {
  std::string name;
  double fps = 50.0;
  std::vector<MotionFrame> frames;

  int n_frames() const { return static_cast<int>(frames.size()); }
  int n_joints() const { return frames.empty() ? 0 : static_cast<int>(frames[0].q_ref.size()); }
  double duration() const { return n_frames() / fps; }
  /// Throws ContractViolation naming the first bad frame.
  void validate() const;
};

// Binary clip layout, little-endian:
//   "RMCLIP01" | u32 version | u32 n_joints | f64 fps | u64 n_frames |
//   u32 name_len | name bytes | n_frames rows of (2 n_joints + 6) f64:
//   q, qdot, root_x, root_z, root_vx, root_vz, pitch, pitch_rate
inline constexpr std::uint32_t kClipFormatVersion = 1;

MotionClip load_clip(const std::filesystem::path& path);
void save_clip(const MotionClip& clip, const std::filesystem::path& path);

/// CSV with header joint_0..joint_{n-1},root_x,root_z,root_pitch. Velocities
/// are recovered by finite differences.
MotionClip load_clip_csv(const std::filesystem::path& path, double fps);
void save_clip_csv(const MotionClip& clip, const std::filesystem::path& path);

/// Clamps every q_ref into the model's joint limits.
void clamp_to_limits(MotionClip& clip, const RobotModel& model);

struct SynthSpec {
  double duration_s = 10.0;
  double fps = 50.0;
  int n_joints = 1;
  std::vector<double> center;         // per joint, rad
  std::vector<Range> amplitude;       // per joint band for ordinary phrases
  std::vector<Range> frequency;       // per joint band, Hz
  std::vector<double> tail_amplitude; // per joint amplitude of long-tail phrases
  std::vector<JointLimits> limits;
  int n_phrases = 1;
  double tail_fraction = 0.0;   // fraction of phrases drawn from the tail
  double blend_s = 0.25;        // C1 blend window at phrase boundaries
  double root_height = 0.0;
  double pitch_amplitude = 0.0;
  double pitch_frequency = 0.5;

  void validate() const;
};

MotionClip synth_reference(const SynthSpec& spec, std::uint64_t seed);

/// Central differences inside, one-sided at the ends, scaled by fps.
MotionClip finite_difference_velocities(MotionClip clip);

struct Segment {
  int clip_id = 0;
  int start_frame = 0;
  int end_frame = 0;  // exclusive
  bool short_segment = false;
  int size() const { return end_frame - start_frame; }
};

/// One-second segments; the last may be shorter and is flagged.
std::vector<Segment> segment_clip(const MotionClip& clip, int clip_id = 0);
std::vector<Segment> segment_clips(const std::vector<MotionClip>& clips);

struct JointStats {
  Vec mean;
  Vec std;  // population
};

struct ClipStatistics {
  JointStats clip;
  std::vector<JointStats> segments;
};

JointStats frame_statistics(const MotionClip& clip, int begin, int end);
std::vector<ClipStatistics> joint_statistics(const std::vector<MotionClip>& clips);

/// Joints ranked by the across-segment std of segment means; keeps the top
/// max(1, n - ceil(quantile * n)), ties to the lower index. Sorted ascending.
std::vector<int> select_key_dofs(const std::vector<ClipStatistics>& stats, double quantile);

enum class BinningMode { kMarginal, kProduct };

/// Rows are normalized key-DOF histograms, one per segment. Bin edges split
/// each key joint's limit range evenly.
Mat occupancy(const std::vector<Segment>& segments, const std::vector<MotionClip>& clips,
              const std::vector<int>& key_dofs, int bins_per_dof,
              const std::vector<JointLimits>& limits, BinningMode mode = BinningMode::kMarginal);

}  // namespace resmimic
