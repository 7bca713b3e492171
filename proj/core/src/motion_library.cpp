#include "resmimic/motion_library.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "resmimic/errors.hpp"

namespace resmimic {
namespace {

static_assert(std::endian::native == std::endian::little,
              "clip files are written in native little-endian order");

constexpr char kClipMagic[8] = {'R', 'M', 'C', 'L', 'I', 'P', '0', '1'};

bool frame_finite(const MotionFrame& f) {
  return f.q_ref.allFinite() && f.qdot_ref.allFinite() && f.root_pos_ref.allFinite() &&
         f.root_vel_ref.allFinite() && std::isfinite(f.root_pitch_ref) &&
         std::isfinite(f.root_pitch_rate_ref);
}

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw ParseError("clip file truncated while reading " + what);
  return value;
}

// Smoothstep blend over [start, start + width]; C1 at both ends.
struct Blend {
  double start;
  double width;

  double value(double t) const {
    if (t <= start) return 0.0;
    if (t >= start + width) return 1.0;
    const double u = (t - start) / width;
    return u * u * (3.0 - 2.0 * u);
  }
  double derivative(double t) const {
    if (t <= start || t >= start + width) return 0.0;
    const double u = (t - start) / width;
    return 6.0 * u * (1.0 - u) / width;
  }
  // Integral of value() from 0 to t (start >= 0).
  double integral(double t) const {
    if (t <= start) return 0.0;
    if (t >= start + width) return 0.5 * width + (t - start - width);
    const double u = (t - start) / width;
    return width * (u * u * u - 0.5 * u * u * u * u);
  }
};

}  // namespace

void MotionClip::validate() const {
  if (!(fps > 0) || !std::isfinite(fps)) throw ContractViolation("clip fps must be > 0");
  if (frames.size() < 2) throw ContractViolation("clip needs at least 2 frames");
  const int n = n_joints();
  if (n == 0) throw ContractViolation("clip frames have no joints");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.q_ref.size() != n || f.qdot_ref.size() != n)
      throw ContractViolation("inconsistent joint dimension at frame " + std::to_string(i));
    if (!frame_finite(f)) throw ContractViolation("non-finite value at frame " + std::to_string(i));
  }
}

void save_clip(const MotionClip& clip, const std::filesystem::path& path) {
  clip.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open clip file for writing: " + path.string());
  out.write(kClipMagic, sizeof(kClipMagic));
  write_pod(out, kClipFormatVersion);
  write_pod(out, static_cast<std::uint32_t>(clip.n_joints()));
  write_pod(out, clip.fps);
  write_pod(out, static_cast<std::uint64_t>(clip.n_frames()));
  write_pod(out, static_cast<std::uint32_t>(clip.name.size()));
  out.write(clip.name.data(), static_cast<std::streamsize>(clip.name.size()));
  for (const auto& f : clip.frames) {
    out.write(reinterpret_cast<const char*>(f.q_ref.data()),
              static_cast<std::streamsize>(sizeof(double) * f.q_ref.size()));
    out.write(reinterpret_cast<const char*>(f.qdot_ref.data()),
              static_cast<std::streamsize>(sizeof(double) * f.qdot_ref.size()));
    const double tail[6] = {f.root_pos_ref.x(), f.root_pos_ref.y(), f.root_vel_ref.x(),
                            f.root_vel_ref.y(), f.root_pitch_ref, f.root_pitch_rate_ref};
    out.write(reinterpret_cast<const char*>(tail), sizeof(tail));
  }
  if (!out) throw ParseError("failed writing clip file: " + path.string());
}

MotionClip load_clip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open clip file: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kClipMagic, sizeof(magic)) != 0)
    throw ParseError("bad clip header (magic) in " + path.string());
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kClipFormatVersion)
    throw ParseError("unsupported clip version " + std::to_string(version));
  const auto n_joints = read_pod<std::uint32_t>(in, "n_joints");
  const auto fps = read_pod<double>(in, "fps");
  const auto n_frames = read_pod<std::uint64_t>(in, "n_frames");
  const auto name_len = read_pod<std::uint32_t>(in, "name length");
  if (n_joints == 0 || n_joints > 4096) throw ParseError("bad clip header: n_joints");
  if (!(fps > 0) || !std::isfinite(fps)) throw ParseError("bad clip header: fps");
  if (n_frames < 2) throw ParseError("clip must contain at least 2 frames");
  if (name_len > 4096) throw ParseError("bad clip header: name length");
  MotionClip clip;
  clip.fps = fps;
  clip.name.resize(name_len);
  if (!in.read(clip.name.data(), name_len)) throw ParseError("clip file truncated in name");
  const int n = static_cast<int>(n_joints);
  std::vector<double> row(2 * n + 6);
  clip.frames.reserve(n_frames);
  for (std::uint64_t i = 0; i < n_frames; ++i) {
    if (!in.read(reinterpret_cast<char*>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(double))))
      throw ParseError("clip file truncated at frame " + std::to_string(i));
    MotionFrame f;
    f.q_ref = Eigen::Map<const Vec>(row.data(), n);
    f.qdot_ref = Eigen::Map<const Vec>(row.data() + n, n);
    f.root_pos_ref = {row[2 * n], row[2 * n + 1]};
    f.root_vel_ref = {row[2 * n + 2], row[2 * n + 3]};
    f.root_pitch_ref = row[2 * n + 4];
    f.root_pitch_rate_ref = row[2 * n + 5];
    if (!frame_finite(f)) throw ParseError("non-finite value at frame " + std::to_string(i));
    clip.frames.push_back(std::move(f));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw ParseError("trailing bytes after last frame in " + path.string());
  return clip;
}

MotionClip load_clip_csv(const std::filesystem::path& path, double fps) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open clip file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV clip: " + path.string());
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4) throw ParseError("CSV header needs joints and root columns");
  const int n = static_cast<int>(header.size()) - 3;
  for (int j = 0; j < n; ++j)
    if (header[j] != "joint_" + std::to_string(j))
      throw ParseError("malformed CSV header at column " + std::to_string(j));
  if (header[n] != "root_x" || header[n + 1] != "root_z" || header[n + 2] != "root_pitch")
    throw ParseError("malformed CSV header: expected root_x,root_z,root_pitch");
  MotionClip clip;
  clip.name = path.stem().string();
  clip.fps = fps;
  int frame = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw ParseError("unparsable value at frame " + std::to_string(frame));
      }
    }
    if (static_cast<int>(values.size()) != n + 3)
      throw ParseError("inconsistent joint dimension at frame " + std::to_string(frame));
    for (double v : values)
      if (!std::isfinite(v)) throw ParseError("non-finite value at frame " + std::to_string(frame));
    MotionFrame f;
    f.q_ref = Eigen::Map<const Vec>(values.data(), n);
    f.qdot_ref = Vec::Zero(n);
    f.root_pos_ref = {values[n], values[n + 1]};
    f.root_pitch_ref = values[n + 2];
    clip.frames.push_back(std::move(f));
    ++frame;
  }
  if (clip.frames.size() < 2) throw ParseError("clip must contain at least 2 frames");
  return finite_difference_velocities(std::move(clip));
}

void save_clip_csv(const MotionClip& clip, const std::filesystem::path& path) {
  clip.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open clip file for writing: " + path.string());
  const int n = clip.n_joints();
  for (int j = 0; j < n; ++j) out << "joint_" << j << ',';
  out << "root_x,root_z,root_pitch\n";
  char buf[64];
  auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf << sep;
  };
  for (const auto& f : clip.frames) {
    for (int j = 0; j < n; ++j) put(f.q_ref[j], ',');
    put(f.root_pos_ref.x(), ',');
    put(f.root_pos_ref.y(), ',');
    put(f.root_pitch_ref, '\n');
  }
}

void clamp_to_limits(MotionClip& clip, const RobotModel& model) {
  if (clip.n_joints() != model.n_joints())
    throw ContractViolation("clip joint dimension does not match the robot model");
  for (auto& f : clip.frames)
    for (int j = 0; j < model.n_joints(); ++j)
      f.q_ref[j] = std::clamp(f.q_ref[j], model.joint_limits[j].lo, model.joint_limits[j].hi);
}

void SynthSpec::validate() const {
  if (!(duration_s > 0) || !(fps > 0)) throw ConfigError("duration and fps must be > 0", "synth");
  if (std::lround(duration_s * fps) < 2) throw ConfigError("fewer than 2 frames", "synth.duration");
  if (n_joints < 1) throw ConfigError("need at least one joint", "synth.n_joints");
  const auto n = static_cast<std::size_t>(n_joints);
  if (center.size() != n || amplitude.size() != n || frequency.size() != n ||
      tail_amplitude.size() != n || limits.size() != n)
    throw ConfigError("per-joint vectors must have n_joints entries", "synth");
  if (n_phrases < 1) throw ConfigError("need at least one phrase", "synth.n_phrases");
  if (!(tail_fraction >= 0 && tail_fraction <= 1))
    throw ConfigError("must lie in [0, 1]", "synth.tail_fraction");
  if (!(blend_s >= 0)) throw ConfigError("must be >= 0", "synth.blend_s");
  for (std::size_t j = 0; j < n; ++j) {
    const auto& lim = limits[j];
    if (!(lim.lo < lim.hi)) throw ConfigError("min must be < max", "synth.limits");
    if (!(amplitude[j].lo >= 0 && amplitude[j].lo <= amplitude[j].hi))
      throw ConfigError("band must satisfy 0 <= lo <= hi", "synth.amplitude");
    if (!(frequency[j].lo > 0 && frequency[j].lo <= frequency[j].hi))
      throw ConfigError("band must satisfy 0 < lo <= hi", "synth.frequency");
    if (!(tail_amplitude[j] >= 0)) throw ConfigError("must be >= 0", "synth.tail_amplitude");
    if (center[j] - amplitude[j].hi < lim.lo || center[j] + amplitude[j].hi > lim.hi)
      throw ConfigError("ordinary amplitude band for joint " + std::to_string(j) +
                            " exceeds the joint limits",
                        "synth.amplitude");
  }
}

MotionClip synth_reference(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const int n = spec.n_joints;
  const int phrases = spec.n_phrases;
  const int n_frames = static_cast<int>(std::lround(spec.duration_s * spec.fps));
  const double phrase_len = spec.duration_s / phrases;
  const double width = std::min(spec.blend_s, phrase_len);

  const int n_tail = static_cast<int>(std::lround(spec.tail_fraction * phrases));
  std::vector<int> order(phrases);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_tail(phrases, false);
  for (int i = 0; i < n_tail; ++i) is_tail[order[i]] = true;

  Mat amp(phrases, n), freq(phrases, n);
  for (int k = 0; k < phrases; ++k) {
    for (int j = 0; j < n; ++j) {
      const auto& a = spec.amplitude[j];
      const auto& f = spec.frequency[j];
      amp(k, j) = is_tail[k] ? spec.tail_amplitude[j]
                             : std::uniform_real_distribution<double>(a.lo, a.hi)(rng);
      freq(k, j) = std::uniform_real_distribution<double>(f.lo, f.hi)(rng);
    }
  }
  std::vector<Blend> blends;
  for (int k = 1; k < phrases; ++k) blends.push_back({k * phrase_len - 0.5 * width, width});

  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  MotionClip clip;
  clip.name = "synth_" + std::to_string(seed);
  clip.fps = spec.fps;
  clip.frames.resize(n_frames);
  for (int i = 0; i < n_frames; ++i) {
    const double t = i / spec.fps;
    MotionFrame& fr = clip.frames[i];
    fr.q_ref.resize(n);
    fr.qdot_ref.resize(n);
    for (int j = 0; j < n; ++j) {
      double a = amp(0, j), da = 0.0, f = freq(0, j), cycles = freq(0, j) * t;
      for (int k = 1; k < phrases; ++k) {
        const Blend& b = blends[k - 1];
        const double step_a = amp(k, j) - amp(k - 1, j);
        const double step_f = freq(k, j) - freq(k - 1, j);
        if (width > 0) {
          a += step_a * b.value(t);
          da += step_a * b.derivative(t);
          f += step_f * b.value(t);
          cycles += step_f * b.integral(t);
        } else if (t >= b.start) {
          a += step_a;
          f += step_f;
          cycles += step_f * (t - b.start);
        }
      }
      const double phase = kTwoPi * cycles;
      const double q = spec.center[j] + a * std::sin(phase);
      const double qd = da * std::sin(phase) + a * kTwoPi * f * std::cos(phase);
      const auto& lim = spec.limits[j];
      if (q < lim.lo || q > lim.hi) {
        fr.q_ref[j] = std::clamp(q, lim.lo, lim.hi);
        fr.qdot_ref[j] = 0.0;
      } else {
        fr.q_ref[j] = q;
        fr.qdot_ref[j] = qd;
      }
    }
    const double pw = kTwoPi * spec.pitch_frequency;
    fr.root_pos_ref = {0.0, spec.root_height};
    fr.root_pitch_ref = spec.pitch_amplitude * std::sin(pw * t);
    fr.root_pitch_rate_ref = spec.pitch_amplitude * pw * std::cos(pw * t);
  }
  return clip;
}

MotionClip finite_difference_velocities(MotionClip clip) {
  const int m = clip.n_frames();
  if (m < 2) throw ContractViolation("finite differences need at least 2 frames");
  const double fps = clip.fps;
  auto diff = [&](auto get) {
    using T = std::decay_t<decltype(get(clip.frames[0]))>;
    std::vector<T> out(m);
    out[0] = (get(clip.frames[1]) - get(clip.frames[0])) * fps;
    out[m - 1] = (get(clip.frames[m - 1]) - get(clip.frames[m - 2])) * fps;
    for (int i = 1; i < m - 1; ++i)
      out[i] = (get(clip.frames[i + 1]) - get(clip.frames[i - 1])) * (0.5 * fps);
    return out;
  };
  const auto qd = diff([](const MotionFrame& f) -> Vec { return f.q_ref; });
  const auto rv = diff([](const MotionFrame& f) -> Vec2 { return f.root_pos_ref; });
  const auto pr = diff([](const MotionFrame& f) { return f.root_pitch_ref; });
  for (int i = 0; i < m; ++i) {
    clip.frames[i].qdot_ref = qd[i];
    clip.frames[i].root_vel_ref = rv[i];
    clip.frames[i].root_pitch_rate_ref = pr[i];
  }
  return clip;
}

std::vector<Segment> segment_clip(const MotionClip& clip, int clip_id) {
  const int per = std::max(1, static_cast<int>(std::lround(clip.fps)));
  const int m = clip.n_frames();
  std::vector<Segment> out;
  for (int start = 0; start < m; start += per) {
    const int end = std::min(m, start + per);
    out.push_back({clip_id, start, end, end - start < per});
  }
  return out;
}

std::vector<Segment> segment_clips(const std::vector<MotionClip>& clips) {
  std::vector<Segment> out;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    auto s = segment_clip(clips[c], static_cast<int>(c));
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

JointStats frame_statistics(const MotionClip& clip, int begin, int end) {
  if (begin < 0 || end > clip.n_frames() || end <= begin)
    throw ContractViolation("frame_statistics: empty or out-of-range frame span");
  const int n = clip.n_joints();
  const double count = end - begin;
  JointStats s{Vec::Zero(n), Vec::Zero(n)};
  for (int i = begin; i < end; ++i) s.mean += clip.frames[i].q_ref;
  s.mean /= count;
  for (int i = begin; i < end; ++i) s.std += (clip.frames[i].q_ref - s.mean).array().square().matrix();
  s.std = (s.std / count).cwiseSqrt();
  return s;
}

std::vector<ClipStatistics> joint_statistics(const std::vector<MotionClip>& clips) {
  if (clips.empty()) throw ContractViolation("joint_statistics needs at least one clip");
  std::vector<ClipStatistics> out;
  out.reserve(clips.size());
  for (const auto& clip : clips) {
    ClipStatistics cs;
    cs.clip = frame_statistics(clip, 0, clip.n_frames());
    for (const auto& seg : segment_clip(clip))
      cs.segments.push_back(frame_statistics(clip, seg.start_frame, seg.end_frame));
    out.push_back(std::move(cs));
  }
  return out;
}

std::vector<int> select_key_dofs(const std::vector<ClipStatistics>& stats, double quantile) {
  if (stats.empty() || stats[0].segments.empty())
    throw ContractViolation("select_key_dofs needs computed statistics");
  if (!(quantile >= 0 && quantile <= 1)) throw ConfigError("quantile must lie in [0, 1]");
  const int n = static_cast<int>(stats[0].clip.mean.size());
  Vec sum = Vec::Zero(n), sum_sq = Vec::Zero(n);
  double count = 0;
  for (const auto& cs : stats)
    for (const auto& seg : cs.segments) {
      sum += seg.mean;
      count += 1;
    }
  const Vec mean = sum / count;
  for (const auto& cs : stats)
    for (const auto& seg : cs.segments) sum_sq += (seg.mean - mean).array().square().matrix();
  const Vec spread = (sum_sq / count).cwiseSqrt();

  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return spread[a] > spread[b]; });
  const int keep = std::max(1, n - static_cast<int>(std::ceil(quantile * n - 1e-12)));
  std::vector<int> out(idx.begin(), idx.begin() + keep);
  std::sort(out.begin(), out.end());
  return out;
}

Mat occupancy(const std::vector<Segment>& segments, const std::vector<MotionClip>& clips,
              const std::vector<int>& key_dofs, int bins_per_dof,
              const std::vector<JointLimits>& limits, BinningMode mode) {
  if (key_dofs.empty()) throw ContractViolation("occupancy needs at least one key DOF");
  if (bins_per_dof < 2) throw ContractViolation("occupancy needs bins_per_dof >= 2");
  if (mode == BinningMode::kProduct && key_dofs.size() > 2)
    throw ContractViolation("product binning is capped at 2 key DOFs");
  for (int d : key_dofs)
    if (d < 0 || d >= static_cast<int>(limits.size()))
      throw ContractViolation("key DOF index out of range");
  const int k = static_cast<int>(key_dofs.size());
  const int cols = mode == BinningMode::kMarginal
                       ? k * bins_per_dof
                       : static_cast<int>(std::pow(bins_per_dof, k));
  auto bin_of = [&](int dof, double x) {
    const auto& lim = limits[dof];
    const int b = static_cast<int>(std::floor((x - lim.lo) / (lim.hi - lim.lo) * bins_per_dof));
    return std::clamp(b, 0, bins_per_dof - 1);
  };
  Mat p = Mat::Zero(static_cast<Eigen::Index>(segments.size()), cols);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const Segment& seg = segments[s];
    if (seg.size() <= 0) throw ContractViolation("occupancy: empty segment " + std::to_string(s));
    const MotionClip& clip = clips.at(seg.clip_id);
    for (int i = seg.start_frame; i < seg.end_frame; ++i) {
      const Vec& q = clip.frames[i].q_ref;
      if (mode == BinningMode::kMarginal) {
        for (int d = 0; d < k; ++d) p(s, d * bins_per_dof + bin_of(key_dofs[d], q[key_dofs[d]])) += 1.0;
      } else {
        int index = 0;
        for (int d = 0; d < k; ++d) index = index * bins_per_dof + bin_of(key_dofs[d], q[key_dofs[d]]);
        p(s, index) += 1.0;
      }
    }
    p.row(s) /= p.row(s).sum();
  }
  return p;
}

}  // namespace resmimic
