#include "resmimic/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>

#include "resmimic/errors.hpp"

namespace resmimic {

Vec simplex_project(const Vec& v) {
  const Eigen::Index n = v.size();
  if (n == 0) throw ContractViolation("simplex_project: empty vector");
  if (!v.allFinite()) throw ContractViolation("simplex_project: non-finite input");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0, theta = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cumulative += u[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

BalanceProblem BalanceProblem::uniform_target(Mat occupancy) {
  const auto bins = occupancy.cols();
  BalanceProblem p{std::move(occupancy), Vec::Constant(bins, 1.0 / static_cast<double>(bins))};
  return p;
}

void BalanceProblem::validate() const {
  if (occupancy.rows() < 1 || occupancy.cols() < 1)
    throw ContractViolation("balance problem needs at least one segment and one bin");
  if (target.size() != occupancy.cols())
    throw ContractViolation("target length must equal the number of bins");
  if (!occupancy.allFinite() || (occupancy.array() < 0).any())
    throw ContractViolation("occupancy must be finite and nonnegative");
  for (Eigen::Index s = 0; s < occupancy.rows(); ++s)
    if (std::abs(occupancy.row(s).sum() - 1.0) > 1e-9)
      throw ContractViolation("occupancy row " + std::to_string(s) + " does not sum to 1");
  if ((target.array() < 0).any() || std::abs(target.sum() - 1.0) > 1e-9)
    throw ContractViolation("target must be a probability vector");
}

double BalanceProblem::objective(const Vec& w) const {
  return (occupancy.transpose() * w - target).squaredNorm();
}

Vec BalanceProblem::gradient(const Vec& w) const {
  return 2.0 * occupancy * (occupancy.transpose() * w - target);
}

double kkt_residual(const BalanceProblem& problem, const Vec& w, double active_threshold) {
  const Vec g = problem.gradient(w);
  double common = 0.0;
  int active = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > active_threshold) {
      common += g[i];
      ++active;
    }
  if (active == 0) return std::numeric_limits<double>::infinity();
  common /= active;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (w[i] > active_threshold)
      worst = std::max(worst, std::abs(g[i] - common));
    else
      worst = std::max(worst, common - g[i]);
  }
  return worst;
}

namespace {

// Equality-constrained least squares on the support of w; returns an empty
// vector when the solution leaves the nonnegative orthant.
Vec polish_on_support(const BalanceProblem& problem, const Vec& w) {
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w[i] > 1e-12) support.push_back(i);
  const auto k = static_cast<Eigen::Index>(support.size());
  const Mat& occ = problem.occupancy;
  Mat a(occ.cols(), k);
  for (Eigen::Index j = 0; j < k; ++j) a.col(j) = occ.row(support[j]).transpose();
  Mat kkt = Mat::Zero(k + 1, k + 1);
  kkt.topLeftCorner(k, k) = 2.0 * a.transpose() * a;
  kkt.topRightCorner(k, 1).setOnes();
  kkt.bottomLeftCorner(1, k).setOnes();
  Vec rhs(k + 1);
  rhs.head(k) = 2.0 * a.transpose() * problem.target;
  rhs[k] = 1.0;
  const Vec sol = kkt.completeOrthogonalDecomposition().solve(rhs);
  if (!sol.allFinite() || (sol.head(k).array() < 0).any()) return {};
  Vec out = Vec::Zero(w.size());
  for (Eigen::Index j = 0; j < k; ++j) out[support[j]] = sol[j];
  if (std::abs(out.sum() - 1.0) > 1e-12) return {};
  return out;
}

}  // namespace

BalanceWeights balance_weights(const BalanceProblem& problem, const BalanceOptions& options) {
  problem.validate();
  const Eigen::Index s = problem.occupancy.rows();
  BalanceWeights out;
  if (s == 1) {
    out.w = Vec::Ones(1);
    out.objective = problem.objective(out.w);
    out.converged = true;
    return out;
  }
  const Mat gram = problem.occupancy * problem.occupancy.transpose();
  const double lambda_max = Eigen::SelfAdjointEigenSolver<Mat>(gram, Eigen::EigenvaluesOnly)
                                .eigenvalues()
                                .maxCoeff();
  const double step = 1.0 / (2.0 * std::max(lambda_max, 1e-12));

  Vec w = Vec::Constant(s, 1.0 / static_cast<double>(s));
  Vec y = w;
  double momentum = 1.0;
  out.w = w;
  out.objective = problem.objective(w);
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Vec next = simplex_project(y - step * problem.gradient(y));
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    const double moved = (next - w).lpNorm<Eigen::Infinity>();
    // Gradient-based restart keeps the accelerated iteration monotone-ish.
    if ((y - next).dot(next - w) > 0) {
      y = next;
      momentum = 1.0;
    } else {
      y = next + ((momentum - 1.0) / next_momentum) * (next - w);
      momentum = next_momentum;
    }
    w = next;
    const double f = problem.objective(w);
    if (f <= out.objective) {
      out.w = w;
      out.objective = f;
    }
    out.iterations = it;
    if (moved < options.tolerance) {
      out.converged = true;
      break;
    }
  }
  const Vec polished = polish_on_support(problem, out.w);
  if (polished.size() == s && problem.objective(polished) <= out.objective + 1e-15 &&
      kkt_residual(problem, polished) <= kkt_residual(problem, out.w)) {
    out.w = polished;
    out.objective = problem.objective(polished);
  }
  return out;
}

PriorityState PriorityState::make(int segments, double alpha, double beta, double epsilon) {
  PriorityState p{Vec::Zero(segments), alpha, beta, epsilon};
  p.validate();
  return p;
}

void PriorityState::validate() const {
  if (r.size() < 1) throw ConfigError("priority state needs at least one segment");
  if (!(alpha > 0 && alpha <= 1)) throw ConfigError("must lie in (0, 1]", "sampler.alpha");
  if (!(beta >= 0)) throw ConfigError("must be >= 0", "sampler.beta");
  if (!(epsilon > 0)) throw ConfigError("must be > 0", "sampler.epsilon");
}

PriorityState ema_update(PriorityState state, int segment, bool failed) {
  if (segment < 0 || segment >= state.r.size())
    throw ContractViolation("ema_update: segment index out of range");
  double& r = state.r[segment];
  r = (1.0 - state.alpha) * r + state.alpha * (failed ? 1.0 : 0.0);
  r = std::clamp(r, 0.0, 1.0);
  return state;
}

Vec tempered_prior(const PriorityState& state) {
  if (state.r.size() < 1) throw ContractViolation("tempered_prior: no segments");
  Vec p = (state.r.array() + state.epsilon).pow(state.beta).matrix();
  return p / p.sum();
}

void SamplerMix::validate() const {
  if (uniform_time < 0 || balanced < 0 || priority < 0)
    throw ConfigError("mix entries must be >= 0", "sampler.mix");
  if (std::abs(uniform_time + balanced + priority - 1.0) > 1e-9)
    throw ConfigError("mix entries must sum to 1", "sampler.mix");
}

void SamplerConfig::validate() const {
  mix.validate();
  const RsiJitter& j = rsi_jitter;
  if (j.q < 0 || j.qdot < 0 || j.root_pos < 0 || j.root_vel < 0 || j.pitch < 0 || j.pitch_rate < 0)
    throw ConfigError("jitter std must be >= 0", "sampler.rsi_jitter");
  if (priority_warmup_iters < 0) throw ConfigError("must be >= 0", "sampler.priority_warmup_iters");
}

SamplerMix effective_mix(const SamplerConfig& config, int iteration) {
  SamplerMix mix = config.mix;
  if (config.priority_warmup_iters > 0 && iteration < config.priority_warmup_iters) {
    const double ramp = static_cast<double>(iteration) / config.priority_warmup_iters;
    const double withheld = mix.priority * (1.0 - ramp);
    mix.priority -= withheld;
    mix.uniform_time += withheld;
  }
  return mix;
}

StartSampler::StartSampler(const std::vector<MotionClip>& clips, std::vector<Segment> segments)
    : segments_(std::move(segments)) {
  if (clips.empty()) throw ContractViolation("sampler needs at least one clip");
  int first = 0;
  cumulative_starts_.push_back(0);
  for (std::size_t c = 0; c < clips.size(); ++c) {
    clip_frames_.push_back(clips[c].n_frames());
    cumulative_starts_.push_back(cumulative_starts_.back() + clips[c].n_frames() - 1);
    clip_first_segment_.push_back(first);
    while (first < static_cast<int>(segments_.size()) &&
           segments_[first].clip_id == static_cast<int>(c))
      ++first;
  }
}

int StartSampler::segment_of(int clip_id, int frame) const {
  const int first = clip_first_segment_[clip_id];
  return first + frame / segments_[first].size();
}

StartSample StartSampler::in_segment(int segment, std::mt19937_64& rng) const {
  const Segment& seg = segments_[segment];
  const int last_start = clip_frames_[seg.clip_id] - 2;
  const int hi = std::min(seg.end_frame - 1, last_start);
  const int lo = std::min(seg.start_frame, hi);
  StartSample out;
  out.clip_id = seg.clip_id;
  out.frame = std::uniform_int_distribution<int>(lo, hi)(rng);
  out.segment = segment;
  return out;
}

StartSample StartSampler::sample(const SamplerMix& mix, const Vec& balance_w, const Vec& prior,
                                 std::mt19937_64& rng) const {
  const auto n_seg = static_cast<Eigen::Index>(segments_.size());
  std::discrete_distribution<int> branch_dist({mix.uniform_time, mix.balanced, mix.priority});
  const int branch = branch_dist(rng);
  if (branch == 0) {
    const int total = cumulative_starts_.back();
    const int g = std::uniform_int_distribution<int>(0, total - 1)(rng);
    const auto it = std::upper_bound(cumulative_starts_.begin(), cumulative_starts_.end(), g);
    StartSample out;
    out.clip_id = static_cast<int>(it - cumulative_starts_.begin()) - 1;
    out.frame = g - cumulative_starts_[out.clip_id];
    out.segment = segment_of(out.clip_id, out.frame);
    out.branch = SampleBranch::kUniformTime;
    return out;
  }
  const Vec& weights = branch == 1 ? balance_w : prior;
  if (weights.size() != n_seg)
    throw ContractViolation("sampler weights must have one entry per segment");
  std::discrete_distribution<int> seg_dist(weights.data(), weights.data() + n_seg);
  StartSample out = in_segment(seg_dist(rng), rng);
  out.branch = branch == 1 ? SampleBranch::kBalanced : SampleBranch::kPriority;
  return out;
}

StartSample sample_start(const SamplerConfig& config, const Vec& balance_w, const Vec& prior,
                         const std::vector<MotionClip>& clips, std::mt19937_64& rng) {
  const StartSampler sampler(clips, segment_clips(clips));
  return sampler.sample(config.mix, balance_w, prior, rng);
}

SimState rsi_state(const MotionClip& clip, int frame, const RsiJitter& jitter,
                   const RobotModel& model, std::mt19937_64& rng) {
  if (frame < 0 || frame >= clip.n_frames()) throw ContractViolation("rsi_state: frame out of range");
  if (clip.n_joints() != model.n_joints())
    throw ContractViolation("rsi_state: clip joint dimension does not match the model");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto jitter_value = [&](double value, double std) {
    return std > 0 ? value + std * normal(rng) : value;
  };
  const MotionFrame& ref = clip.frames[frame];
  SimState s = SimState::zero(model);
  for (int j = 0; j < model.n_joints(); ++j) {
    s.q[j] = std::clamp(jitter_value(ref.q_ref[j], jitter.q), model.joint_limits[j].lo,
                        model.joint_limits[j].hi);
    s.qdot[j] = jitter_value(ref.qdot_ref[j], jitter.qdot);
  }
  if (model.floating()) {
    s.root_pos = {jitter_value(ref.root_pos_ref.x(), jitter.root_pos),
                  jitter_value(ref.root_pos_ref.y(), jitter.root_pos)};
    s.root_vel = {jitter_value(ref.root_vel_ref.x(), jitter.root_vel),
                  jitter_value(ref.root_vel_ref.y(), jitter.root_vel)};
    s.root_pitch = jitter_value(ref.root_pitch_ref, jitter.pitch);
    s.root_pitch_rate = jitter_value(ref.root_pitch_rate_ref, jitter.pitch_rate);
  }
  return s;
}

}  // namespace resmimic
