#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "resmimic/errors.hpp"
#include "resmimic/sampling.hpp"

using namespace resmimic;

namespace {

Mat random_occupancy(int s, int b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat p(s, b);
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < b; ++j) p(i, j) = u(rng) < 0.6 ? 0.0 : u(rng);
    if (p.row(i).sum() == 0.0) p(i, i % b) = 1.0;
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

MotionClip flat_clip(int frames, int joints = 1) {
  MotionClip c;
  c.fps = 50;
  c.frames.resize(frames);
  for (auto& f : c.frames) {
    f.q_ref = Vec::Zero(joints);
    f.qdot_ref = Vec::Zero(joints);
  }
  return c;
}

double total_variation(const Vec& a, const Vec& b) { return 0.5 * (a - b).cwiseAbs().sum(); }

// Upper critical value of chi-square with k degrees of freedom
// (Wilson-Hilferty), z = 3.0902 for alpha = 0.001.
double chi2_critical(int k) {
  const double z = 3.0902;
  const double t = 2.0 / (9.0 * k);
  return k * std::pow(1.0 - t + z * std::sqrt(t), 3);
}

double chi2_stat(const Vec& counts, const Vec& p) {
  const double n = counts.sum();
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double e = n * p[i];
    s += (counts[i] - e) * (counts[i] - e) / e;
  }
  return s;
}

}  // namespace

TEST(SimplexProject, FeasiblePointUnchanged) {
  Vec v(4);
  v << 0.1, 0.2, 0.3, 0.4;
  EXPECT_LT((simplex_project(v) - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SimplexProject, Vertex) {
  EXPECT_EQ(simplex_project((Vec(2) << 2.0, 0.0).finished()), (Vec(2) << 1.0, 0.0).finished());
}

TEST(SimplexProject, MatchesGridNearestPoint) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    const int dim = 2 + trial % 3;
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = n(rng);
    const Vec w = simplex_project(v);
    const Vec g = oracle::simplex_grid_nearest(v, 1e-3);
    // The grid point is within half a step of the true projection.
    EXPECT_LT((w - g).cwiseAbs().maxCoeff(), 1e-3);
    // And nothing on the grid is closer than the projection.
    EXPECT_LE((w - v).squaredNorm(), (g - v).squaredNorm() + 1e-12);
  }
}

TEST(Balance, IdentityOccupancyGivesUniform) {
  const auto r = balance_weights(BalanceProblem::uniform_target(Mat::Identity(5, 5)));
  EXPECT_LT((r.w - Vec::Constant(5, 0.2)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(r.objective, 1e-12);
}

TEST(Balance, SingleSegmentForced) {
  Mat p(1, 3);
  p << 0.2, 0.5, 0.3;
  const auto r = balance_weights(BalanceProblem::uniform_target(p));
  EXPECT_EQ(r.w.size(), 1);
  EXPECT_NEAR(r.w[0], 1.0, 1e-12);
}

TEST(Balance, MatchesBruteForceGrid) {
  Mat p(3, 2);
  p << 1, 0, 0, 1, 0.5, 0.5;
  const BalanceProblem prob = BalanceProblem::uniform_target(p);
  const double grid = oracle::simplex_grid_min(3, 1e-3, [&](const Vec& w) { return prob.objective(w); });
  const auto r = balance_weights(prob);
  EXPECT_NEAR(r.objective, grid, 1e-6);
}

TEST(Balance, SmallRandomInstancesMatchGrid) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int s = 2 + trial % 2;
    const BalanceProblem prob = BalanceProblem::uniform_target(random_occupancy(s, 3, rng));
    const double grid = oracle::simplex_grid_min(s, 1e-3, [&](const Vec& w) { return prob.objective(w); });
    const auto r = balance_weights(prob);
    EXPECT_LE(r.objective, grid + 1e-6);
  }
}

TEST(Balance, KktAndSimplexOnRandomInstances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int s = 2 + static_cast<int>(rng() % 63);
    const int b = 2 + static_cast<int>(rng() % 31);
    const BalanceProblem prob = BalanceProblem::uniform_target(random_occupancy(s, b, rng));
    const auto r = balance_weights(prob);
    EXPECT_LT(kkt_residual(prob, r.w), 1e-6) << "S=" << s << " B=" << b;
    EXPECT_GE(r.w.minCoeff(), 0.0);
    EXPECT_NEAR(r.w.sum(), 1.0, 1e-9);
    EXPECT_LE(r.objective, prob.objective(Vec::Constant(s, 1.0 / s)) + 1e-15);
  }
}

TEST(Balance, FlattensBinnedDensity) {
  std::mt19937_64 rng(4);
  const Mat p = random_occupancy(40, 16, rng);
  const BalanceProblem prob = BalanceProblem::uniform_target(p);
  const auto r = balance_weights(prob);
  auto variance = [](const Vec& d) { return (d.array() - d.mean()).square().mean(); };
  const Vec uniform_density = p.transpose() * Vec::Constant(40, 1.0 / 40);
  const Vec balanced_density = p.transpose() * r.w;
  EXPECT_LT(variance(balanced_density), variance(uniform_density));
}

TEST(Balance, RejectsBadProblem) {
  Mat p(2, 2);
  p << 0.5, 0.4, 0.5, 0.5;
  EXPECT_THROW(balance_weights(BalanceProblem::uniform_target(p)), ContractViolation);
}

TEST(Priority, FullReplacement) {
  PriorityState s = PriorityState::make(3, 1.0);
  s = ema_update(s, 1, true);
  EXPECT_EQ(s.r[1], 1.0);
  EXPECT_EQ(s.r[0], 0.0);
  EXPECT_EQ(s.r[2], 0.0);
}

TEST(Priority, OneStep) {
  PriorityState s = PriorityState::make(2, 0.1);
  s = ema_update(s, 0, true);
  EXPECT_DOUBLE_EQ(s.r[0], 0.1);
}

TEST(Priority, TenFailuresGeometricSeries) {
  PriorityState s = PriorityState::make(1, 0.1);
  for (int k = 0; k < 10; ++k) s = ema_update(s, 0, true);
  EXPECT_NEAR(s.r[0], 1.0 - std::pow(0.9, 10), 1e-12);
  EXPECT_NEAR(s.r[0], 0.6513215599, 1e-10);
}

TEST(Priority, StaysInUnitIntervalUnderRandomStreams) {
  std::mt19937_64 rng(5);
  for (double alpha : {0.01, 0.1, 0.5, 1.0}) {
    PriorityState s = PriorityState::make(8, alpha);
    for (int i = 0; i < 5000; ++i) {
      s = ema_update(s, static_cast<int>(rng() % 8), rng() % 2 == 0);
      EXPECT_GE(s.r.minCoeff(), 0.0);
      EXPECT_LE(s.r.maxCoeff(), 1.0);
    }
  }
}

TEST(Priority, OutOfRangeSegmentRejected) {
  EXPECT_THROW(ema_update(PriorityState::make(2), 2, true), ContractViolation);
}

TEST(TemperedPrior, BetaZeroIsUniform) {
  PriorityState s = PriorityState::make(4, 0.1, 0.0);
  s.r << 0.9, 0.1, 0.5, 0.0;
  EXPECT_LT((tempered_prior(s) - Vec::Constant(4, 0.25)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TemperedPrior, EqualScoresGiveUniform) {
  PriorityState s = PriorityState::make(5);
  s.r.setConstant(0.37);
  EXPECT_LT((tempered_prior(s) - Vec::Constant(5, 0.2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TemperedPrior, HandComputedTwoSegments) {
  PriorityState s = PriorityState::make(2, 0.1, 2.0, 0.01);
  s.r << 0.9, 0.1;
  const Vec p = tempered_prior(s);
  EXPECT_NEAR(p[0], 0.98560, 1e-5);
  EXPECT_NEAR(p[1], 0.01440, 1e-5);
  EXPECT_NEAR(p[0], 0.91 * 0.91 / 0.8402, 1e-12);
}

TEST(TemperedPrior, StrictlyIncreasingInOwnScore) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    PriorityState s = PriorityState::make(6, 0.1, 0.5 + 3 * u(rng));
    for (int i = 0; i < 6; ++i) s.r[i] = 0.98 * u(rng);
    const Vec p = tempered_prior(s);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
    EXPECT_GT(p.minCoeff(), 0.0);
    const int i = trial % 6;
    PriorityState bumped = s;
    bumped.r[i] += 1e-6;
    EXPECT_GT((tempered_prior(bumped)[i] - p[i]) / 1e-6, 0.0);
  }
}

TEST(Sampler, UniformBranchUniformOverFrames) {
  const std::vector<MotionClip> clips{flat_clip(120), flat_clip(81)};
  const StartSampler sampler(clips, segment_clips(clips));
  const int valid = 119 + 80;
  std::mt19937_64 rng(7);
  Vec counts = Vec::Zero(valid);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto s = sampler.sample({1, 0, 0}, Vec(), Vec(), rng);
    ASSERT_LT(s.frame, clips[s.clip_id].n_frames() - 1);
    counts[(s.clip_id == 0 ? 0 : 119) + s.frame] += 1;
  }
  const Vec target = Vec::Constant(valid, 1.0 / valid);
  EXPECT_LT(total_variation(counts / draws, target), 0.05);
  EXPECT_LT(chi2_stat(counts, target), chi2_critical(valid - 1));
}

TEST(Sampler, BalancedOneHotAlwaysInSegment) {
  const std::vector<MotionClip> clips{flat_clip(300)};
  const StartSampler sampler(clips, segment_clips(clips));
  Vec w = Vec::Zero(6);
  w[3] = 1.0;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10000; ++i) {
    const auto s = sampler.sample({0, 1, 0}, w, Vec(), rng);
    EXPECT_EQ(s.segment, 3);
    EXPECT_GE(s.frame, 150);
    EXPECT_LT(s.frame, 200);
  }
}

TEST(Sampler, PriorityBranchMatchesPrior) {
  const std::vector<MotionClip> clips{flat_clip(100)};
  const StartSampler sampler(clips, segment_clips(clips));
  PriorityState ps = PriorityState::make(2, 0.1, 2.0, 0.01);
  ps.r << 0.9, 0.1;
  const Vec p = tempered_prior(ps);
  std::mt19937_64 rng(9);
  Vec counts = Vec::Zero(2);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[sampler.sample({0, 0, 1}, Vec(), p, rng).segment] += 1;
  EXPECT_LT(total_variation(counts / draws, p), 0.02);
  EXPECT_LT(chi2_stat(counts, p), chi2_critical(1));
}

TEST(Sampler, MixtureSegmentFrequenciesMatchTarget) {
  const std::vector<MotionClip> clips{flat_clip(251), flat_clip(150)};
  const auto segs = segment_clips(clips);
  const StartSampler sampler(clips, segs);
  const int n = static_cast<int>(segs.size());
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec w(n), prior(n);
  for (int i = 0; i < n; ++i) {
    w[i] = u(rng);
    prior[i] = u(rng);
  }
  w /= w.sum();
  prior /= prior.sum();
  const SamplerMix mix{0.3, 0.35, 0.35};
  // Uniform-time mass per segment: valid start frames in it / all valid.
  Vec uniform(n);
  const double valid = 250 + 149;
  for (int i = 0; i < n; ++i) {
    const int last_start = clips[segs[i].clip_id].n_frames() - 2;
    uniform[i] = std::max(0, std::min(segs[i].end_frame - 1, last_start) - segs[i].start_frame + 1) / valid;
  }
  const Vec target = mix.uniform_time * uniform + mix.balanced * w + mix.priority * prior;
  Vec counts = Vec::Zero(n);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[sampler.sample(mix, w, prior, rng).segment] += 1;
  EXPECT_LT(total_variation(counts / draws, target), 0.02);
  EXPECT_LT(chi2_stat(counts, target), chi2_critical(n - 1));
}

TEST(Sampler, WarmupRampsPriorityIn) {
  SamplerConfig c;
  c.priority_warmup_iters = 10;
  const SamplerMix m0 = effective_mix(c, 0);
  EXPECT_DOUBLE_EQ(m0.priority, 0.0);
  EXPECT_DOUBLE_EQ(m0.uniform_time, 0.65);
  EXPECT_DOUBLE_EQ(effective_mix(c, 5).priority, 0.175);
  EXPECT_DOUBLE_EQ(effective_mix(c, 10).priority, 0.35);
}

TEST(Sampler, FreeFunctionAgreesWithClass) {
  const std::vector<MotionClip> clips{flat_clip(120)};
  SamplerConfig c;
  c.mix = {0.2, 0.4, 0.4};
  const Vec w = Vec::Constant(3, 1.0 / 3), p = Vec::Constant(3, 1.0 / 3);
  std::mt19937_64 a(11), b(11);
  const StartSampler sampler(clips, segment_clips(clips));
  for (int i = 0; i < 100; ++i) {
    const auto x = sample_start(c, w, p, clips, a);
    const auto y = sampler.sample(c.mix, w, p, b);
    EXPECT_EQ(x.frame, y.frame);
    EXPECT_EQ(x.segment, y.segment);
  }
}

TEST(Rsi, ZeroJitterCopiesReference) {
  MotionClip c = flat_clip(10, 2);
  c.frames[4].q_ref << 0.3, -0.2;
  c.frames[4].qdot_ref << 1.0, 2.0;
  std::mt19937_64 rng(12);
  const SimState s = rsi_state(c, 4, RsiJitter{}, RobotModel::uniform_chain(2), rng);
  EXPECT_EQ(s.q, c.frames[4].q_ref);
  EXPECT_EQ(s.qdot, c.frames[4].qdot_ref);
}

TEST(Rsi, FloatingRootCopied) {
  MotionClip c = flat_clip(10, 1);
  c.frames[2].root_pos_ref = Vec2(0.5, 1.0);
  c.frames[2].root_vel_ref = Vec2(0.1, -0.2);
  c.frames[2].root_pitch_ref = 0.05;
  RobotModel m = RobotModel::uniform_chain(1);
  m.base_mode = BaseMode::kFloating;
  std::mt19937_64 rng(13);
  const SimState s = rsi_state(c, 2, RsiJitter{}, m, rng);
  EXPECT_EQ(s.root_pos, c.frames[2].root_pos_ref);
  EXPECT_EQ(s.root_vel, c.frames[2].root_vel_ref);
  EXPECT_EQ(s.root_pitch, 0.05);
}

TEST(Rsi, JitterClampedAtLimit) {
  MotionClip c = flat_clip(5, 1);
  c.frames[0].q_ref[0] = 0.99;
  RobotModel m = RobotModel::uniform_chain(1);
  m.joint_limits[0] = {-1.0, 1.0};
  RsiJitter j;
  j.q = 0.5;
  std::mt19937_64 rng(14);
  for (int i = 0; i < 1000; ++i) {
    const SimState s = rsi_state(c, 0, j, m, rng);
    EXPECT_LE(s.q[0], 1.0);
    EXPECT_GE(s.q[0], -1.0);
  }
}

TEST(Rsi, JitterStdMatches) {
  MotionClip c = flat_clip(5, 2);
  RsiJitter j;
  j.q = 0.05;
  j.qdot = 0.05;
  std::mt19937_64 rng(15);
  const RobotModel m = RobotModel::uniform_chain(2);
  const int draws = 10000;
  Vec sum = Vec::Zero(4), sq = Vec::Zero(4);
  for (int i = 0; i < draws; ++i) {
    const SimState s = rsi_state(c, 1, j, m, rng);
    Vec x(4);
    x << s.q, s.qdot;
    sum += x;
    sq += x.cwiseProduct(x);
  }
  for (int k = 0; k < 4; ++k) {
    const double mean = sum[k] / draws;
    const double sd = std::sqrt(sq[k] / draws - mean * mean);
    EXPECT_NEAR(sd, 0.05, 0.005);
  }
}
