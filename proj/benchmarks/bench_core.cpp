#include <benchmark/benchmark.h>

#include <memory>
#include <random>

#include "resmimic/env.hpp"
#include "resmimic/nets.hpp"
#include "resmimic/sampling.hpp"
#include "resmimic/sim_core.hpp"

using namespace resmimic;

namespace {

void BM_SimStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const RobotModel model = RobotModel::uniform_chain(n, 0.4);
  const RandomizationParams nominal = RandomizationParams::identity(model);
  SimState s = SimState::zero(model);
  s.q.setConstant(0.3);
  const Vec tau = Vec::Zero(n);
  for (auto _ : state) {
    s = step(model, s, tau, nominal, 1e-3);
    benchmark::DoNotOptimize(s.q.data());
  }
}
BENCHMARK(BM_SimStep)->Arg(3)->Arg(6)->Arg(12);

void BM_MlpForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const MlpParams net = MlpParams::orthogonal({60, 128, 64, 32, 3}, std::sqrt(2.0), 0.01, rng);
  const Mat x = Mat::Random(60, state.range(0));
  const Mat g = Mat::Ones(3, state.range(0));
  for (auto _ : state) {
    ForwardCache cache;
    benchmark::DoNotOptimize(forward(net, x, &cache).data());
    BackwardResult b = backward(net, cache, g);
    benchmark::DoNotOptimize(b.input_grad.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(1)->Arg(256);

void BM_BalanceQp(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat p(state.range(0), 32);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < p.rows(); ++i) p.row(i) /= p.row(i).sum();
  const BalanceProblem prob = BalanceProblem::uniform_target(p);
  for (auto _ : state) benchmark::DoNotOptimize(balance_weights(prob).objective);
}
BENCHMARK(BM_BalanceQp)->Arg(16)->Arg(64);

void BM_EnvStep(benchmark::State& state) {
  const RobotModel model = RobotModel::uniform_chain(3, 0.4);
  MotionClip clip;
  for (int t = 0; t < 500; ++t) {
    MotionFrame f;
    f.q_ref = Vec::Constant(3, 0.3 * std::sin(0.05 * t));
    f.qdot_ref = Vec::Constant(3, 0.75 * std::cos(0.05 * t));
    clip.frames.push_back(f);
  }
  auto clips = std::make_shared<const std::vector<MotionClip>>(std::vector<MotionClip>{clip});
  EnvConfig cfg;
  cfg.gains = PdGains::uniform(3, 300.0, 10.0);
  cfg.residual.mode = ResidualMode::kAll;
  cfg.residual.bound_lo = Vec::Constant(3, -0.2);
  cfg.residual.bound_hi = Vec::Constant(3, 0.2);
  cfg.residual.default_pose = Vec::Zero(3);
  cfg.termination.enabled = false;
  TrackingEnv env(clips, model, cfg, 3);
  const Vec action = Vec::Zero(env.action_dim());
  for (auto _ : state) {
    if (!env.active()) env.reset({0, 0, 0, SampleBranch::kUniformTime});
    benchmark::DoNotOptimize(env.step(action).reward.total);
  }
}
BENCHMARK(BM_EnvStep);

}  // namespace

BENCHMARK_MAIN();
