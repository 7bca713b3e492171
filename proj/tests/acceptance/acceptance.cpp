// Acceptance gate. Each criterion prints exactly one PASS/FAIL line; the
// tolerances below are fixed and must not be relaxed to make a run pass.
//
//   resmimic_acceptance --criterion N     (N = 1..11)
//   resmimic_acceptance                   (all of them)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "resmimic/config.hpp"
#include "resmimic/env.hpp"
#include "resmimic/experiment.hpp"
#include "resmimic/metrics.hpp"
#include "resmimic/motion_library.hpp"
#include "resmimic/nets.hpp"
#include "resmimic/ppo.hpp"
#include "resmimic/rewards.hpp"
#include "resmimic/sampling.hpp"
#include "resmimic/sim_core.hpp"

using namespace resmimic;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradStep = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradRelFloor = 1e-6;  // denominator floor for near-zero gradients
constexpr double kKinkMargin = 1e-3;    // ReLU inputs closer than this to 0 are resampled
constexpr int kGradConfigs = 120;
constexpr double kDynamicsTol = 1e-8;
constexpr int kDynamicsStates = 1000;
constexpr double kEnergyDrift = 0.02;
constexpr double kQpGridTol = 1e-6;
constexpr double kKktTol = 1e-6;
constexpr double kSimplexTol = 1e-9;
constexpr double kPriorTol = 1e-5;
constexpr double kTvTol = 0.05;
constexpr int kSamplerDraws = 100000;
constexpr double kGaeTol = 1e-10;
constexpr double kKernelTol = 1e-9;
constexpr double kResidualReduction = 0.10;
constexpr int kSelectiveLeAllSeeds = 3;
constexpr int kBalancedFasterSeeds = 4;
constexpr double kThresholdFraction = 0.8;
constexpr int kFuzzSteps = 10000;
constexpr double kMetricTol = 1e-9;
const std::vector<std::uint64_t> kAblationSeeds{1, 2, 3, 4, 5};

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

fs::path source_dir() { return RESMIMIC_SOURCE_DIR; }

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kGradRelFloor});
}

// ---------------------------------------------------------------- C1

bool near_kink(const MlpParams& p, const Mat& x) {
  ForwardCache cache;
  forward(p, x, &cache);
  for (std::size_t l = 0; l + 1 < cache.pre.size(); ++l)
    if (cache.pre[l].cwiseAbs().minCoeff() < kKinkMargin) return true;
  return false;
}

Outcome gradients() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> width(1, 12), depth(1, 3);
  double worst = 0.0;
  int configs = 0, params_checked = 0;
  for (int trial = 0; trial < kGradConfigs; ++trial) {
    // Networks come from the same factory as training, with biases and
    // log_std perturbed so nothing sits at its initial value.
    std::vector<int> hidden(static_cast<std::size_t>(depth(rng)));
    for (int& h : hidden) h = 2 + width(rng);
    const int obs = 1 + width(rng), cobs = 1 + width(rng), act = 1 + trial % 4, heads = 1 + trial % 5;
    ActorCritic ac = ActorCritic::make(obs, cobs, act, heads, hidden, -0.5, rng);
    for (MlpParams* net : {&ac.actor, &ac.critic}) {
      for (auto& b : net->biases)
        for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = 0.2 * u(rng);
      net->weights.back() *= 50.0;  // lift the small output gain out of the noise floor
    }
    for (Eigen::Index i = 0; i < ac.head.log_std.size(); ++i) ac.head.log_std[i] = 0.8 * u(rng);

    for (MlpParams* net : {&ac.actor, &ac.critic}) {
      Mat x(net->input_size(), 3);
      do {
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 5.0 * u(rng);
      } while (near_kink(*net, x));
      Mat weight(net->output_size(), 3);
      for (Eigen::Index i = 0; i < weight.size(); ++i) weight.data()[i] = u(rng);
      auto loss = [&](const Mat& in) { return forward(*net, in).cwiseProduct(weight).sum(); };
      ForwardCache cache;
      forward(*net, x, &cache);
      const BackwardResult g = backward(*net, cache, weight);
      const Vec analytic = g.grad.flatten();
      Vec flat = net->flatten();
      for (Eigen::Index i = 0; i < flat.size(); ++i) {
        const double keep = flat[i];
        flat[i] = keep + kGradStep;
        net->unflatten(flat);
        const double up = loss(x);
        flat[i] = keep - kGradStep;
        net->unflatten(flat);
        const double down = loss(x);
        flat[i] = keep;
        worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * kGradStep)));
        ++params_checked;
      }
      net->unflatten(flat);
      Mat xp = x;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        xp.data()[i] = x.data()[i] + kGradStep;
        const double up = loss(xp);
        xp.data()[i] = x.data()[i] - kGradStep;
        const double down = loss(xp);
        xp.data()[i] = x.data()[i];
        worst = std::max(worst, rel_error(g.input_grad.data()[i], (up - down) / (2 * kGradStep)));
      }
    }

    // Gaussian head: log-prob gradients with respect to mean and log_std.
    Vec mean(act), action(act);
    for (int i = 0; i < act; ++i) {
      mean[i] = 2.0 * u(rng);
      action[i] = 2.0 * u(rng);
    }
    const Vec gm = gaussian_log_prob_grad_mean(ac.head, mean, action);
    const Vec gs = gaussian_log_prob_grad_log_std(ac.head, mean, action);
    for (int i = 0; i < act; ++i) {
      Vec mp = mean, mm = mean;
      mp[i] += kGradStep;
      mm[i] -= kGradStep;
      worst = std::max(worst, rel_error(gm[i], (gaussian_log_prob(ac.head, mp, action) -
                                                gaussian_log_prob(ac.head, mm, action)) /
                                                   (2 * kGradStep)));
      GaussianHead hp = ac.head, hm = ac.head;
      hp.log_std[i] += kGradStep;
      hm.log_std[i] -= kGradStep;
      worst = std::max(worst, rel_error(gs[i], (gaussian_log_prob(hp, mean, action) -
                                                gaussian_log_prob(hm, mean, action)) /
                                                   (2 * kGradStep)));
    }
    ++configs;
  }
  return {worst < kGradRelTol, "max rel err " + fmt("%.3e", worst) + " < " + fmt("%.0e", kGradRelTol) +
                                   " over " + std::to_string(configs) + " configs, " +
                                   std::to_string(params_checked) + " parameters"};
}

// ---------------------------------------------------------------- C2

RobotModel random_chain(int n, bool floating, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.3, 1.5);
  RobotModel m = RobotModel::uniform_chain(n);
  for (int i = 0; i < n; ++i) {
    m.link_length[i] = u(rng);
    m.link_mass[i] = u(rng);
    m.link_inertia[i] = 0.2 * u(rng);
    m.joint_damping[i] = 0.1 * u(rng);
  }
  if (floating) {
    m.base_mode = BaseMode::kFloating;
    m.base_mass = 2.0 * u(rng);
    m.base_inertia = 0.1 * u(rng);
  }
  return m;
}

Outcome dynamics() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  double worst = 0.0;
  int states = 0;
  for (int k = 0; k < kDynamicsStates; ++k) {
    const int n = 1 + k % 5;
    const bool floating = (k / 5) % 2 == 1;
    RobotModel m = random_chain(n, floating, rng);
    SimState s = SimState::zero(m);
    for (int i = 0; i < n; ++i) {
      s.q[i] = u(rng);
      s.qdot[i] = u(rng);
    }
    if (floating) {
      s.root_pos = Vec2(u(rng), 3.0 + u(rng));
      s.root_vel = Vec2(u(rng), u(rng));
      s.root_pitch = u(rng);
      s.root_pitch_rate = u(rng);
      if (k % 4 == 1) {
        // Press the last tip slightly into the ground to exercise contact.
        m.foot_links = {n - 1};
        const auto ends = oracle::endpoints(m, s);
        s.root_pos.y() -= ends.back().y() + 0.005 + 0.01 * std::abs(u(rng));
      }
    }
    Vec tau(n);
    for (int i = 0; i < n; ++i) tau[i] = 2.5 * u(rng);
    const double mu = 0.75 + 0.1 * u(rng);
    const Vec acc = forward_dynamics(m, s, tau, mu);
    const auto ref = oracle::dense_dynamics(m, s, tau, mu);
    worst = std::max(worst, (acc - ref.acceleration).cwiseAbs().maxCoeff());
    ++states;
  }

  // Single pendulum released from horizontal, no torque or damping, 10 s.
  const RobotModel pend = RobotModel::uniform_chain(1);
  SimState s = SimState::zero(pend);
  s.q[0] = std::numbers::pi / 2;
  const double lc = 0.5 * pend.link_length[0], mass = pend.link_mass[0];
  const double i_pivot = pend.link_inertia[0] + mass * lc * lc;
  auto energy = [&](const SimState& st) {
    return 0.5 * i_pivot * st.qdot[0] * st.qdot[0] + mass * pend.gravity * lc * (1.0 - std::cos(st.q[0]));
  };
  const double e0 = energy(s);
  double drift = 0.0;
  const RandomizationParams nominal = RandomizationParams::identity(pend);
  for (int i = 0; i < 10000; ++i) {
    s = step(pend, s, Vec::Zero(1), nominal, 1e-3);
    drift = std::max(drift, std::abs(energy(s) - e0) / e0);
  }
  const bool ok = worst < kDynamicsTol && drift <= kEnergyDrift && pend.joint_damping[0] == 0.0;
  return {ok, "max |acc - oracle| " + fmt("%.3e", worst) + " < " + fmt("%.0e", kDynamicsTol) + " over " +
                  std::to_string(states) + " states (1-5 links); energy drift " + fmt("%.4f", 100 * drift) +
                  "% <= " + fmt("%.0f", 100 * kEnergyDrift) + "%"};
}

// ---------------------------------------------------------------- C3

Mat random_occupancy(int s, int b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat p(s, b);
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < b; ++j) p(i, j) = std::pow(u(rng), 3.0);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Outcome balancing() {
  std::mt19937_64 rng(303);
  double grid_gap = -1e300, kkt = 0.0, simplex = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const int s = 1 + trial % 3;
    const int b = 2 + trial % 4;
    const BalanceProblem prob = BalanceProblem::uniform_target(random_occupancy(s, b, rng));
    const double grid = oracle::simplex_grid_min(s, 1e-3, [&](const Vec& w) { return prob.objective(w); });
    const BalanceWeights r = balance_weights(prob);
    grid_gap = std::max(grid_gap, r.objective - grid);
  }
  int instances = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int s = 2 + static_cast<int>(rng() % 63);
    const int b = 2 + static_cast<int>(rng() % 31);
    const BalanceProblem prob = BalanceProblem::uniform_target(random_occupancy(s, b, rng));
    const BalanceWeights r = balance_weights(prob);
    kkt = std::max(kkt, kkt_residual(prob, r.w));
    simplex = std::max({simplex, std::abs(r.w.sum() - 1.0), std::max(0.0, -r.w.minCoeff())});
    ++instances;
  }
  const BalanceWeights big = balance_weights(BalanceProblem::uniform_target(random_occupancy(64, 32, rng)));
  simplex = std::max({simplex, std::abs(big.w.sum() - 1.0), std::max(0.0, -big.w.minCoeff())});
  const bool ok = grid_gap <= kQpGridTol && kkt < kKktTol && simplex <= kSimplexTol;
  return {ok, "objective - grid optimum " + fmt("%.2e", grid_gap) + " <= " + fmt("%.0e", kQpGridTol) +
                  " (S<=3); max KKT " + fmt("%.2e", kkt) + " < " + fmt("%.0e", kKktTol) + " over " +
                  std::to_string(instances) + " instances up to S=64,B=32; simplex error " +
                  fmt("%.1e", simplex)};
}

// ---------------------------------------------------------------- C4

MotionClip flat_clip(int frames) {
  MotionClip c;
  c.frames.resize(static_cast<std::size_t>(frames));
  for (auto& f : c.frames) {
    f.q_ref = Vec::Zero(1);
    f.qdot_ref = Vec::Zero(1);
  }
  return c;
}

Outcome sampling_distributions() {
  // Hand arithmetic: r = (0.9, 0.1), eps 0.01, beta 2 -> 0.8281 / 0.8402 and
  // 0.0121 / 0.8402; r = (0.5, 0.2, 0), beta 1 -> (0.51, 0.21, 0.01) / 0.73.
  PriorityState a = PriorityState::make(2, 0.1, 2.0, 0.01);
  a.r << 0.9, 0.1;
  PriorityState b = PriorityState::make(3, 0.1, 1.0, 0.01);
  b.r << 0.5, 0.2, 0.0;
  const Vec pa = tempered_prior(a), pb = tempered_prior(b);
  const double prior_err = std::max({std::abs(pa[0] - 0.98560), std::abs(pa[1] - 0.01440),
                                     std::abs(pb[0] - 0.698630), std::abs(pb[1] - 0.287671),
                                     std::abs(pb[2] - 0.013699)});

  const std::vector<MotionClip> clips{flat_clip(251), flat_clip(150)};
  const auto segs = segment_clips(clips);
  const int n = static_cast<int>(segs.size());
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec w(n), prior(n), uniform(n);
  for (int i = 0; i < n; ++i) {
    w[i] = u(rng);
    prior[i] = u(rng);
  }
  w /= w.sum();
  prior /= prior.sum();
  double valid = 0.0;
  for (const auto& c : clips) valid += c.n_frames() - 1;
  for (int i = 0; i < n; ++i) {
    const int last_start = clips[static_cast<std::size_t>(segs[i].clip_id)].n_frames() - 2;
    uniform[i] = std::max(0, std::min(segs[i].end_frame - 1, last_start) - segs[i].start_frame + 1) / valid;
  }
  struct Branch {
    const char* name;
    SamplerMix mix;
  };
  const std::vector<Branch> branches{{"uniform", {1, 0, 0}}, {"balanced", {0, 1, 0}},
                                     {"priority", {0, 0, 1}}, {"mixture", {0.3, 0.35, 0.35}}};
  double worst_tv = 0.0;
  std::string per_branch;
  for (const auto& br : branches) {
    SamplerConfig cfg;
    cfg.mix = br.mix;
    const Vec target = br.mix.uniform_time * uniform + br.mix.balanced * w + br.mix.priority * prior;
    Vec counts = Vec::Zero(n);
    for (int d = 0; d < kSamplerDraws; ++d) counts[sample_start(cfg, w, prior, clips, rng).segment] += 1;
    const double tv = 0.5 * (counts / kSamplerDraws - target).cwiseAbs().sum();
    worst_tv = std::max(worst_tv, tv);
    per_branch += std::string(per_branch.empty() ? "" : ", ") + br.name + " " + fmt("%.4f", tv);
  }
  const bool ok = prior_err <= kPriorTol && worst_tv < kTvTol;
  return {ok, "prior err " + fmt("%.1e", prior_err) + " <= " + fmt("%.0e", kPriorTol) + "; TV at 1e5 draws (" +
                  per_branch + ") < " + fmt("%.2f", kTvTol)};
}

// ---------------------------------------------------------------- C5

Outcome gae() {
  std::mt19937_64 rng(505);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int buffers = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int heads = 1 + trial % 5;
    const double p_done = 0.3 * u(rng), p_trunc = 0.3 * u(rng);
    RolloutBuffer b;
    for (int t = 0; t < 50; ++t) {
      Vec r(heads), v(heads), boot(heads);
      for (int h = 0; h < heads; ++h) {
        r[h] = g(rng);
        v[h] = g(rng);
        boot[h] = g(rng);
      }
      const double x = u(rng);
      b.rewards.push_back(r);
      b.values.push_back(v);
      b.done.push_back(x < p_done);
      b.truncated.push_back(x >= p_done && x < p_done + p_trunc);
      b.bootstrap.push_back(b.truncated.back() ? boot : Vec::Zero(heads));
      b.actor_obs.push_back(Vec::Zero(1));
      b.critic_obs.push_back(Vec::Zero(1));
      b.actions.push_back(Vec::Zero(1));
      b.action_mean.push_back(Vec::Zero(1));
      b.log_prob.push_back(0.0);
    }
    Vec tail(heads);
    for (int h = 0; h < heads; ++h) tail[h] = g(rng);
    PpoConfig cfg;
    cfg.gamma = 0.9 + 0.1 * u(rng);
    cfg.gae_lambda = 0.5 + 0.5 * u(rng);
    const GaeResult res = compute_gae(b, tail, cfg);
    const Mat expected = oracle::gae_bruteforce(b, tail, cfg.gamma, cfg.gae_lambda);
    worst = std::max(worst, (res.advantages - expected).cwiseAbs().maxCoeff());
    ++buffers;
  }
  return {worst <= kGaeTol, "max |recursive - definitional| " + fmt("%.2e", worst) + " <= " +
                                fmt("%.0e", kGaeTol) + " over " + std::to_string(buffers) +
                                " random 50-step buffers"};
}

// ---------------------------------------------------------------- C6

Outcome reward_kernels() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double err = 0.0;
  bool bounded = true;
  const RobotModel model = RobotModel::uniform_chain(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const double w = 0.05 + 2.0 * u(rng), sigma = 0.05 + u(rng);
    RewardConfig cfg;
    cfg.tracking = {{"jp", ErrorKind::kJointPos, w, sigma}, {"jv", ErrorKind::kJointVel, w, sigma}};
    SimState s = SimState::zero(model);
    s.q = Vec::Constant(3, 0.2 * trial / 1000.0);
    MotionFrame ref;
    ref.q_ref = s.q;
    ref.qdot_ref = s.qdot;
    std::vector<Vec2> links(3, Vec2::Zero());
    TrackingSample ts{&s, &links, &ref, &links, false};
    Vec r = tracking_reward(ts, cfg);
    err = std::max({err, std::abs(r[0] - w), std::abs(r[1] - w)});
    // Mean squared error equal to sigma^2: offset every joint by sigma.
    s.q.array() += sigma;
    s.qdot.array() -= sigma;
    r = tracking_reward(ts, cfg);
    err = std::max({err, std::abs(r[0] - w * std::exp(-1.0)), std::abs(r[1] - w * std::exp(-1.0))});
    // Arbitrary errors stay inside (0, w].
    for (int j = 0; j < 3; ++j) s.q[j] += 3.0 * sigma * u(rng);
    r = tracking_reward(ts, cfg);
    bounded = bounded && r[0] > 0.0 && r[0] <= w;
  }
  // Composition: tracking sum minus s_pen times the regularization sum.
  const RewardVector a = total_reward((Vec(2) << 1.5, 0.5).finished(), (Vec(2) << 0.25, 0.25).finished(), 0.4);
  const RewardVector b = total_reward((Vec(3) << 0.5, 0.25, 0.125).finished(), Vec::Zero(5), 0.7);
  const RewardVector c = total_reward((Vec(1) << 1.0).finished(), (Vec(2) << 2.0, 0.5).finished(), 1.0);
  const bool composition = std::abs(a.total - 1.8) <= kKernelTol && std::abs(b.total - 0.875) <= kKernelTol &&
                           std::abs(c.total + 1.5) <= kKernelTol;
  const bool ok = err <= kKernelTol && bounded && composition;
  return {ok, "kernel err " + fmt("%.2e", err) + " <= " + fmt("%.0e", kKernelTol) + "; bounds " +
                  (bounded ? "held" : "violated") + "; composition hand cases " +
                  (composition ? "exact" : "mismatch")};
}

// ---------------------------------------------------------------- C7, C8

Outcome residual_trend() {
  const ExperimentConfig cfg = load_config(source_dir() / "configs" / "acceptance_residual.yaml");
  RunOptions opts;
  opts.out_dir = fs::current_path() / "acceptance_c7";
  fs::create_directories(opts.out_dir);
  const AblationReport report = run_ablation(cfg, Study::kResidual, kAblationSeeds, opts);
  auto final_mpjpe = [&](const std::string& variant, std::uint64_t seed) {
    for (const auto& r : report.runs)
      if (r.variant == variant && r.seed == seed) return r.result.final_eval.metrics.mpjpe;
    throw std::runtime_error("missing run " + variant);
  };
  double none = 0.0, sel = 0.0, all = 0.0;
  int sel_le_all = 0;
  std::string per_seed;
  for (std::uint64_t seed : kAblationSeeds) {
    const double n = final_mpjpe("NONE", seed), a = final_mpjpe("ALL", seed), s = final_mpjpe("SELECTIVE", seed);
    none += n;
    all += a;
    sel += s;
    if (s <= a) ++sel_le_all;
    std::cout << "  seed " << seed << ": E_mpjpe NONE " << fmt("%.2f", n) << " ALL " << fmt("%.2f", a)
              << " SELECTIVE " << fmt("%.2f", s) << "\n";
  }
  const double k = static_cast<double>(kAblationSeeds.size());
  none /= k;
  all /= k;
  sel /= k;
  const double reduction = (none - sel) / none;
  const bool ok = reduction >= kResidualReduction && sel_le_all >= kSelectiveLeAllSeeds;
  return {ok, "mean E_mpjpe NONE " + fmt("%.2f", none) + " ALL " + fmt("%.2f", all) + " SELECTIVE " +
                  fmt("%.2f", sel) + "; SELECTIVE vs NONE reduction " + fmt("%.1f", 100 * reduction) +
                  "% >= " + fmt("%.0f", 100 * kResidualReduction) + "%; SELECTIVE <= ALL in " +
                  std::to_string(sel_le_all) + "/5 >= " + std::to_string(kSelectiveLeAllSeeds)};
}

Outcome sampling_trend() {
  const ExperimentConfig cfg = load_config(source_dir() / "configs" / "acceptance_sampling.yaml");
  RunOptions opts;
  opts.out_dir = fs::current_path() / "acceptance_c8";
  fs::create_directories(opts.out_dir);
  const AblationReport report = run_ablation(cfg, Study::kSampling, kAblationSeeds, opts);
  // Threshold and crossings recomputed here from the raw curves.
  double best = -1e300;
  for (const auto& r : report.runs) best = std::max(best, curve_plateau(r.result.curve));
  const double threshold = kThresholdFraction * best;
  auto crossing = [&](const std::string& variant, std::uint64_t seed) -> std::optional<int> {
    for (const auto& r : report.runs)
      if (r.variant == variant && r.seed == seed)
        for (const auto& p : r.result.curve)
          if (p.eval_reward >= threshold) return p.iteration;
    return std::nullopt;
  };
  int faster = 0;
  for (std::uint64_t seed : kAblationSeeds) {
    const auto f = crossing("Failure", seed), fb = crossing("Failure+Balanced", seed);
    const bool win = fb.has_value() && (!f.has_value() || *fb < *f);
    if (win) ++faster;
    std::cout << "  seed " << seed << ": iterations to threshold Failure "
              << (f ? std::to_string(*f) : std::string("never")) << " Failure+Balanced "
              << (fb ? std::to_string(*fb) : std::string("never")) << "\n";
  }
  const bool ok = faster >= kBalancedFasterSeeds;
  return {ok, "threshold " + fmt("%.4f", threshold) + " (80% of best plateau " + fmt("%.4f", best) +
                  "); Failure+Balanced faster in " + std::to_string(faster) + "/5 >= " +
                  std::to_string(kBalancedFasterSeeds)};
}

// ---------------------------------------------------------------- C9

Outcome pass_through() {
  RobotModel model = RobotModel::uniform_chain(4);
  SynthSpec spec;
  spec.duration_s = 20.0;
  spec.n_joints = 4;
  spec.center = {0.0, 0.3, -0.3, 0.0};
  spec.amplitude = {{0.2, 0.8}, {0.2, 0.8}, {0.1, 0.5}, {0.1, 0.3}};
  spec.frequency = {{0.3, 1.5}, {0.3, 1.5}, {0.2, 1.0}, {0.2, 0.6}};
  spec.tail_amplitude = {2.5, 2.5, 2.0, 1.0};
  for (int j = 0; j < 4; ++j) spec.limits.push_back(model.joint_limits[static_cast<std::size_t>(j)]);
  spec.n_phrases = 10;
  spec.tail_fraction = 0.3;
  auto clips = std::make_shared<const std::vector<MotionClip>>(
      std::vector<MotionClip>{synth_reference(spec, 11), synth_reference(spec, 12)});

  EnvConfig cfg;
  cfg.gains = PdGains::uniform(4, 150.0, 5.0);
  cfg.residual.mode = ResidualMode::kSelective;
  cfg.residual.mask = {true, false, true, false};
  cfg.residual.bound_lo = Vec::Constant(4, -0.3);
  cfg.residual.bound_hi = Vec::Constant(4, 0.3);
  cfg.residual.default_pose = Vec::Zero(4);
  cfg.randomization.mass_scale = {0.8, 1.2};
  cfg.randomization.kp_scale = {0.8, 1.2};
  cfg.randomization.action_delay_max = 2;
  cfg.randomization.obs_noise_std = {0.0, 0.05};
  cfg.randomization.torque_noise_std = {0.0, 1.0};
  cfg.rsi_jitter.q = 0.05;
  TrackingEnv env(clips, model, cfg, 909);
  const StartSampler sampler(*clips, segment_clips(*clips));

  std::mt19937_64 rng(910);
  std::normal_distribution<double> g(0.0, 3.0);
  long mismatches = 0, checked = 0;
  int episodes = 0;
  for (int t = 0; t < kFuzzSteps; ++t) {
    if (!env.active()) {
      env.reset(sampler.sample({1, 0, 0}, Vec(), Vec(), rng));
      ++episodes;
    }
    const int idx = env.ref_index();
    const MotionClip& clip = env.clip();
    const Vec action = (Vec(2) << g(rng), g(rng)).finished();
    const StepResult r = env.step(action);
    for (int j : {1, 3}) {
      ++checked;
      if (std::memcmp(&r.q_tar[j], &clip.frames[static_cast<std::size_t>(idx + 1)].q_ref[j], sizeof(double)) != 0)
        ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " bit mismatches in " + std::to_string(checked) +
                               " pass-through targets over " + std::to_string(kFuzzSteps) + " steps (" +
                               std::to_string(episodes) + " episodes)"};
}

// ---------------------------------------------------------------- C10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const ExperimentConfig cfg = load_config(source_dir() / "configs" / "acceptance_sampling.yaml");
  const fs::path root = fs::current_path() / "acceptance_c10";
  fs::remove_all(root);
  std::ostringstream sink;
  for (const char* run : {"a", "b"}) {
    RunOptions opts;
    opts.out_dir = root / run;
    opts.workers = 1;
    opts.iterations = 30;
    if (cmd_train(cfg, opts, sink) != 0) return {false, std::string("cmd_train failed for run ") + run};
  }
  int identical = 0, compared = 0;
  std::string differing;
  for (const char* name : {"train_log.csv", "eval_curve.csv", "sampler_log.csv"}) {
    const std::string a = slurp(root / "a" / name), b = slurp(root / "b" / name);
    ++compared;
    if (!a.empty() && a == b)
      ++identical;
    else
      differing += std::string(" ") + name;
  }
  const bool ok = identical == compared;
  return {ok, std::to_string(identical) + "/" + std::to_string(compared) +
                  " metric CSVs byte-identical across two single-worker runs" +
                  (differing.empty() ? "" : "; differ:" + differing)};
}

// ---------------------------------------------------------------- C11

Outcome metrics() {
  std::mt19937_64 rng(1111);
  std::normal_distribution<double> g(0.0, 0.3);
  TrajectoryPair base;
  for (int t = 0; t < 40; ++t) {
    TrajectoryFrame f;
    f.q = Vec(4);
    for (int j = 0; j < 4; ++j) f.q[j] = g(rng);
    for (int b = 0; b < 3; ++b) f.links.emplace_back(g(rng), g(rng));
    f.root_pos = Vec2(g(rng), g(rng));
    base.rollout.push_back(f);
  }
  base.reference = base.rollout;
  const TrackingMetrics zero = compute_metrics(base);
  const bool zeros = zero.g_mpbpe == 0.0 && zero.mpbpe == 0.0 && zero.mpjpe == 0.0 && zero.mpjve == 0.0 &&
                     zero.mpbve == 0.0;

  // 10 mm constant root offset, otherwise identical: global 10, aligned 0.
  TrajectoryPair shifted = base;
  for (auto& f : shifted.rollout) {
    f.root_pos += Vec2(0.006, 0.008);
    for (auto& l : f.links) l += Vec2(0.006, 0.008);
  }
  const TrackingMetrics s = compute_metrics(shifted);
  // One joint off by 0.02 rad out of four: 0.02 / 4 * 1000 = 5.
  TrajectoryPair joint = base;
  for (auto& f : joint.rollout) f.q[1] += 0.02;
  const TrackingMetrics j = compute_metrics(joint);
  const double err = std::max({std::abs(s.g_mpbpe - 10.0), std::abs(s.mpbpe), std::abs(j.mpjpe - 5.0),
                               std::abs(j.mpjve), std::abs(s.mpbve)});
  const bool ok = zeros && err <= kMetricTol;
  return {ok, std::string("identical trajectories ") + (zeros ? "all exactly 0" : "NOT zero") +
                  "; planted offsets err " + fmt("%.2e", err) + " <= " + fmt("%.0e", kMetricTol)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "gradient check", gradients},
      {2, "dynamics oracle", dynamics},
      {3, "balancing QP", balancing},
      {4, "sampling distributions", sampling_distributions},
      {5, "GAE oracle", gae},
      {6, "reward kernels", reward_kernels},
      {7, "residual ablation trend", residual_trend},
      {8, "sampling ablation trend", sampling_trend},
      {9, "pass-through exactness", pass_through},
      {10, "determinism", determinism},
      {11, "metrics", metrics},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::optional<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: " << argv[0] << " [--criterion N]\n";
      return 2;
    }
  }
  bool all_pass = true;
  bool ran = false;
  for (const auto& c : criteria()) {
    if (only && *only != c.id) continue;
    ran = true;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "C" << c.id << " " << (o.pass ? "PASS" : "FAIL") << " " << c.name << ": " << o.detail << " ["
              << fmt("%.1f", secs) << " s]" << std::endl;
    all_pass = all_pass && o.pass;
  }
  if (!ran) {
    std::cerr << "no criterion " << *only << "\n";
    return 2;
  }
  return all_pass ? 0 : 1;
}
