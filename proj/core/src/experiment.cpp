#include "resmimic/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "resmimic/errors.hpp"

#ifndef RESMIMIC_CODE_VERSION
#define RESMIMIC_CODE_VERSION "unknown"
#endif

namespace resmimic {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open output file " + path.string());
  return out;
}

std::string metrics_cells(const TrackingMetrics& m) {
  return fmt(m.g_mpbpe) + "," + fmt(m.mpbpe) + "," + fmt(m.mpjpe) + "," + fmt(m.mpjve) + "," +
         fmt(m.mpbve);
}

std::vector<int> parse_mask_list(const std::string& text, int n) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const int j = std::stoi(item, &used);
      if (used != item.size() && item.find_first_not_of(' ', used) != std::string::npos)
        throw std::invalid_argument(item);
      if (j < 0 || j >= n) throw ConfigError("joint index " + item + " out of range", "residual.mask");
      out.push_back(j);
    } catch (const std::logic_error&) {
      throw ConfigError("expected auto, all or a comma-separated joint list, got '" + text + "'",
                        "residual.mask");
    }
  }
  if (out.empty()) throw ConfigError("empty joint list", "residual.mask");
  return out;
}

void write_checkpoint(const ActorCritic& ac, int iteration, const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  save_checkpoint(ac, iteration, dir / name);
}

}  // namespace

const char* code_version() { return RESMIMIC_CODE_VERSION; }

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int threads = std::clamp(workers, 1, n);
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  auto run_chunk = [&](int c) {
    const int begin = n * c / threads;
    const int end = n * (c + 1) / threads;
    try {
      for (int i = begin; i < end; ++i) fn(i);
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int c = 1; c < threads; ++c) pool.emplace_back(run_chunk, c);
    run_chunk(0);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<MotionClip> load_clips(const ExperimentConfig& config, const RobotModel& model) {
  std::vector<MotionClip> clips;
  for (std::size_t i = 0; i < config.clips.size(); ++i) {
    const auto& src = config.clips[i];
    MotionClip clip;
    if (src.synth) {
      clip = synth_reference(src.synth->resolve(model), src.synth->seed);
      clip.name = src.synth->name;
    } else {
      if (!fs::exists(src.path))
        throw ConfigError("clip file not found: " + src.path.string(),
                          "clips[" + std::to_string(i) + "].path");
      clip = src.path.extension() == ".csv" ? load_clip_csv(src.path, src.csv_fps) : load_clip(src.path);
    }
    if (clip.n_joints() != model.n_joints())
      throw ConfigError("clip '" + clip.name + "' has " + std::to_string(clip.n_joints()) +
                            " joints, robot has " + std::to_string(model.n_joints()),
                        "clips[" + std::to_string(i) + "]");
    clamp_to_limits(clip, model);
    clips.push_back(std::move(clip));
  }
  return clips;
}

ResidualConfig resolve_residual(const ExperimentConfig& config, const std::vector<MotionClip>& clips,
                                const std::vector<int>& key_dofs, int n) {
  const ResidualSetup& rs = config.residual;
  ResidualConfig rc;
  rc.mode = rs.mode;
  rc.action_scale = rs.action_scale;
  rc.absolute_action_scale = rs.absolute_action_scale;
  const auto pose = rs.default_pose.size() == 1
                        ? std::vector<double>(static_cast<std::size_t>(n), rs.default_pose[0])
                        : rs.default_pose;
  if (static_cast<int>(pose.size()) != n)
    throw ConfigError("expected a scalar or one entry per joint", "residual.default_pose");
  rc.default_pose = Eigen::Map<const Vec>(pose.data(), n);
  std::vector<int> active;
  if (rs.mask == "auto") active = key_dofs;
  else if (rs.mask == "all") for (int j = 0; j < n; ++j) active.push_back(j);
  else active = parse_mask_list(rs.mask, n);
  rc.mask.assign(static_cast<std::size_t>(n), false);
  for (int j : active) rc.mask[static_cast<std::size_t>(j)] = true;
  set_residual_bounds_from_clips(rc, clips, rs.bound_quantile, rs.bound_ratio, rs.min_bound);
  rc.validate(n);
  return rc;
}

PreparedExperiment prepare(const ExperimentConfig& config) {
  config.validate();
  PreparedExperiment exp;
  exp.config = config;
  exp.model = config.robot.build_model();
  auto clips = load_clips(config, exp.model);
  const int n = exp.model.n_joints();

  exp.key_dofs = select_key_dofs(joint_statistics(clips), config.key_dofs.quantile);
  exp.segments = segment_clips(clips);
  if (config.key_dofs.binning == BinningMode::kProduct && exp.key_dofs.size() > 2)
    throw ConfigError("product binning supports at most 2 key DOFs, selected " +
                          std::to_string(exp.key_dofs.size()),
                      "key_dofs.binning");
  exp.occupancy = occupancy(exp.segments, clips, exp.key_dofs, config.key_dofs.bins,
                            exp.model.joint_limits, config.key_dofs.binning);
  exp.balance = balance_weights(BalanceProblem::uniform_target(exp.occupancy), config.balance);

  EnvConfig& env = exp.env;
  env.obs = config.obs;
  env.residual = resolve_residual(config, clips, exp.key_dofs, n);
  env.reward = config.reward;
  env.rsi_jitter = config.sampler.rsi_jitter;
  env.randomization = config.randomization;
  env.gains = config.robot.build_gains();
  env.termination = config.termination;
  env.decimation = config.decimation;
  env.dt = config.dt;
  env.validate(exp.model);
  exp.clips = std::make_shared<const std::vector<MotionClip>>(std::move(clips));
  return exp;
}

EvalEpisode evaluate_episode(const ActorCritic& policy, const PreparedExperiment& exp,
                             std::shared_ptr<const std::vector<MotionClip>> clips, int clip_id,
                             EpisodeTrace* trace) {
  EnvConfig cfg = exp.env;
  cfg.randomization = RandomizationRanges{};
  cfg.rsi_jitter = RsiJitter{};
  cfg.termination.enabled = exp.config.eval.terminate;
  TrackingEnv env(clips, exp.model, cfg, 0);
  if (policy.actor.input_size() != env.actor_obs_size() || policy.action_dim() != env.action_dim())
    throw ContractViolation("policy expects " + std::to_string(policy.actor.input_size()) +
                            " observations and " + std::to_string(policy.action_dim()) +
                            " actions; this setup provides " + std::to_string(env.actor_obs_size()) +
                            " and " + std::to_string(env.action_dim()));
  CurriculumState cur = exp.config.curriculum;
  cur.eps_q = exp.config.eval.eps_q;
  cur.eps_q_min = std::min(cur.eps_q_min, cur.eps_q);
  cur.eps_q_max = std::max(cur.eps_q_max, cur.eps_q);
  env.set_curriculum(cur);
  env.set_trace(trace);

  const MotionClip& clip = (*clips)[static_cast<std::size_t>(clip_id)];
  StartSample start;
  start.clip_id = clip_id;
  ObsPair obs = env.reset(start);

  TrajectoryPair pair;
  pair.fps = clip.fps;
  auto record = [&](int ref_index) {
    const SimState ref_state = reference_state(exp.model, clip.frames[static_cast<std::size_t>(ref_index)]);
    const SimState& s = env.state();
    pair.rollout.push_back({s.q, forward_kinematics(exp.model, s).endpoints, s.root_pos, s.root_pitch});
    pair.reference.push_back({ref_state.q, forward_kinematics(exp.model, ref_state).endpoints,
                              ref_state.root_pos, ref_state.root_pitch});
  };
  record(0);

  EvalEpisode out;
  const int n_tracking = static_cast<int>(cfg.reward.tracking.size());
  while (true) {
    const Vec action = forward(policy.actor, obs.actor);
    StepResult res = env.step(action);
    out.tracking_return += res.reward.tracking.head(n_tracking).sum();
    ++out.length;
    record(env.ref_index());
    obs = std::move(res.obs);
    if (res.episode_over()) {
      out.termination = res.verdict;
      out.reached_end = res.truncated;
      break;
    }
  }
  out.metrics = compute_metrics(pair);
  out.normalized_reward = out.tracking_return / static_cast<double>(clip.n_frames() - 1);
  return out;
}

std::string train_log_header(const std::vector<std::string>& heads) {
  std::string out =
      "iteration,env_steps,episodes,mean_episode_length,mean_episode_return,mean_step_reward,"
      "failure_rate,eps_q,progress,s_pen,learning_rate,mean_kl,clip_fraction,policy_loss,value_loss,"
      "entropy";
  for (const auto& h : heads) out += ",value_loss_" + h;
  return out;
}

std::string eval_curve_header() {
  return "iteration,eval_reward,eval_length,E_g_mpbpe,E_mpbpe,E_mpjpe,E_mpjve,E_mpbve";
}

std::string sampler_log_header() { return "iteration,segment,clip_id,start_frame,r,p,w,visits"; }

namespace {

CurvePoint evaluate_all(const ActorCritic& policy, const PreparedExperiment& exp, int iteration) {
  CurvePoint point;
  point.iteration = iteration;
  std::vector<TrackingMetrics> per_clip;
  const int n = static_cast<int>(exp.clips->size());
  for (int c = 0; c < n; ++c) {
    const EvalEpisode ep = evaluate_episode(policy, exp, exp.clips, c);
    point.eval_reward += ep.normalized_reward / n;
    point.eval_length += static_cast<double>(ep.length) / n;
    per_clip.push_back(ep.metrics);
  }
  point.metrics = summarize(per_clip).mean;
  return point;
}

struct EnvSlot {
  std::unique_ptr<TrackingEnv> env;
  ObsPair obs;
  RolloutBuffer buffer;
  std::vector<EpisodeResult> finished;
  std::vector<int> visits;  // start segments drawn this iteration
};

}  // namespace

TrainResult train(const PreparedExperiment& exp, const RunOptions& options) {
  const ExperimentConfig& cfg = exp.config;
  const std::uint64_t seed = options.seed.value_or(cfg.seed);
  const int iterations = options.iterations.value_or(cfg.training.iterations);
  const int n_envs = cfg.training.n_envs;
  const int steps = cfg.training.steps_per_env;
  const bool write = !options.out_dir.empty();
  const fs::path out = options.out_dir;

  TrainResult result;
  {
    ExperimentConfig effective = cfg;
    effective.seed = seed;
    effective.training.iterations = iterations;
    result.config_hash = config_hash(effective);
  }

  StartSampler sampler(*exp.clips, exp.segments);
  const int n_segments = static_cast<int>(exp.segments.size());
  PriorityState priority =
      PriorityState::make(n_segments, cfg.priority.alpha, cfg.priority.beta, cfg.priority.epsilon);
  CurriculumState curriculum = cfg.curriculum;

  std::vector<EnvSlot> slots(static_cast<std::size_t>(n_envs));
  for (int e = 0; e < n_envs; ++e)
    slots[static_cast<std::size_t>(e)].env =
        std::make_unique<TrackingEnv>(exp.clips, exp.model, exp.env, derive_seed(seed, 1, static_cast<std::uint64_t>(e)));
  TrackingEnv& probe = *slots[0].env;
  std::mt19937_64 init_rng(derive_seed(seed, 2));
  ActorCritic ac = ActorCritic::make(probe.actor_obs_size(), probe.critic_obs_size(), probe.action_dim(),
                                     probe.n_reward_components(), cfg.network.hidden,
                                     cfg.network.init_log_std, init_rng);
  PpoOptimizer opt;
  opt.learning_rate = cfg.ppo.learning_rate;
  const int heads = ac.n_heads();

  std::ofstream train_log, curve_log, sampler_log;
  if (write) {
    fs::create_directories(out);
    train_log = open_out(out / "train_log.csv");
    train_log << train_log_header(cfg.reward.component_names()) << '\n';
    curve_log = open_out(out / "eval_curve.csv");
    curve_log << eval_curve_header() << '\n';
    sampler_log = open_out(out / "sampler_log.csv");
    sampler_log << sampler_log_header() << '\n';
  }

  auto draw_start = [&](EnvSlot& slot, const SamplerMix& mix, const Vec& prior) {
    const StartSample s = sampler.sample(mix, exp.balance.w, prior, slot.env->rng());
    slot.visits.push_back(s.segment);
    slot.obs = slot.env->reset(s);
  };

  {
    const SamplerMix mix0 = effective_mix(cfg.sampler, 0);
    const Vec prior0 = tempered_prior(priority);
    for (auto& slot : slots) {
      slot.env->set_curriculum(curriculum);
      draw_start(slot, mix0, prior0);
    }
  }

  auto checkpoint_dir = out / "checkpoints";
  int it = 0;
  try {
    for (it = 0; it < iterations; ++it) {
      const SamplerMix mix = effective_mix(cfg.sampler, it);
      const Vec prior = tempered_prior(priority);
      for (auto& slot : slots) {
        slot.buffer.clear();
        slot.finished.clear();
        slot.visits.clear();
      }
      const int actor_dim = probe.actor_obs_size();
      const int critic_dim = probe.critic_obs_size();
      for (int t = 0; t < steps; ++t) {
        Mat actor_in(actor_dim, n_envs), critic_in(critic_dim, n_envs);
        for (int e = 0; e < n_envs; ++e) {
          actor_in.col(e) = slots[static_cast<std::size_t>(e)].obs.actor;
          critic_in.col(e) = slots[static_cast<std::size_t>(e)].obs.critic;
        }
        const Mat means = forward(ac.actor, actor_in, nullptr);
        const Mat values = forward(ac.critic, critic_in, nullptr);
        parallel_for(n_envs, options.workers, [&](int e) {
          EnvSlot& slot = slots[static_cast<std::size_t>(e)];
          const Vec mean = means.col(e);
          if (!mean.allFinite()) throw DivergenceError("policy produced a non-finite action", 0.0);
          const Vec action = gaussian_sample(ac.head, mean, slot.env->rng());
          RolloutBuffer& b = slot.buffer;
          b.actor_obs.push_back(slot.obs.actor);
          b.critic_obs.push_back(slot.obs.critic);
          b.actions.push_back(action);
          b.action_mean.push_back(mean);
          b.log_prob.push_back(gaussian_log_prob(ac.head, mean, action));
          b.values.push_back(values.col(e));
          StepResult res = slot.env->step(action);
          b.rewards.push_back(res.reward.head_rewards());
          const bool failed = res.verdict != Termination::kNone;
          b.done.push_back(failed ? 1 : 0);
          b.truncated.push_back(!failed && res.truncated ? 1 : 0);
          b.bootstrap.push_back(!failed && res.truncated ? forward(ac.critic, res.obs.critic)
                                                         : Vec::Zero(heads));
          if (res.episode_over()) {
            slot.finished.push_back(slot.env->last_episode());
            draw_start(slot, mix, prior);
          } else {
            slot.obs = std::move(res.obs);
          }
        });
      }

      RolloutBuffer batch;
      for (auto& slot : slots) {
        RolloutBuffer& b = slot.buffer;
        const std::size_t last = b.done.size() - 1;
        if (!b.done[last] && !b.truncated[last]) {
          b.truncated[last] = 1;
          b.bootstrap[last] = forward(ac.critic, slot.obs.critic);
        }
        batch.append(b);
      }
      batch.old_log_std = ac.head.log_std;
      const GaeResult gae = compute_gae(batch, Vec::Zero(heads), cfg.ppo);
      const UpdateStats stats =
          ppo_update(ac, opt, batch, gae, cfg.ppo, derive_seed(seed, 3, static_cast<std::uint64_t>(it)));

      std::vector<int> lengths;
      double return_sum = 0.0;
      int failures = 0;
      std::vector<int> visit_counts(static_cast<std::size_t>(n_segments), 0);
      for (auto& slot : slots) {
        for (const auto& ep : slot.finished) {
          lengths.push_back(ep.length);
          return_sum += ep.total_return;
          const bool failed = ep.termination != Termination::kNone;
          failures += failed ? 1 : 0;
          const int seg = cfg.sampler.attribute_failure_to_start ? ep.start_segment : ep.end_segment;
          priority = ema_update(std::move(priority), seg, failed);
        }
        for (int s : slot.visits) ++visit_counts[static_cast<std::size_t>(s)];
      }
      curriculum = update_curriculum(curriculum, lengths);
      for (auto& slot : slots) slot.env->set_curriculum(curriculum);

      double reward_sum = 0.0;
      for (const auto& r : batch.rewards) reward_sum += r.sum();
      double mean_len = 0.0;
      for (int l : lengths) mean_len += l;
      if (!lengths.empty()) mean_len /= static_cast<double>(lengths.size());
      double value_loss = 0.0;
      for (Eigen::Index h = 0; h < stats.value_loss.size(); ++h) value_loss += stats.value_loss[h];
      if (!std::isfinite(reward_sum) || !std::isfinite(value_loss))
        throw DivergenceError("non-finite training statistics", static_cast<double>(it));

      const int done_iters = it + 1;
      if (write) {
        train_log << done_iters << ',' << static_cast<long long>(done_iters) * n_envs * steps << ','
                  << lengths.size() << ',' << fmt(mean_len) << ','
                  << fmt(lengths.empty() ? 0.0 : return_sum / static_cast<double>(lengths.size())) << ','
                  << fmt(reward_sum / batch.size()) << ','
                  << fmt(lengths.empty() ? 0.0 : static_cast<double>(failures) / lengths.size()) << ','
                  << fmt(curriculum.eps_q) << ',' << fmt(curriculum.progress) << ','
                  << fmt(penalty_scale(curriculum.progress, cfg.reward)) << ',' << fmt(stats.learning_rate)
                  << ',' << fmt(stats.mean_kl) << ',' << fmt(stats.clip_fraction) << ','
                  << fmt(stats.policy_loss) << ',' << fmt(value_loss) << ',' << fmt(stats.entropy);
        for (Eigen::Index h = 0; h < stats.value_loss.size(); ++h) train_log << ',' << fmt(stats.value_loss[h]);
        train_log << '\n';
        if (cfg.training.sampler_log_every > 0 &&
            (done_iters % cfg.training.sampler_log_every == 0 || done_iters == iterations)) {
          const Vec p = tempered_prior(priority);
          for (int s = 0; s < n_segments; ++s) {
            const auto& seg = exp.segments[static_cast<std::size_t>(s)];
            sampler_log << done_iters << ',' << s << ',' << seg.clip_id << ',' << seg.start_frame << ','
                        << fmt(priority.r[s]) << ',' << fmt(p[s]) << ',' << fmt(exp.balance.w[s]) << ','
                        << visit_counts[static_cast<std::size_t>(s)] << '\n';
          }
        }
        if (cfg.training.checkpoint_every > 0 && done_iters % cfg.training.checkpoint_every == 0) {
          char name[32];
          std::snprintf(name, sizeof(name), "iter_%06d.ckpt", done_iters);
          write_checkpoint(ac, done_iters, checkpoint_dir, name);
        }
      }
      if (cfg.eval.every > 0 && (done_iters % cfg.eval.every == 0 || done_iters == iterations)) {
        const CurvePoint point = evaluate_all(ac, exp, done_iters);
        result.curve.push_back(point);
        if (write)
          curve_log << point.iteration << ',' << fmt(point.eval_reward) << ',' << fmt(point.eval_length)
                    << ',' << metrics_cells(point.metrics) << '\n';
      }
      if (options.progress && (done_iters % 50 == 0 || done_iters == iterations))
        *options.progress << "iter " << done_iters << "/" << iterations << " mean_len " << fmt(mean_len)
                          << " eps_q " << fmt(curriculum.eps_q) << " lr " << fmt(stats.learning_rate)
                          << std::endl;
    }
  } catch (const DivergenceError& e) {
    if (write) write_checkpoint(ac, it, checkpoint_dir, "last_good.ckpt");
    throw DivergenceError(std::string(e.what()) + " (iteration " + std::to_string(it + 1) + ")",
                          e.time());
  }

  result.iterations = iterations;
  result.curriculum = curriculum;
  result.final_eval = !result.curve.empty() && result.curve.back().iteration == iterations
                          ? result.curve.back()
                          : evaluate_all(ac, exp, iterations);
  if (write) write_checkpoint(ac, iterations, out, "policy.ckpt");
  result.policy = std::move(ac);
  return result;
}

namespace {

void write_manifest(const fs::path& path, const std::string& command, const ExperimentConfig& cfg,
                    std::uint64_t seed, int workers, int iterations, const std::string& hash,
                    const std::string& status) {
  json j;
  j["command"] = command;
  j["code_version"] = code_version();
  j["config_hash"] = hash;
  j["seed"] = seed;
  j["workers"] = workers;
  j["iterations"] = iterations;
  j["status"] = status;
  j["config_file"] = "config.yaml";
  j["schema_version"] = cfg.schema_version;
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

ExperimentConfig effective_config(const ExperimentConfig& config, const RunOptions& options) {
  ExperimentConfig c = config;
  if (options.seed) c.seed = *options.seed;
  if (options.iterations) c.training.iterations = *options.iterations;
  c.workers = options.workers;
  if (!options.out_dir.empty()) c.output_dir = options.out_dir;
  return c;
}

}  // namespace

int cmd_train(const ExperimentConfig& config, const RunOptions& options, std::ostream& log) {
  const ExperimentConfig cfg = effective_config(config, options);
  const fs::path out = options.out_dir.empty() ? cfg.output_dir : options.out_dir;
  const PreparedExperiment exp = prepare(cfg);
  fs::create_directories(out);
  {
    auto f = open_out(out / "config.yaml");
    f << dump_config(cfg);
  }
  RunOptions run = options;
  run.out_dir = out;
  run.seed = cfg.seed;
  run.iterations = cfg.training.iterations;
  const std::string hash = config_hash(cfg);
  try {
    const TrainResult r = train(exp, run);
    write_manifest(out / "manifest.json", "train", cfg, cfg.seed, options.workers, r.iterations, hash,
                   "ok");
    log << "trained " << r.iterations << " iterations; final eval reward " << fmt(r.final_eval.eval_reward)
        << ", E_mpjpe " << fmt(r.final_eval.metrics.mpjpe) << "\n"
        << "outputs in " << out.string() << "\n";
  } catch (const DivergenceError&) {
    write_manifest(out / "manifest.json", "train", cfg, cfg.seed, options.workers,
                   cfg.training.iterations, hash, "diverged");
    throw;
  }
  return 0;
}

int cmd_eval(const ExperimentConfig& config, const fs::path& checkpoint,
             const std::optional<fs::path>& clip_path, int episodes, const fs::path& out_dir,
             std::ostream& log) {
  if (episodes < 0) throw ConfigError("must be >= 0", "--episodes");
  const PreparedExperiment exp = prepare(config);
  const ActorCritic policy = load_checkpoint(checkpoint);
  std::shared_ptr<const std::vector<MotionClip>> clips = exp.clips;
  std::string label = "train_clips";
  if (clip_path) {
    if (!fs::exists(*clip_path)) throw ConfigError("clip file not found: " + clip_path->string(), "--clip");
    MotionClip c = clip_path->extension() == ".csv" ? load_clip_csv(*clip_path, 50.0) : load_clip(*clip_path);
    if (c.n_joints() != exp.model.n_joints())
      throw ContractViolation("clip '" + c.name + "' has " + std::to_string(c.n_joints()) +
                              " joints; the checkpoint's robot has " + std::to_string(exp.model.n_joints()));
    clamp_to_limits(c, exp.model);
    label = "cross_motion:" + c.name;
    clips = std::make_shared<const std::vector<MotionClip>>(std::vector<MotionClip>{std::move(c)});
  }
  fs::create_directories(out_dir);
  std::vector<TrackingMetrics> per_episode;
  auto ep_csv = open_out(out_dir / "eval_episodes.csv");
  ep_csv << "episode,clip_id,length,reached_end,termination,normalized_reward,E_g_mpbpe,E_mpbpe,E_mpjpe,"
            "E_mpjve,E_mpbve\n";
  for (int e = 0; e < episodes; ++e) {
    const int clip_id = e % static_cast<int>(clips->size());
    EpisodeTrace trace;
    const EvalEpisode ep = evaluate_episode(policy, exp, clips, clip_id, &trace);
    char name[40];
    std::snprintf(name, sizeof(name), "trace_%04d.csv", e);
    trace.write_csv(out_dir / name);
    per_episode.push_back(ep.metrics);
    ep_csv << e << ',' << clip_id << ',' << ep.length << ',' << (ep.reached_end ? 1 : 0) << ','
           << to_string(ep.termination) << ',' << fmt(ep.normalized_reward) << ','
           << metrics_cells(ep.metrics) << '\n';
  }
  auto table = open_out(out_dir / "metrics.csv");
  table << metrics_table_header() << '\n';
  if (!per_episode.empty()) table << metrics_table_row(label, summarize(per_episode)) << '\n';
  log << "evaluated " << episodes << " episode(s); table in " << (out_dir / "metrics.csv").string() << "\n";
  return 0;
}

Study study_from_string(const std::string& name) {
  if (name == "residual") return Study::kResidual;
  if (name == "sampling") return Study::kSampling;
  throw ConfigError("expected residual or sampling, got '" + name + "'", "--study");
}

double curve_plateau(const std::vector<CurvePoint>& curve) {
  if (curve.empty()) return 0.0;
  const std::size_t k = std::max<std::size_t>(1, curve.size() / 10);
  double sum = 0.0;
  for (std::size_t i = curve.size() - k; i < curve.size(); ++i) sum += curve[i].eval_reward;
  return sum / static_cast<double>(k);
}

std::optional<int> iterations_to_threshold(const std::vector<CurvePoint>& curve, double threshold) {
  for (const auto& p : curve)
    if (p.eval_reward >= threshold) return p.iteration;
  return std::nullopt;
}

std::string ablation_runs_header() {
  return "study,variant,seed,iterations,final_eval_reward,plateau,iterations_to_threshold,E_g_mpbpe,"
         "E_mpbpe,E_mpjpe,E_mpjve,E_mpbve";
}

std::string ablation_curves_header() {
  return "variant,seed,iteration,eval_reward,eval_length,E_mpjpe";
}

AblationReport run_ablation(const ExperimentConfig& config, Study study,
                            const std::vector<std::uint64_t>& seeds, const RunOptions& options,
                            bool null_test) {
  if (seeds.empty()) throw ConfigError("need at least one seed", "--seeds");
  struct Variant {
    std::string name;
    ExperimentConfig cfg;
  };
  std::vector<Variant> variants;
  if (study == Study::kResidual) {
    for (ResidualMode m : {ResidualMode::kNone, ResidualMode::kAll, ResidualMode::kSelective}) {
      ExperimentConfig c = config;
      c.residual.mode = m;
      if (null_test && m != ResidualMode::kNone) c.residual.mask = "all";
      variants.push_back({to_string(m), c});
    }
  } else {
    ExperimentConfig failure = config;
    failure.sampler.mix.uniform_time += failure.sampler.mix.balanced;
    failure.sampler.mix.balanced = 0.0;
    variants.push_back({"Failure", failure});
    variants.push_back({"Failure+Balanced", config});
  }
  if (config.eval.every <= 0) throw ConfigError("ablations need eval.every > 0 for learning curves", "eval.every");

  AblationReport report;
  report.study = study;
  for (std::uint64_t seed : seeds) {
    for (const auto& v : variants) {
      RunOptions run = options;
      run.seed = seed;
      if (!options.out_dir.empty()) {
        std::string dir = v.name;
        std::replace(dir.begin(), dir.end(), '+', '_');
        run.out_dir = options.out_dir / "runs" / (dir + "_seed" + std::to_string(seed));
      }
      if (options.progress) *options.progress << "== " << v.name << " seed " << seed << std::endl;
      const PreparedExperiment exp = prepare(v.cfg);
      AblationRun r;
      r.variant = v.name;
      r.seed = seed;
      r.result = train(exp, run);
      r.plateau = curve_plateau(r.result.curve);
      report.runs.push_back(std::move(r));
    }
  }

  json verdict;
  verdict["seeds"] = seeds;
  if (study == Study::kSampling) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& r : report.runs) best = std::max(best, r.plateau);
    report.threshold = 0.8 * best;
    for (auto& r : report.runs) r.iterations_to_threshold = iterations_to_threshold(r.result.curve, report.threshold);
    int wins = 0;
    json per_seed = json::array();
    for (std::uint64_t seed : seeds) {
      std::optional<int> f, fb;
      for (const auto& r : report.runs) {
        if (r.seed != seed) continue;
        (r.variant == "Failure" ? f : fb) = r.iterations_to_threshold;
      }
      const bool win = fb && (!f || *fb < *f);
      wins += win ? 1 : 0;
      per_seed.push_back({{"seed", seed},
                          {"failure", f ? json(*f) : json(nullptr)},
                          {"failure_balanced", fb ? json(*fb) : json(nullptr)},
                          {"balanced_faster", win}});
    }
    verdict["study"] = "sampling";
    verdict["threshold"] = report.threshold;
    verdict["per_seed"] = per_seed;
    verdict["balanced_faster_seeds"] = wins;
    verdict["hypothesis_balanced_faster_in_4_of_5"] = wins * 5 >= 4 * static_cast<int>(seeds.size());
  } else {
    auto mean_mpjpe = [&](const std::string& name) {
      double s = 0.0;
      int n = 0;
      for (const auto& r : report.runs)
        if (r.variant == name) {
          s += r.result.final_eval.metrics.mpjpe;
          ++n;
        }
      return n ? s / n : 0.0;
    };
    const double none = mean_mpjpe("NONE"), all = mean_mpjpe("ALL"), sel = mean_mpjpe("SELECTIVE");
    int le_all = 0;
    for (std::uint64_t seed : seeds) {
      double a = 0.0, s = 0.0;
      for (const auto& r : report.runs) {
        if (r.seed != seed) continue;
        if (r.variant == "ALL") a = r.result.final_eval.metrics.mpjpe;
        if (r.variant == "SELECTIVE") s = r.result.final_eval.metrics.mpjpe;
      }
      le_all += s <= a ? 1 : 0;
    }
    const double reduction = none > 0 ? (none - sel) / none : 0.0;
    verdict["study"] = "residual";
    verdict["null_test"] = null_test;
    verdict["mean_final_mpjpe"] = {{"NONE", none}, {"ALL", all}, {"SELECTIVE", sel}};
    verdict["selective_vs_none_mpjpe_reduction"] = reduction;
    verdict["selective_vs_all_mpjpe_reduction"] = all > 0 ? (all - sel) / all : 0.0;
    verdict["selective_le_all_seeds"] = le_all;
    verdict["hypothesis_selective_beats_none_by_10pct"] = reduction >= 0.10;
    verdict["hypothesis_selective_le_all_in_3_of_5"] = le_all * 5 >= 3 * static_cast<int>(seeds.size());
  }
  report.verdict_json = verdict.dump(2);

  if (!options.out_dir.empty()) {
    const fs::path out = options.out_dir;
    fs::create_directories(out);
    auto runs = open_out(out / "runs.csv");
    runs << ablation_runs_header() << '\n';
    auto curves = open_out(out / "curves.csv");
    curves << ablation_curves_header() << '\n';
    for (const auto& r : report.runs) {
      runs << (study == Study::kResidual ? "residual" : "sampling") << ',' << r.variant << ',' << r.seed
           << ',' << r.result.iterations << ',' << fmt(r.result.final_eval.eval_reward) << ','
           << fmt(r.plateau) << ','
           << (r.iterations_to_threshold ? std::to_string(*r.iterations_to_threshold) : std::string())
           << ',' << metrics_cells(r.result.final_eval.metrics) << '\n';
      for (const auto& p : r.result.curve)
        curves << r.variant << ',' << r.seed << ',' << p.iteration << ',' << fmt(p.eval_reward) << ','
               << fmt(p.eval_length) << ',' << fmt(p.metrics.mpjpe) << '\n';
    }
    auto summary = open_out(out / "summary.csv");
    summary << metrics_table_header() << '\n';
    std::vector<std::string> names;
    for (const auto& r : report.runs)
      if (std::find(names.begin(), names.end(), r.variant) == names.end()) names.push_back(r.variant);
    std::vector<MetricSummary> sums;
    for (const auto& name : names) {
      std::vector<TrackingMetrics> m;
      for (const auto& r : report.runs)
        if (r.variant == name) m.push_back(r.result.final_eval.metrics);
      sums.push_back(summarize(m));
      summary << metrics_table_row(name, sums.back()) << '\n';
    }
    if (study == Study::kResidual) {
      auto rel = [&](const MetricSummary& base, const MetricSummary& ours) {
        auto pct = [](double b, double o) { return b > 0 ? fmt(100.0 * (b - o) / b) : std::string("nan"); };
        return pct(base.mean.g_mpbpe, ours.mean.g_mpbpe) + "," + pct(base.mean.mpbpe, ours.mean.mpbpe) + "," +
               pct(base.mean.mpjpe, ours.mean.mpjpe) + "," + pct(base.mean.mpjve, ours.mean.mpjve) + "," +
               pct(base.mean.mpbve, ours.mean.mpbve);
      };
      // Rows give the percentage reduction of SELECTIVE relative to each baseline.
      summary << "SELECTIVE_vs_NONE_reduction_pct," << seeds.size() << ',' << rel(sums[0], sums[2]) << '\n';
      summary << "SELECTIVE_vs_ALL_reduction_pct," << seeds.size() << ',' << rel(sums[1], sums[2]) << '\n';
    }
    auto v = open_out(out / "verdict.json");
    v << report.verdict_json << '\n';
  }
  return report;
}

int cmd_ablate(const ExperimentConfig& config, Study study, const std::vector<std::uint64_t>& seeds,
               const RunOptions& options, bool null_test, std::ostream& log) {
  const ExperimentConfig cfg = effective_config(config, options);
  RunOptions run = options;
  run.seed.reset();
  if (run.out_dir.empty()) run.out_dir = cfg.output_dir;
  const AblationReport report = run_ablation(cfg, study, seeds, run, null_test);
  log << report.verdict_json << "\n";
  return 0;
}

int cmd_synth(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
  config.validate();
  const RobotModel model = config.robot.build_model();
  fs::create_directories(out_dir);
  const auto clips = load_clips(config, model);
  for (const auto& c : clips) {
    save_clip(c, out_dir / (c.name + ".rmclip"));
    save_clip_csv(c, out_dir / (c.name + ".csv"));
    log << "wrote " << c.name << ": " << c.n_frames() << " frames at " << c.fps << " fps\n";
  }
  return 0;
}

int cmd_analyze(const ExperimentConfig& config, const fs::path& out_dir, std::ostream& log) {
  const PreparedExperiment exp = prepare(config);
  fs::create_directories(out_dir);
  const auto stats = joint_statistics(*exp.clips);
  {
    auto f = open_out(out_dir / "joint_stats.csv");
    f << "clip_id,segment,joint,mean,std\n";
    for (std::size_t c = 0; c < stats.size(); ++c) {
      for (Eigen::Index j = 0; j < stats[c].clip.mean.size(); ++j)
        f << c << ",all," << j << ',' << fmt(stats[c].clip.mean[j]) << ',' << fmt(stats[c].clip.std[j]) << '\n';
      for (std::size_t s = 0; s < stats[c].segments.size(); ++s)
        for (Eigen::Index j = 0; j < stats[c].segments[s].mean.size(); ++j)
          f << c << ',' << s << ',' << j << ',' << fmt(stats[c].segments[s].mean[j]) << ','
            << fmt(stats[c].segments[s].std[j]) << '\n';
    }
  }
  const Vec uniform_w = Vec::Constant(exp.occupancy.rows(), 1.0 / static_cast<double>(exp.occupancy.rows()));
  const Vec before = exp.occupancy.transpose() * uniform_w;
  const Vec after = exp.occupancy.transpose() * exp.balance.w;
  {
    auto f = open_out(out_dir / "occupancy.csv");
    f << "bin,density_uniform,density_balanced\n";
    for (Eigen::Index b = 0; b < before.size(); ++b) f << b << ',' << fmt(before[b]) << ',' << fmt(after[b]) << '\n';
  }
  {
    auto f = open_out(out_dir / "balance_weights.csv");
    f << "segment,clip_id,start_frame,end_frame,short,w\n";
    for (std::size_t s = 0; s < exp.segments.size(); ++s) {
      const auto& seg = exp.segments[s];
      f << s << ',' << seg.clip_id << ',' << seg.start_frame << ',' << seg.end_frame << ','
        << (seg.short_segment ? 1 : 0) << ',' << fmt(exp.balance.w[static_cast<Eigen::Index>(s)]) << '\n';
    }
  }
  auto variance = [](const Vec& v) { return (v.array() - v.mean()).square().mean(); };
  json report;
  std::vector<int> key(exp.key_dofs.begin(), exp.key_dofs.end());
  report["key_dofs"] = key;
  report["segments"] = exp.segments.size();
  report["bins"] = exp.occupancy.cols();
  report["density_variance_uniform"] = variance(before);
  report["density_variance_balanced"] = variance(after);
  report["balance_objective"] = exp.balance.objective;
  report["balance_converged"] = exp.balance.converged;
  report["balance_iterations"] = exp.balance.iterations;
  {
    auto f = open_out(out_dir / "analysis.json");
    f << report.dump(2) << '\n';
  }
  log << report.dump(2) << "\n";
  return 0;
}

}  // namespace resmimic
