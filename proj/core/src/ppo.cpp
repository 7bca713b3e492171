#include "resmimic/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "resmimic/errors.hpp"

namespace resmimic {

void PpoConfig::validate() const {
  if (!(gamma > 0 && gamma <= 1)) throw ConfigError("must lie in (0, 1]", "ppo.gamma");
  if (!(gae_lambda > 0 && gae_lambda <= 1)) throw ConfigError("must lie in (0, 1]", "ppo.gae_lambda");
  if (!(entropy_coef >= 0)) throw ConfigError("must be >= 0", "ppo.entropy_coef");
  if (!(learning_rate > 0)) throw ConfigError("must be > 0", "ppo.learning_rate");
  if (!(desired_kl > 0)) throw ConfigError("must be > 0", "ppo.desired_kl");
  if (!(clip_ratio > 0)) throw ConfigError("must be > 0", "ppo.clip_ratio");
  if (!(value_coef > 0)) throw ConfigError("must be > 0", "ppo.value_coef");
  if (epochs < 1) throw ConfigError("must be >= 1", "ppo.epochs");
  if (minibatches < 1) throw ConfigError("must be >= 1", "ppo.minibatches");
  if (!(max_grad_norm > 0)) throw ConfigError("must be > 0", "ppo.max_grad_norm");
  if (!(min_lr > 0 && min_lr <= max_lr)) throw ConfigError("need 0 < min_lr <= max_lr", "ppo.min_lr");
}

ActorCritic ActorCritic::make(int actor_obs, int critic_obs, int action_dim, int n_heads,
                              const std::vector<int>& hidden, double init_log_std,
                              std::mt19937_64& rng) {
  std::vector<int> actor_sizes{actor_obs};
  actor_sizes.insert(actor_sizes.end(), hidden.begin(), hidden.end());
  actor_sizes.push_back(action_dim);
  std::vector<int> critic_sizes{critic_obs};
  critic_sizes.insert(critic_sizes.end(), hidden.begin(), hidden.end());
  critic_sizes.push_back(n_heads);
  ActorCritic ac;
  ac.actor = MlpParams::orthogonal(actor_sizes, std::sqrt(2.0), 0.01, rng);
  ac.critic = MlpParams::orthogonal(critic_sizes, std::sqrt(2.0), 1.0, rng);
  ac.head.log_std = Vec::Constant(action_dim, init_log_std);
  ac.head.clamp();
  return ac;
}

Eigen::Index ActorCritic::n_params() const {
  return actor.n_params() + head.log_std.size() + critic.n_params();
}

Vec ActorCritic::flatten() const {
  Vec out(n_params());
  out << actor.flatten(), head.log_std, critic.flatten();
  return out;
}

void ActorCritic::unflatten(const Vec& flat) {
  if (flat.size() != n_params()) throw ContractViolation("ActorCritic::unflatten: size mismatch");
  const Eigen::Index na = actor.n_params();
  const Eigen::Index ns = head.log_std.size();
  actor.unflatten(flat.head(na));
  head.log_std = flat.segment(na, ns);
  critic.unflatten(flat.tail(critic.n_params()));
}

namespace {
constexpr char kCkptMagic[8] = {'R', 'M', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const ActorCritic& ac, std::int64_t iteration, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open checkpoint for writing: " + path.string());
  out.write(kCkptMagic, sizeof(kCkptMagic));
  out.write(reinterpret_cast<const char*>(&kCkptVersion), sizeof(kCkptVersion));
  out.write(reinterpret_cast<const char*>(&iteration), sizeof(iteration));
  write_mlp(out, ac.actor);
  const auto n = static_cast<std::uint64_t>(ac.head.log_std.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(ac.head.log_std.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  write_mlp(out, ac.critic);
  if (!out) throw ParseError("failed writing checkpoint: " + path.string());
}

ActorCritic load_checkpoint(const std::filesystem::path& path, std::int64_t* iteration) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::int64_t iter = 0;
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw ParseError("not a checkpoint file: " + path.string());
  if (!in.read(reinterpret_cast<char*>(&version), sizeof(version)) || version != kCkptVersion)
    throw ParseError("unsupported checkpoint version");
  if (!in.read(reinterpret_cast<char*>(&iter), sizeof(iter))) throw ParseError("checkpoint truncated");
  ActorCritic ac;
  ac.actor = read_mlp(in);
  std::uint64_t n = 0;
  if (!in.read(reinterpret_cast<char*>(&n), sizeof(n)) ||
      n != static_cast<std::uint64_t>(ac.actor.output_size()))
    throw ParseError("checkpoint: log_std size does not match the actor output");
  ac.head.log_std.resize(static_cast<Eigen::Index>(n));
  if (!in.read(reinterpret_cast<char*>(ac.head.log_std.data()),
               static_cast<std::streamsize>(n * sizeof(double))))
    throw ParseError("checkpoint truncated in log_std");
  ac.critic = read_mlp(in);
  if (iteration) *iteration = iter;
  return ac;
}

void RolloutBuffer::clear() {
  actor_obs.clear();
  critic_obs.clear();
  actions.clear();
  action_mean.clear();
  log_prob.clear();
  rewards.clear();
  values.clear();
  done.clear();
  truncated.clear();
  bootstrap.clear();
}

void RolloutBuffer::append(const RolloutBuffer& o) {
  auto cat = [](auto& a, const auto& b) { a.insert(a.end(), b.begin(), b.end()); };
  cat(actor_obs, o.actor_obs);
  cat(critic_obs, o.critic_obs);
  cat(actions, o.actions);
  cat(action_mean, o.action_mean);
  cat(log_prob, o.log_prob);
  cat(rewards, o.rewards);
  cat(values, o.values);
  cat(done, o.done);
  cat(truncated, o.truncated);
  cat(bootstrap, o.bootstrap);
  if (old_log_std.size() == 0) old_log_std = o.old_log_std;
}

void RolloutBuffer::validate(int n_heads) const {
  const std::size_t t = rewards.size();
  if (actor_obs.size() != t || critic_obs.size() != t || actions.size() != t ||
      action_mean.size() != t || log_prob.size() != t || values.size() != t || done.size() != t ||
      truncated.size() != t || bootstrap.size() != t)
    throw ContractViolation("rollout buffer sequences have different lengths");
  for (std::size_t i = 0; i < t; ++i)
    if (rewards[i].size() != n_heads || values[i].size() != n_heads || bootstrap[i].size() != n_heads)
      throw ContractViolation("reward/value vector length differs from the number of critic heads");
}

namespace {

Vec normalized(const Vec& x) {
  if (x.size() == 0) return x;
  const double mean = x.mean();
  const double std = std::sqrt((x.array() - mean).square().mean());
  return ((x.array() - mean) / (std + 1e-8)).matrix();
}

}  // namespace

GaeResult compute_gae(const RolloutBuffer& buffer, const Vec& tail_values, const PpoConfig& config) {
  const int t_len = buffer.size();
  const int heads = static_cast<int>(tail_values.size());
  buffer.validate(heads);
  GaeResult out;
  out.advantages.resize(t_len, heads);
  out.returns.resize(t_len, heads);
  Vec next_adv = Vec::Zero(heads);
  const double g = config.gamma, gl = config.gamma * config.gae_lambda;
  for (int t = t_len - 1; t >= 0; --t) {
    const Vec& r = buffer.rewards[t];
    const Vec& v = buffer.values[t];
    Vec adv;
    if (buffer.done[t]) {
      adv = r - v;
    } else if (buffer.truncated[t]) {
      adv = r + g * buffer.bootstrap[t] - v;
    } else if (t == t_len - 1) {
      adv = r + g * tail_values - v;
    } else {
      adv = r + g * buffer.values[t + 1] - v + gl * next_adv;
    }
    out.advantages.row(t) = adv.transpose();
    out.returns.row(t) = (adv + v).transpose();
    next_adv = adv;
  }
  if (config.per_head_normalize) {
    Vec sum = Vec::Zero(t_len);
    for (int h = 0; h < heads; ++h) sum += normalized(out.advantages.col(h));
    out.policy_advantage = normalized(sum);
  } else {
    out.policy_advantage = normalized(out.advantages.rowwise().sum());
  }
  return out;
}

double adapt_learning_rate(double current_lr, double measured_kl, double desired_kl, double min_lr,
                           double max_lr) {
  double lr = current_lr;
  if (measured_kl > 2.0 * desired_kl)
    lr = current_lr / 1.5;
  else if (measured_kl < 0.5 * desired_kl)
    lr = current_lr * 1.5;
  return std::clamp(lr, min_lr, max_lr);
}

void AdamState::step(Vec& params, const Vec& grad, double lr) {
  if (m.size() != params.size()) {
    m = Vec::Zero(params.size());
    v = Vec::Zero(params.size());
    t = 0;
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

namespace {

struct BatchEval {
  PpoLosses losses;
  Vec grad;  // ActorCritic::flatten layout
};

BatchEval evaluate_batch(const ActorCritic& ac, const RolloutBuffer& buf, const GaeResult& gae,
                         const std::vector<int>& idx, const PpoConfig& cfg, bool want_grad) {
  const int m = static_cast<int>(idx.size());
  const int act = ac.action_dim();
  const int heads = ac.n_heads();
  Mat obs(ac.actor.input_size(), m), cobs(ac.critic.input_size(), m);
  Mat actions(act, m), mean_old(act, m), returns(heads, m);
  Vec logp_old(m), adv(m);
  for (int k = 0; k < m; ++k) {
    const int i = idx[k];
    obs.col(k) = buf.actor_obs[i];
    cobs.col(k) = buf.critic_obs[i];
    actions.col(k) = buf.actions[i];
    mean_old.col(k) = buf.action_mean[i];
    logp_old[k] = buf.log_prob[i];
    adv[k] = gae.policy_advantage[i];
    returns.col(k) = gae.returns.row(i).transpose();
  }
  ForwardCache actor_cache, critic_cache;
  const Mat mu = forward(ac.actor, obs, &actor_cache);
  const Mat values = forward(ac.critic, cobs, &critic_cache);
  const Vec& log_std = ac.head.log_std;
  const Eigen::ArrayXd inv_var = (-2.0 * log_std.array()).exp();
  const double log_norm = log_std.sum() + 0.5 * act * std::log(2.0 * std::numbers::pi);

  const Mat diff = actions - mu;
  BatchEval out;
  PpoLosses& L = out.losses;
  Vec dlogp(m);
  double clipped = 0.0, kl = 0.0, surrogate = 0.0;
  for (int k = 0; k < m; ++k) {
    const double logp = -0.5 * (diff.col(k).array().square() * inv_var).sum() - log_norm;
    const double ratio = std::exp(logp - logp_old[k]);
    const double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
    const double unclipped_obj = ratio * adv[k];
    const double clipped_obj = clipped_ratio * adv[k];
    surrogate += std::min(unclipped_obj, clipped_obj);
    const bool unclipped_active =
        unclipped_obj <= clipped_obj || std::abs(ratio - 1.0) <= cfg.clip_ratio;
    dlogp[k] = unclipped_active ? -unclipped_obj / m : 0.0;
    if (std::abs(ratio - 1.0) > cfg.clip_ratio) clipped += 1.0;
    kl += gaussian_kl(mean_old.col(k), buf.old_log_std, mu.col(k), log_std);
  }
  L.policy = -surrogate / m;
  L.clip_fraction = clipped / m;
  L.kl = kl / m;
  L.entropy = log_std.sum() + 0.5 * act * std::log(2.0 * std::numbers::pi * std::numbers::e);
  const Mat verr = values - returns;
  L.value = verr.array().square().rowwise().mean().matrix();
  L.total = L.policy + cfg.value_coef * L.value.sum() - cfg.entropy_coef * L.entropy;
  if (!want_grad) return out;

  // d log_prob / d mean = diff / var;  d log_prob / d log_std = diff^2 / var - 1
  const Mat dmu = (diff.array().colwise() * inv_var).matrix() * dlogp.asDiagonal();
  Vec dlog_std = ((diff.array().square().colwise() * inv_var) - 1.0).matrix() * dlogp;
  dlog_std.array() -= cfg.entropy_coef;
  const Mat dvalues = (2.0 * cfg.value_coef / m) * verr;

  const BackwardResult ga = backward(ac.actor, actor_cache, dmu);
  const BackwardResult gc = backward(ac.critic, critic_cache, dvalues);
  out.grad.resize(ac.n_params());
  out.grad << ga.grad.flatten(), dlog_std, gc.grad.flatten();
  return out;
}

std::vector<int> all_indices(int n) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

PpoLosses ppo_losses(const ActorCritic& ac, const RolloutBuffer& buffer, const GaeResult& gae,
                     const PpoConfig& config) {
  buffer.validate(ac.n_heads());
  return evaluate_batch(ac, buffer, gae, all_indices(buffer.size()), config, false).losses;
}

UpdateStats ppo_update(ActorCritic& ac, PpoOptimizer& opt, const RolloutBuffer& buffer,
                       const GaeResult& gae, const PpoConfig& config, std::uint64_t shuffle_seed) {
  buffer.validate(ac.n_heads());
  const int n = buffer.size();
  if (n == 0) throw ContractViolation("ppo_update: empty buffer");
  ActorCritic work = ac;
  PpoOptimizer state = opt;
  std::mt19937_64 rng(shuffle_seed);
  const int batches = std::min(config.minibatches, n);
  UpdateStats stats;
  stats.value_loss = Vec::Zero(ac.n_heads());
  int count = 0;
  std::vector<int> perm = all_indices(n);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int b = 0; b < batches; ++b) {
      const int lo = static_cast<int>(static_cast<long long>(n) * b / batches);
      const int hi = static_cast<int>(static_cast<long long>(n) * (b + 1) / batches);
      const std::vector<int> idx(perm.begin() + lo, perm.begin() + hi);
      BatchEval ev = evaluate_batch(work, buffer, gae, idx, config, true);
      if (!std::isfinite(ev.losses.total) || !ev.grad.allFinite()) {
        std::ostringstream msg;
        msg << "ppo update produced a non-finite loss (epoch " << epoch << ", minibatch " << b
            << ", policy " << ev.losses.policy << ", value " << ev.losses.value.sum()
            << ", kl " << ev.losses.kl << ", lr " << state.learning_rate << ")";
        throw DivergenceError(msg.str(), 0.0);
      }
      if (config.adaptive_lr)
        state.learning_rate = adapt_learning_rate(state.learning_rate, ev.losses.kl,
                                                  config.desired_kl, config.min_lr, config.max_lr);
      const double norm = ev.grad.norm();
      if (norm > config.max_grad_norm) ev.grad *= config.max_grad_norm / norm;
      Vec flat = work.flatten();
      state.adam.step(flat, ev.grad, state.learning_rate);
      work.unflatten(flat);
      work.head.clamp();

      stats.mean_kl += ev.losses.kl;
      stats.clip_fraction += ev.losses.clip_fraction;
      stats.policy_loss += ev.losses.policy;
      stats.value_loss += ev.losses.value;
      stats.entropy += ev.losses.entropy;
      ++count;
    }
  }
  if (!work.actor.all_finite() || !work.critic.all_finite() || !work.head.log_std.allFinite())
    throw DivergenceError("ppo update produced non-finite parameters", 0.0);
  stats.mean_kl /= count;
  stats.clip_fraction /= count;
  stats.policy_loss /= count;
  stats.value_loss /= count;
  stats.entropy /= count;
  stats.learning_rate = state.learning_rate;
  ac = std::move(work);
  opt = std::move(state);
  return stats;
}

}  // namespace resmimic
