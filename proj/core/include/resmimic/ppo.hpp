#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "resmimic/nets.hpp"

namespace resmimic {

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double learning_rate = 1e-3;
  double desired_kl = 0.01;
  bool adaptive_lr = true;
  double clip_ratio = 0.2;
  double value_coef = 1.0;
  int epochs = 5;
  int minibatches = 4;
  double max_grad_norm = 1.0;
  bool per_head_normalize = false;
  double min_lr = 1e-5;
  double max_lr = 1e-2;

  void validate() const;
};

/// Separate actor and multi-head critic networks of identical trunk shape.
struct ActorCritic {
  MlpParams actor;
  GaussianHead head;
  MlpParams critic;

  static ActorCritic make(int actor_obs, int critic_obs, int action_dim, int n_heads,
                          const std::vector<int>& hidden, double init_log_std,
                          std::mt19937_64& rng);

  int action_dim() const { return actor.output_size(); }
  int n_heads() const { return critic.output_size(); }
  Eigen::Index n_params() const;
  Vec flatten() const;
  void unflatten(const Vec& flat);
};

// Checkpoint file: "RMCKPT01" | u32 version | i64 iteration | actor block |
// log_std block (u64 n, f64...) | critic block.
void save_checkpoint(const ActorCritic& ac, std::int64_t iteration, const std::filesystem::path& path);
ActorCritic load_checkpoint(const std::filesystem::path& path, std::int64_t* iteration = nullptr);

struct RolloutBuffer {
  std::vector<Vec> actor_obs;
  std::vector<Vec> critic_obs;
  std::vector<Vec> actions;
  std::vector<Vec> action_mean;  // policy mean at collection time
  std::vector<double> log_prob;
  std::vector<Vec> rewards;      // per head
  std::vector<Vec> values;       // per head
  std::vector<std::uint8_t> done;       // failure termination: no bootstrap
  std::vector<std::uint8_t> truncated;  // chain cut with bootstrap value
  std::vector<Vec> bootstrap;    // V(s_next) per head where truncated
  Vec old_log_std;

  int size() const { return static_cast<int>(rewards.size()); }
  void clear();
  void append(const RolloutBuffer& other);
  /// Throws ContractViolation unless all sequences agree.
  void validate(int n_heads) const;
};

struct GaeResult {
  Mat advantages;  // T x heads
  Mat returns;     // T x heads
  Vec policy_advantage;  // summed over heads, normalized over the batch
};

/// `tail_values` bootstraps the final step when it is neither done nor
/// truncated.
GaeResult compute_gae(const RolloutBuffer& buffer, const Vec& tail_values, const PpoConfig& config);

/// Halve-or-grow rule: lr / 1.5 above 2 * desired, lr * 1.5 below desired / 2.
double adapt_learning_rate(double current_lr, double measured_kl, double desired_kl,
                           double min_lr = 1e-5, double max_lr = 1e-2);

struct AdamState {
  Vec m;
  Vec v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(Vec& params, const Vec& grad, double lr);
};

struct PpoLosses {
  double policy = 0.0;
  Vec value;  // per head
  double entropy = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double total = 0.0;
};

/// Loss terms of the current parameters on the whole buffer (no update).
PpoLosses ppo_losses(const ActorCritic& ac, const RolloutBuffer& buffer, const GaeResult& gae,
                     const PpoConfig& config);

struct UpdateStats {
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double policy_loss = 0.0;
  Vec value_loss;
  double entropy = 0.0;
  double learning_rate = 0.0;
};

// Mutable optimizer state carried across iterations.
struct PpoOptimizer {
  AdamState adam;
  double learning_rate = 1e-3;
};

/// Clipped-surrogate update over epochs x minibatches. Parameters are only
/// replaced when the whole update stays finite; otherwise throws
/// DivergenceError and leaves `ac` and `opt` untouched.
UpdateStats ppo_update(ActorCritic& ac, PpoOptimizer& opt, const RolloutBuffer& buffer,
                       const GaeResult& gae, const PpoConfig& config, std::uint64_t shuffle_seed);

}  // namespace resmimic
