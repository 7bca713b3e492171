#pragma once

#include <iosfwd>
#include <random>
#include <vector>

#include "resmimic/sim_core.hpp"

namespace resmimic {

/// Dense network: affine + ReLU on hidden layers, affine output. Also used
/// as the gradient accumulator (same shapes).
struct MlpParams {
  std::vector<int> sizes;  // input, hidden..., output
  std::vector<Mat> weights;  // weights[l] is sizes[l+1] x sizes[l]
  std::vector<Vec> biases;

  static MlpParams zeros(std::vector<int> sizes);
  /// Orthogonal weights (gain on hidden layers, output_gain on the last),
  /// zero biases.
  static MlpParams orthogonal(std::vector<int> sizes, double hidden_gain, double output_gain,
                              std::mt19937_64& rng);

  int input_size() const { return sizes.front(); }
  int output_size() const { return sizes.back(); }
  int n_layers() const { return static_cast<int>(weights.size()); }
  Eigen::Index n_params() const;
  bool all_finite() const;

  Vec flatten() const;
  void unflatten(const Vec& flat);
  void set_zero();
};

struct ForwardCache {
  std::vector<Mat> inputs;  // input of each layer (post-activation of the previous)
  std::vector<Mat> pre;     // pre-activation of each layer
};

/// Batched forward: columns are samples.
Mat forward(const MlpParams& params, const Mat& input, ForwardCache* cache = nullptr);
Vec forward(const MlpParams& params, const Vec& input);

struct BackwardResult {
  MlpParams grad;
  Mat input_grad;
};

/// Reverse-mode gradients of sum(output .* output_grad) over the batch.
BackwardResult backward(const MlpParams& params, const ForwardCache& cache, const Mat& output_grad);

// Diagonal Gaussian with a learned, state-independent log std.
struct GaussianHead {
  Vec log_std;
  static constexpr double kMinLogStd = -5.0;
  static constexpr double kMaxLogStd = 1.0;
  void clamp();
};

double gaussian_log_prob(const GaussianHead& head, const Vec& mean, const Vec& action);
double gaussian_entropy(const GaussianHead& head);
Vec gaussian_sample(const GaussianHead& head, const Vec& mean, std::mt19937_64& rng);
/// d log_prob / d mean and d log_prob / d log_std.
Vec gaussian_log_prob_grad_mean(const GaussianHead& head, const Vec& mean, const Vec& action);
Vec gaussian_log_prob_grad_log_std(const GaussianHead& head, const Vec& mean, const Vec& action);
/// KL(old || new) for diagonal Gaussians.
double gaussian_kl(const Vec& mean_old, const Vec& log_std_old, const Vec& mean_new,
                   const Vec& log_std_new);

// Network block of the checkpoint file: u32 n_sizes | i32 sizes... |
// u64 n_params | f64 params...
void write_mlp(std::ostream& out, const MlpParams& params);
MlpParams read_mlp(std::istream& in);

}  // namespace resmimic
