#include "resmimic/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>

#include "resmimic/errors.hpp"

namespace resmimic {
namespace {

Mat orthogonal_matrix(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool tall = rows >= cols;
  const int r = tall ? rows : cols;
  const int c = tall ? cols : rows;
  Mat a(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(r, c);
  const Mat rr = qr.matrixQR().topLeftCorner(c, c);
  for (int j = 0; j < c; ++j)
    if (rr(j, j) < 0) q.col(j) = -q.col(j);
  return gain * (tall ? q : Mat(q.transpose()));
}

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw ContractViolation("network needs an input and an output size");
  for (int s : sizes)
    if (s < 1) throw ContractViolation("layer sizes must be >= 1");
}

}  // namespace

MlpParams MlpParams::zeros(std::vector<int> sizes) {
  check_sizes(sizes);
  MlpParams p;
  p.sizes = std::move(sizes);
  for (std::size_t l = 0; l + 1 < p.sizes.size(); ++l) {
    p.weights.push_back(Mat::Zero(p.sizes[l + 1], p.sizes[l]));
    p.biases.push_back(Vec::Zero(p.sizes[l + 1]));
  }
  return p;
}

MlpParams MlpParams::orthogonal(std::vector<int> sizes, double hidden_gain, double output_gain,
                                std::mt19937_64& rng) {
  MlpParams p = zeros(std::move(sizes));
  const int layers = p.n_layers();
  for (int l = 0; l < layers; ++l) {
    const double gain = l + 1 == layers ? output_gain : hidden_gain;
    p.weights[l] = orthogonal_matrix(p.sizes[l + 1], p.sizes[l], gain, rng);
  }
  return p;
}

Eigen::Index MlpParams::n_params() const {
  Eigen::Index n = 0;
  for (int l = 0; l < n_layers(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

bool MlpParams::all_finite() const {
  for (int l = 0; l < n_layers(); ++l)
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  return true;
}

Vec MlpParams::flatten() const {
  Vec out(n_params());
  Eigen::Index k = 0;
  for (int l = 0; l < n_layers(); ++l) {
    out.segment(k, weights[l].size()) = weights[l].reshaped();
    k += weights[l].size();
    out.segment(k, biases[l].size()) = biases[l];
    k += biases[l].size();
  }
  return out;
}

void MlpParams::unflatten(const Vec& flat) {
  if (flat.size() != n_params()) throw ContractViolation("unflatten: parameter count mismatch");
  Eigen::Index k = 0;
  for (int l = 0; l < n_layers(); ++l) {
    weights[l].reshaped() = flat.segment(k, weights[l].size());
    k += weights[l].size();
    biases[l] = flat.segment(k, biases[l].size());
    k += biases[l].size();
  }
}

void MlpParams::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

Mat forward(const MlpParams& params, const Mat& input, ForwardCache* cache) {
  if (input.rows() != params.input_size())
    throw ContractViolation("forward: input has " + std::to_string(input.rows()) +
                            " rows, network expects " + std::to_string(params.input_size()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Mat x = input;
  const int layers = params.n_layers();
  for (int l = 0; l < layers; ++l) {
    Mat z = params.weights[l] * x;
    z.colwise() += params.biases[l];
    if (cache) {
      cache->inputs.push_back(x);
      cache->pre.push_back(z);
    }
    x = l + 1 == layers ? std::move(z) : Mat(z.cwiseMax(0.0));
  }
  return x;
}

Vec forward(const MlpParams& params, const Vec& input) {
  return forward(params, Mat(input), nullptr).col(0);
}

BackwardResult backward(const MlpParams& params, const ForwardCache& cache, const Mat& output_grad) {
  const int layers = params.n_layers();
  if (static_cast<int>(cache.pre.size()) != layers)
    throw ContractViolation("backward: forward cache missing");
  if (output_grad.rows() != params.output_size() || output_grad.cols() != cache.pre.back().cols())
    throw ContractViolation("backward: output gradient shape mismatch");
  BackwardResult out{MlpParams::zeros(params.sizes), Mat()};
  Mat delta = output_grad;
  for (int l = layers - 1; l >= 0; --l) {
    if (l + 1 < layers) delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    out.grad.weights[l].noalias() = delta * cache.inputs[l].transpose();
    out.grad.biases[l] = delta.rowwise().sum();
    delta = params.weights[l].transpose() * delta;
  }
  out.input_grad = std::move(delta);
  return out;
}

void GaussianHead::clamp() { log_std = log_std.cwiseMax(kMinLogStd).cwiseMin(kMaxLogStd); }

double gaussian_log_prob(const GaussianHead& head, const Vec& mean, const Vec& action) {
  if (mean.size() != head.log_std.size() || action.size() != mean.size())
    throw ContractViolation("gaussian_log_prob: dimension mismatch");
  const auto z = ((action - mean).array() / head.log_std.array().exp());
  return -0.5 * z.square().sum() - head.log_std.sum() -
         0.5 * static_cast<double>(mean.size()) * std::log(2.0 * std::numbers::pi);
}

double gaussian_entropy(const GaussianHead& head) {
  return head.log_std.sum() +
         0.5 * static_cast<double>(head.log_std.size()) * std::log(2.0 * std::numbers::pi * std::numbers::e);
}

Vec gaussian_sample(const GaussianHead& head, const Vec& mean, std::mt19937_64& rng) {
  if (mean.size() != head.log_std.size()) throw ContractViolation("gaussian_sample: dimension mismatch");
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec out(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) out[i] = mean[i] + std::exp(head.log_std[i]) * normal(rng);
  return out;
}

Vec gaussian_log_prob_grad_mean(const GaussianHead& head, const Vec& mean, const Vec& action) {
  return ((action - mean).array() / (2.0 * head.log_std.array()).exp()).matrix();
}

Vec gaussian_log_prob_grad_log_std(const GaussianHead& head, const Vec& mean, const Vec& action) {
  const auto z2 = (action - mean).array().square() / (2.0 * head.log_std.array()).exp();
  return (z2 - 1.0).matrix();
}

double gaussian_kl(const Vec& mean_old, const Vec& log_std_old, const Vec& mean_new,
                   const Vec& log_std_new) {
  const auto var_old = (2.0 * log_std_old.array()).exp();
  const auto var_new = (2.0 * log_std_new.array()).exp();
  return ((log_std_new - log_std_old).array() +
          (var_old + (mean_old - mean_new).array().square()) / (2.0 * var_new) - 0.5)
      .sum();
}

void write_mlp(std::ostream& out, const MlpParams& params) {
  const auto n_sizes = static_cast<std::uint32_t>(params.sizes.size());
  out.write(reinterpret_cast<const char*>(&n_sizes), sizeof(n_sizes));
  for (int s : params.sizes) {
    const auto v = static_cast<std::int32_t>(s);
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  const Vec flat = params.flatten();
  const auto n = static_cast<std::uint64_t>(flat.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
}

MlpParams read_mlp(std::istream& in) {
  std::uint32_t n_sizes = 0;
  if (!in.read(reinterpret_cast<char*>(&n_sizes), sizeof(n_sizes)) || n_sizes < 2 || n_sizes > 64)
    throw ParseError("checkpoint: bad network header");
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) {
    std::int32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)) || v < 1 || v > (1 << 20))
      throw ParseError("checkpoint: bad layer size");
    s = v;
  }
  MlpParams p = MlpParams::zeros(sizes);
  std::uint64_t n = 0;
  if (!in.read(reinterpret_cast<char*>(&n), sizeof(n)) || n != static_cast<std::uint64_t>(p.n_params()))
    throw ParseError("checkpoint: parameter count does not match layer sizes");
  Vec flat(static_cast<Eigen::Index>(n));
  if (!in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw ParseError("checkpoint: truncated parameter block");
  p.unflatten(flat);
  return p;
}

}  // namespace resmimic
