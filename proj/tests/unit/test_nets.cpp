#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "resmimic/errors.hpp"
#include "resmimic/nets.hpp"

using namespace resmimic;

namespace {

MlpParams random_net(const std::vector<int>& sizes, std::mt19937_64& rng) {
  MlpParams p = MlpParams::zeros(sizes);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int l = 0; l < p.n_layers(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(sizes[static_cast<std::size_t>(l)]));
    for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) p.weights[l].data()[i] = scale * n(rng);
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) p.biases[l][i] = 0.1 * n(rng);
  }
  return p;
}

Mat random_matrix(int rows, int cols, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

}  // namespace

TEST(Forward, ZeroNetGivesZero) {
  const MlpParams p = MlpParams::zeros({4, 8, 3});
  EXPECT_EQ(forward(p, Vec(Vec::Constant(4, 1.7))), Vec(Vec::Zero(3)));
}

TEST(Forward, IdentityLayerPassesThrough) {
  MlpParams p = MlpParams::zeros({3, 3});
  p.weights[0] = Mat::Identity(3, 3);
  const Vec x = (Vec(3) << -1.0, 0.5, 2.0).finished();
  EXPECT_EQ(forward(p, x), x);
}

TEST(Forward, MatchesLoopImplementation) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const MlpParams p = random_net({7, 16, 9, 4}, rng);
    const Vec x = random_matrix(7, 1, 5.0, rng);
    EXPECT_LT((forward(p, x) - oracle::mlp_forward(p, x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, BatchedColumnsEqualSingleCalls) {
  std::mt19937_64 rng(2);
  const MlpParams p = random_net({5, 12, 3}, rng);
  const Mat x = random_matrix(5, 6, 2.0, rng);
  const Mat y = forward(p, x);
  for (int c = 0; c < 6; ++c) EXPECT_LT((y.col(c) - forward(p, Vec(x.col(c)))).norm(), 1e-14);
}

TEST(Forward, DimensionMismatchRejected) {
  const MlpParams p = MlpParams::zeros({4, 2});
  EXPECT_THROW(forward(p, Vec(Vec::Zero(3))), ContractViolation);
}

TEST(Backward, ZeroOutputGradientGivesZero) {
  std::mt19937_64 rng(3);
  const MlpParams p = random_net({4, 8, 2}, rng);
  ForwardCache cache;
  forward(p, random_matrix(4, 3, 1.0, rng), &cache);
  const auto g = backward(p, cache, Mat::Zero(2, 3));
  EXPECT_EQ(g.grad.flatten(), Vec::Zero(p.n_params()));
}

TEST(Backward, ScalarReluHandDerivative) {
  // f(x) = relu(w x + b) as a hidden layer feeding an identity output.
  MlpParams p = MlpParams::zeros({1, 1, 1});
  p.weights[0](0, 0) = 2.0;
  p.biases[0][0] = -1.0;
  p.weights[1](0, 0) = 1.0;
  ForwardCache cache;
  const Mat y = forward(p, Mat::Constant(1, 1, 1.0), &cache);
  EXPECT_EQ(y(0, 0), 1.0);
  const auto g = backward(p, cache, Mat::Constant(1, 1, 1.0));
  EXPECT_EQ(g.grad.weights[0](0, 0), 1.0);
  EXPECT_EQ(g.grad.biases[0][0], 1.0);
}

TEST(Backward, MatchesCentralDifferences) {
  std::mt19937_64 rng(4);
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<int> sizes{3 + trial % 4, 8 + trial % 5, 6, 1 + trial % 3};
    MlpParams p = random_net(sizes, rng);
    const Mat x = random_matrix(sizes.front(), 3, 5.0, rng);
    const Mat weight = random_matrix(sizes.back(), 3, 1.0, rng);
    auto loss = [&](const MlpParams& q, const Mat& in) { return forward(q, in).cwiseProduct(weight).sum(); };
    ForwardCache cache;
    forward(p, x, &cache);
    const auto g = backward(p, cache, weight);
    const Vec analytic = g.grad.flatten();
    Vec flat = p.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
      const double keep = flat[i];
      flat[i] = keep + h;
      p.unflatten(flat);
      const double up = loss(p, x);
      flat[i] = keep - h;
      p.unflatten(flat);
      const double down = loss(p, x);
      flat[i] = keep;
      worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * h)));
    }
    p.unflatten(flat);
    Mat xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      xp.data()[i] = x.data()[i] + h;
      const double up = loss(p, xp);
      xp.data()[i] = x.data()[i] - h;
      const double down = loss(p, xp);
      xp.data()[i] = x.data()[i];
      worst = std::max(worst, rel_error(g.input_grad.data()[i], (up - down) / (2 * h)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Gaussian, LogProbAtMeanUnitStd) {
  GaussianHead head{Vec::Zero(3)};
  const Vec m = (Vec(3) << 0.2, -0.1, 4.0).finished();
  EXPECT_NEAR(gaussian_log_prob(head, m, m), -1.5 * std::log(2 * std::numbers::pi), 1e-14);
}

TEST(Gaussian, EntropyUnitStdTwoDims) {
  GaussianHead head{Vec::Zero(2)};
  EXPECT_NEAR(gaussian_entropy(head), std::log(2 * std::numbers::pi * std::numbers::e), 1e-14);
  EXPECT_NEAR(gaussian_entropy(head), 2.83788, 1e-5);
}

TEST(Gaussian, LogProbGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 1 + trial % 4;
    GaussianHead head{random_matrix(d, 1, 1.0, rng)};
    const Vec mean = random_matrix(d, 1, 2.0, rng);
    const Vec action = random_matrix(d, 1, 2.0, rng);
    const Vec gm = gaussian_log_prob_grad_mean(head, mean, action);
    const Vec gs = gaussian_log_prob_grad_log_std(head, mean, action);
    for (int i = 0; i < d; ++i) {
      Vec mp = mean, mm = mean;
      mp[i] += h;
      mm[i] -= h;
      const double fd = (gaussian_log_prob(head, mp, action) - gaussian_log_prob(head, mm, action)) / (2 * h);
      EXPECT_NEAR(gm[i], fd, 1e-6);
      GaussianHead hp = head, hm = head;
      hp.log_std[i] += h;
      hm.log_std[i] -= h;
      const double fs = (gaussian_log_prob(hp, mean, action) - gaussian_log_prob(hm, mean, action)) / (2 * h);
      EXPECT_LT(rel_error(gs[i], fs), 1e-4);
    }
  }
}

TEST(Gaussian, SampleDeterministicPerSeedAndShaped) {
  GaussianHead head{Vec::Constant(2, std::log(0.5))};
  const Vec mean = (Vec(2) << 1.0, -1.0).finished();
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(gaussian_sample(head, mean, a), gaussian_sample(head, mean, b));
  std::mt19937_64 rng(8);
  Vec sum = Vec::Zero(2), sq = Vec::Zero(2);
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const Vec x = gaussian_sample(head, mean, rng) - mean;
    sum += x;
    sq += x.cwiseProduct(x);
  }
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(sum[i] / n, 0.0, 0.01);
    EXPECT_NEAR(std::sqrt(sq[i] / n), 0.5, 0.01);
  }
}

TEST(Gaussian, KlZeroForIdenticalAndPositiveOtherwise) {
  const Vec m = (Vec(2) << 0.1, 0.2).finished(), s = (Vec(2) << -0.5, 0.1).finished();
  EXPECT_NEAR(gaussian_kl(m, s, m, s), 0.0, 1e-15);
  EXPECT_GT(gaussian_kl(m, s, m + Vec::Constant(2, 0.1), s), 0.0);
  // Closed form for one dimension: ln(s2/s1) + (s1^2 + dm^2) / (2 s2^2) - 1/2.
  const Vec a = Vec::Constant(1, 0.0), b = Vec::Constant(1, 0.3);
  const Vec la = Vec::Constant(1, std::log(0.5)), lb = Vec::Constant(1, std::log(0.8));
  EXPECT_NEAR(gaussian_kl(a, la, b, lb), std::log(0.8 / 0.5) + (0.25 + 0.09) / (2 * 0.64) - 0.5, 1e-14);
}

TEST(Gaussian, LogStdClamped) {
  GaussianHead head{(Vec(3) << -9.0, 0.0, 4.0).finished()};
  head.clamp();
  EXPECT_EQ(head.log_std, (Vec(3) << -5.0, 0.0, 1.0).finished());
}

TEST(Init, OrthogonalGainsAndZeroBiases) {
  std::mt19937_64 rng(9);
  const MlpParams p = MlpParams::orthogonal({6, 10, 4}, std::sqrt(2.0), 0.01, rng);
  const Mat w0 = p.weights[0];
  EXPECT_LT((w0.transpose() * w0 - 2.0 * Mat::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-12);
  const Mat w1 = p.weights[1];
  EXPECT_LT((w1 * w1.transpose() - 1e-4 * Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(p.biases[0], Vec::Zero(10));
}

TEST(Init, ActivationsFiniteOverManyDraws) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  bool finite = true;
  for (int draw = 0; draw < 1000000 && finite; ++draw) {
    const MlpParams p = MlpParams::orthogonal({4, 6, 5, 2}, std::sqrt(2.0), 0.01, rng);
    Vec x(4);
    for (int i = 0; i < 4; ++i) x[i] = u(rng);
    finite = forward(p, x).allFinite();
  }
  EXPECT_TRUE(finite);
}

TEST(Checkpoint, NetworkBlockRoundTripBitExact) {
  std::mt19937_64 rng(11);
  const MlpParams p = random_net({5, 7, 3}, rng);
  std::stringstream buf;
  write_mlp(buf, p);
  const MlpParams q = read_mlp(buf);
  EXPECT_EQ(q.sizes, p.sizes);
  EXPECT_EQ(q.flatten(), p.flatten());
}

TEST(Checkpoint, CorruptBlockRejected) {
  std::stringstream buf;
  buf.write("\x02\x00\x00\x00", 4);
  EXPECT_THROW(read_mlp(buf), ParseError);
}
