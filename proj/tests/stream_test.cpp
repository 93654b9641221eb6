#include "shrinkcov/stream.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "test_util.hpp"

namespace shrinkcov {
namespace {

using stream::batch_cov;
using stream::batch_mean;
using stream::batch_target;
using stream::Observation;
using stream::observe;
using stream::StreamState;
using testutil::random_vector;
using testutil::rel_frob;

std::vector<Vector> random_samples(std::mt19937_64& g, int n, Eigen::Index p) {
  std::vector<Vector> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(random_vector(g, p));
  return out;
}

StreamState fold(const std::vector<Vector>& samples, Eigen::Index p) {
  StreamState st = stream::init(p);
  for (const Vector& x : samples) st = observe(st, x).state;
  return st;
}

TEST(StreamInit, EmptyState) {
  const StreamState st = stream::init(3);
  EXPECT_EQ(st.n, 0);
  EXPECT_EQ(st.mean, Vector::Zero(3));
  EXPECT_EQ(st.cov.mat(), Matrix::Zero(3, 3));
  EXPECT_EQ(st.target_scale, 0.0);
}

TEST(StreamInit, ScalarState) {
  const StreamState st = stream::init(1);
  EXPECT_EQ(st.dim(), 1);
}

TEST(StreamInit, RejectsZeroDimension) {
  EXPECT_THROW(stream::init(0), InvalidInputError);
}

TEST(Observe, TwoPointHandCase) {
  StreamState st = stream::init(1);
  st = observe(st, Vector::Constant(1, 0.0)).state;
  EXPECT_EQ(st.n, 1);
  EXPECT_EQ(st.cov.mat()(0, 0), 0.0);  // zero-matrix convention at n == 1
  st = observe(st, Vector::Constant(1, 2.0)).state;
  EXPECT_DOUBLE_EQ(st.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(st.cov(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(st.target_scale, 2.0);
}

TEST(Observe, ZeroInnovationDecaysCovariance) {
  auto g = testutil::rng(21);
  StreamState st = fold(random_samples(g, 6, 4), 4);
  const double n = static_cast<double>(st.n);

  const Observation obs = observe(st, st.mean);
  EXPECT_EQ(obs.innovation, Vector::Zero(4));
  EXPECT_EQ(obs.state.mean, st.mean);
  const SymMat expected = ((n - 1.0) / n) * st.cov;
  EXPECT_EQ(obs.state.cov.mat(), expected.mat());
}

TEST(Observe, ReturnsInnovation) {
  auto g = testutil::rng(22);
  StreamState st = fold(random_samples(g, 3, 2), 2);
  const Vector x = random_vector(g, 2);
  const Observation obs = observe(st, x);
  EXPECT_EQ(obs.innovation, Vector(x - st.mean));
}

TEST(Observe, SequentialMatchesBatch) {
  auto g = testutil::rng(23);
  const auto samples = random_samples(g, 30, 5);
  const StreamState st = fold(samples, 5);
  EXPECT_LT((st.mean - batch_mean(samples)).norm(), 1e-10);
  EXPECT_LT(rel_frob(st.cov, batch_cov(samples)), 1e-10);
}

TEST(Observe, SequentialBatchEquivalenceProperty) {
  auto g = testutil::rng(24);
  std::uniform_int_distribution<int> pick_p(1, 20), pick_n(2, 100);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Index p = pick_p(g);
    const auto samples = random_samples(g, pick_n(g), p);
    const StreamState st = fold(samples, p);
    EXPECT_LT(rel_frob(st.cov, batch_cov(samples)), 1e-10);
    const Vector bm = batch_mean(samples);
    EXPECT_LT((st.mean - bm).norm() / std::max(bm.norm(), 1.0), 1e-10);
  }
}

TEST(Observe, TargetScaleTracksTrace) {
  auto g = testutil::rng(25);
  StreamState st = stream::init(6);
  for (int i = 0; i < 40; ++i) {
    st = observe(st, random_vector(g, 6)).state;
    if (st.n >= 2) {
      const double tr = trace(st.cov);
      EXPECT_NEAR(st.target_scale * 6.0, tr, 1e-12 * std::abs(tr));
    }
  }
}

TEST(Observe, PermutationInvarianceOfFinalState) {
  auto g = testutil::rng(26);
  auto samples = random_samples(g, 25, 4);
  const StreamState a = fold(samples, 4);
  std::shuffle(samples.begin(), samples.end(), g);
  const StreamState b = fold(samples, 4);
  EXPECT_LT((a.mean - b.mean).norm(), 1e-10);
  EXPECT_LT(rel_frob(a.cov, b.cov), 1e-10);
}

TEST(Observe, CovarianceIsPsd) {
  auto g = testutil::rng(27);
  const StreamState st = fold(random_samples(g, 10, 6), 6);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(st.cov.mat());
  EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-10);
}

TEST(Observe, RejectsBadInput) {
  const StreamState st = stream::init(3);
  EXPECT_THROW(observe(st, Vector::Zero(2)), DimensionMismatchError);
  Vector bad = Vector::Zero(3);
  bad(1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(observe(st, bad), InvalidInputError);
  bad(1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(observe(st, bad), InvalidInputError);
}

TEST(Batch, TwoSampleHandCase) {
  std::vector<Vector> samples{Vector::Constant(1, 0.0), Vector::Constant(1, 2.0)};
  EXPECT_DOUBLE_EQ(batch_mean(samples)(0), 1.0);
  EXPECT_DOUBLE_EQ(batch_cov(samples)(0, 0), 2.0);
}

TEST(Batch, TargetOfIdentityIsIdentity) {
  const SymMat t = batch_target(SymMat::identity(5));
  EXPECT_EQ(t.mat(), Matrix::Identity(5, 5));
}

TEST(Batch, RejectsTooFewSamples) {
  std::vector<Vector> one{Vector::Zero(2)};
  EXPECT_THROW(batch_cov(one), InvalidInputError);
  EXPECT_THROW(batch_mean(std::vector<Vector>{}), InvalidInputError);
}

TEST(Batch, CovUnbiasedMonteCarlo) {
  // Average of batch_cov over many independent n=20 draws approaches the
  // true covariance of the generator.
  auto g = testutil::rng(28);
  const Eigen::Index p = 6;
  const SymMat sigma = testutil::random_spd(g, p, 0.5);
  const CholFactor chol = cholesky(sigma);

  Matrix acc = Matrix::Zero(p, p);
  const int reps = 3000;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<Vector> samples;
    samples.reserve(20);
    for (int i = 0; i < 20; ++i) {
      samples.push_back(sample_gaussian(chol, random_vector(g, p)));
    }
    acc += batch_cov(samples).mat();
  }
  acc /= static_cast<double>(reps);
  EXPECT_LT(rel_frob(acc, sigma.mat()), 0.05);
}

}  // namespace
}  // namespace shrinkcov
