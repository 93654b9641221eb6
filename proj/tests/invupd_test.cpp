#include "shrinkcov/invupd.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "shrinkcov/shrink.hpp"
#include "shrinkcov/stream.hpp"
#include "test_util.hpp"

namespace shrinkcov {
namespace {

using invupd::alpha_opt;
using invupd::alpha_opt_simplified;
using invupd::approx1_step;
using invupd::approx2_step;
using invupd::exact_chain_step;
using invupd::exact_inverse_chain;
using invupd::g_inverse_update;
using invupd::init_inverse;
using invupd::InverseState;
using invupd::reconstruction_error;
using invupd::smw_sample_inverse_update;
using invupd::Variant;
using shrink::GFSplit;
using testutil::golden_section;
using testutil::random_spd;
using testutil::random_symmetric;
using testutil::random_vector;
using testutil::rel_frob;

TEST(SmwSampleInverse, ZeroInnovationIsPureRescale) {
  auto g = testutil::rng(51);
  const SymMat s_inv = random_spd(g, 4);
  const long long n = 7;
  const SymMat updated = smw_sample_inverse_update(s_inv, Vector::Zero(4), n);
  const SymMat expected = (static_cast<double>(n) / (n - 1.0)) * s_inv;
  EXPECT_EQ(updated.mat(), expected.mat());
}

TEST(SmwSampleInverse, ScalarArithmeticOracle) {
  // p = 1, S_3 = 2, d = 1: S_4 = (2/3)*2 + (1/4)*1 = 19/12 directly from the
  // covariance recursion, so the inverse update must return 12/19.
  const SymMat s_inv = SymMat::scaled_identity(1, 0.5);
  Vector d(1);
  d << 1.0;
  const SymMat updated = smw_sample_inverse_update(s_inv, d, 3);
  EXPECT_NEAR(updated(0, 0), 12.0 / 19.0, 1e-15);
}

TEST(SmwSampleInverse, MatchesDirectInverseOnStream) {
  auto g = testutil::rng(52);
  const Eigen::Index p = 10;
  std::vector<Vector> samples;
  stream::StreamState st = stream::init(p);
  for (int i = 0; i < 60; ++i) {
    samples.push_back(random_vector(g, p));
    st = stream::observe(st, samples.back()).state;
  }
  const SymMat s60_inv = inv_spd(st.cov);

  const Vector x = random_vector(g, p);
  const auto obs = stream::observe(st, x);
  samples.push_back(x);
  const SymMat smw = smw_sample_inverse_update(s60_inv, obs.innovation, 60);
  const SymMat direct = inv_spd(stream::batch_cov(samples));
  EXPECT_LT(rel_frob(smw, direct), 1e-8);
}

TEST(SmwSampleInverse, RejectsTinyCounts) {
  const SymMat s_inv = SymMat::identity(2);
  EXPECT_THROW(smw_sample_inverse_update(s_inv, Vector::Zero(2), 1),
               InvalidInputError);
}

TEST(GInverseUpdate, ZeroInnovationGivesExactGInverse) {
  // With d = 0, G_n = ((n-1)/n) sigma_hat, whose inverse is the rescale.
  auto g = testutil::rng(53);
  const SymMat sigma_hat = random_spd(g, 3);
  const SymMat sigma_inv = inv_spd(sigma_hat);
  const long long n = 5;
  const SymMat g_inv = g_inverse_update(sigma_inv, Vector::Zero(3), n, 0.3);
  const SymMat g_mat = ((n - 1.0) / n) * sigma_hat;
  EXPECT_LT(rel_frob(matmul(g_inv, g_mat), Matrix(Matrix::Identity(3, 3))),
            1e-10);
}

TEST(GInverseUpdate, InvertsTheSplitGMatrix) {
  auto g = testutil::rng(54);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index p = 2;
    const long long n = 6;
    const double lambda_next = 0.45;
    const SymMat sigma_hat = random_spd(g, p);
    const Vector d = random_vector(g, p);

    const SymMat g_mat = ((n - 1.0) / n) * sigma_hat +
                         ((1.0 - lambda_next) / (n + 1.0)) * self_outer(d);
    const SymMat g_inv = g_inverse_update(inv_spd(sigma_hat), d, n, lambda_next);
    const Matrix residual = matmul(g_inv, g_mat) - Matrix::Identity(p, p);
    EXPECT_LT(residual.norm(), 1e-12);
  }
}

TEST(GInverseUpdate, LambdaZeroEqualsSampleUpdateBitwise) {
  auto g = testutil::rng(55);
  const SymMat m = random_spd(g, 6);
  const Vector d = random_vector(g, 6);
  const SymMat via_g = g_inverse_update(m, d, 9, 0.0);
  const SymMat via_smw = smw_sample_inverse_update(m, d, 9);
  EXPECT_EQ(via_g.mat(), via_smw.mat());
}

TEST(GInverseUpdate, RejectsLambdaOne) {
  const SymMat m = SymMat::identity(2);
  EXPECT_THROW(g_inverse_update(m, Vector::Zero(2), 4, 1.0),
               DegenerateLambdaError);
}

TEST(ExactInverseChain, NoopOnZeroF) {
  auto g = testutil::rng(56);
  const SymMat g_inv = random_spd(g, 5);
  const SymMat out = exact_inverse_chain(g_inv, SymMat(5));
  EXPECT_EQ(out.mat(), g_inv.mat());
}

TEST(ExactInverseChain, DiagonalClosedForm) {
  const double c = 0.5;
  const SymMat out =
      exact_inverse_chain(SymMat::identity(2), SymMat::scaled_identity(2, c));
  EXPECT_NEAR(out(0, 0), 1.0 / (1.0 + c), 1e-15);
  EXPECT_NEAR(out(1, 1), 1.0 / (1.0 + c), 1e-15);
  EXPECT_NEAR(out(0, 1), 0.0, 1e-15);
}

TEST(ExactInverseChain, MatchesDirectInverse) {
  auto g = testutil::rng(57);
  for (int rep = 0; rep < 10; ++rep) {
    const Eigen::Index p = 8;
    const SymMat g_mat = random_spd(g, p, 1.0);
    const SymMat f = 0.05 * random_symmetric(g, p);
    const SymMat chained = exact_inverse_chain(inv_spd(g_mat), f);
    const SymMat direct = inv_spd(g_mat + f);
    EXPECT_LT(rel_frob(chained, direct), 1e-8);
    const Matrix residual =
        matmul(chained, g_mat + f) - Matrix::Identity(p, p);
    EXPECT_LT(residual.norm() / std::sqrt(static_cast<double>(p)), 1e-8);
  }
}

TEST(ExactInverseChain, ReportsPivotBlowup) {
  // G = I and F = -I zero out the first pivot: 1 + e_1^T f_1 = 0.
  EXPECT_THROW(
      exact_inverse_chain(SymMat::identity(3), SymMat::scaled_identity(3, -1.0)),
      PivotBlowupError);
}

TEST(AlphaOpt, ZeroWhenFVanishes) {
  auto g = testutil::rng(58);
  const SymMat g_inv = random_spd(g, 4);
  EXPECT_EQ(alpha_opt(g_inv, SymMat(4), random_spd(g, 4)), 0.0);
  EXPECT_EQ(alpha_opt_simplified(g_inv, 0.0, random_spd(g, 4)), 0.0);
}

double correction_objective(const SymMat& g_inv, const SymMat& f,
                            const SymMat& sigma, double alpha) {
  const Matrix approx =
      g_inv.mat() - alpha * (g_inv.mat() * f.mat() * g_inv.mat());
  return (approx * sigma.mat() - Matrix::Identity(g_inv.dim(), g_inv.dim()))
      .squaredNorm();
}

TEST(AlphaOpt, ScalarCorrectionReachesExactInverse) {
  // In one dimension the quadratic hits its unconstrained optimum, so the
  // corrected approximation reconstructs exactly.
  const SymMat g_inv = SymMat::scaled_identity(1, 0.8);
  const SymMat f = SymMat::scaled_identity(1, 0.3);
  const SymMat sigma = SymMat::scaled_identity(1, 1.7);
  const double alpha = alpha_opt(g_inv, f, sigma);
  EXPECT_LT(correction_objective(g_inv, f, sigma, alpha), 1e-14);
}

TEST(AlphaOpt, MatchesGoldenSectionMinimizer) {
  auto g = testutil::rng(59);
  for (int rep = 0; rep < 25; ++rep) {
    const Eigen::Index p = 6;
    const SymMat g_inv = random_spd(g, p);
    const SymMat f = 0.3 * random_symmetric(g, p);
    const SymMat sigma = random_spd(g, p);

    const Matrix gs = g_inv.mat() * sigma.mat();
    const Matrix b = g_inv.mat() * f.mat() * gs;
    const Matrix a = gs - Matrix::Identity(p, p);
    const double radius = a.norm() / b.norm() + 1.0;

    const double alpha = alpha_opt(g_inv, f, sigma);
    const double golden = golden_section(
        [&](double x) { return correction_objective(g_inv, f, sigma, x); },
        -radius, radius, 1e-9);
    EXPECT_NEAR(alpha, golden, 1e-6);
  }
}

// Builds a stream of n observations plus a shrink state at a fixed lambda.
struct StepFixture {
  stream::StreamState prev_stream;
  shrink::ShrinkState prev_shrink;

  static StepFixture make(std::mt19937_64& g, Eigen::Index p, int n,
                          double lambda) {
    StepFixture f;
    f.prev_stream = stream::init(p);
    for (int i = 0; i < n; ++i) {
      f.prev_stream =
          stream::observe(f.prev_stream, random_vector(g, p)).state;
    }
    f.prev_shrink = shrink::make_state(f.prev_stream, lambda);
    return f;
  }
};

TEST(Approx1Step, ExactWhenFIsZeroAndInputExact) {
  // lambda_n = lambda_{n+1} = 0 kills F entirely, so one SMW step applied
  // to the exact inverse stays exact.
  auto g = testutil::rng(60);
  const Eigen::Index p = 3;
  const auto f = StepFixture::make(g, p, 8, 0.0);  // n=8 > p keeps S SPD
  const auto obs = stream::observe(f.prev_stream, random_vector(g, p));
  const GFSplit gf = shrink::gf_split(f.prev_shrink, f.prev_stream,
                                      obs.innovation, 0.0);
  EXPECT_EQ(gf.f.mat(), Matrix::Zero(p, p));

  const InverseState state{Variant::approx1, inv_spd(f.prev_shrink.sigma_hat),
                           f.prev_stream.n, std::nullopt};
  const SymMat sigma_next = gf.g + gf.f;
  const InverseState next = approx1_step(state, obs.innovation, f.prev_stream.n,
                                         0.0, 0.0, gf, sigma_next);
  EXPECT_LT(reconstruction_error(next.inv, sigma_next), 1e-12);
  ASSERT_TRUE(next.last_alpha.has_value());
  EXPECT_EQ(*next.last_alpha, 0.0);
}

TEST(Approx1Step, ScalarStreamStaysExact) {
  // p = 1 with a fixed nonzero lambda: the alpha correction reaches the
  // exact inverse at every step.
  auto g = testutil::rng(61);
  const double lambda = 0.3;
  stream::StreamState st = stream::init(1);
  st = stream::observe(st, random_vector(g, 1)).state;
  st = stream::observe(st, random_vector(g, 1)).state;
  shrink::ShrinkState sh = shrink::make_state(st, lambda);
  InverseState inv = init_inverse(st, sh, Variant::approx1);

  for (int step = 0; step < 20; ++step) {
    const auto obs = stream::observe(st, random_vector(g, 1));
    const GFSplit gf = shrink::gf_split(sh, st, obs.innovation, lambda);
    const SymMat sigma_next = gf.g + gf.f;
    inv = approx1_step(inv, obs.innovation, st.n, sh.lambda, lambda, gf,
                       sigma_next);
    EXPECT_LT(reconstruction_error(inv.inv, sigma_next), 1e-12)
        << "step " << step;
    st = obs.state;
    sh = shrink::ShrinkState{lambda, sigma_next, st.n};
  }
}

TEST(Approx2Step, LambdaZeroReducesToGUpdateAlone) {
  auto g = testutil::rng(62);
  const Eigen::Index p = 4;
  const auto f = StepFixture::make(g, p, 9, 0.0);
  const auto obs = stream::observe(f.prev_stream, random_vector(g, p));
  const GFSplit gf =
      shrink::gf_split(f.prev_shrink, f.prev_stream, obs.innovation, 0.0);
  EXPECT_EQ(gf.f_simplified, 0.0);

  const SymMat start = inv_spd(f.prev_shrink.sigma_hat);
  const InverseState state{Variant::approx2, start, f.prev_stream.n,
                           std::nullopt};
  const SymMat sigma_next = gf.g + gf.f;
  const InverseState next = approx2_step(state, obs.innovation,
                                         f.prev_stream.n, 0.0, gf, sigma_next);
  const SymMat g_only =
      g_inverse_update(start, obs.innovation, f.prev_stream.n, 0.0);
  EXPECT_EQ(next.inv.mat(), g_only.mat());
}

TEST(ApproxSteps, AgreeWhenLambdaIsConstant) {
  // lambda_n == lambda_{n+1} makes F == F_tilde exactly, so both
  // approximations coincide given the same input inverse.
  auto g = testutil::rng(63);
  const Eigen::Index p = 5;
  const double lambda = 0.35;
  const auto f = StepFixture::make(g, p, 7, lambda);
  const auto obs = stream::observe(f.prev_stream, random_vector(g, p));
  const GFSplit gf = shrink::gf_split(f.prev_shrink, f.prev_stream,
                                      obs.innovation, lambda);
  const SymMat sigma_next = gf.g + gf.f;
  const SymMat start = inv_spd(f.prev_shrink.sigma_hat);

  const InverseState s1{Variant::approx1, start, f.prev_stream.n, std::nullopt};
  const InverseState s2{Variant::approx2, start, f.prev_stream.n, std::nullopt};
  const InverseState n1 = approx1_step(s1, obs.innovation, f.prev_stream.n,
                                       lambda, lambda, gf, sigma_next);
  const InverseState n2 = approx2_step(s2, obs.innovation, f.prev_stream.n,
                                       lambda, gf, sigma_next);
  EXPECT_LT(rel_frob(n1.inv, n2.inv), 1e-12);
  EXPECT_NEAR(*n1.last_alpha, *n2.last_alpha,
              1e-9 * std::abs(*n1.last_alpha) + 1e-12);
}

TEST(ReconstructionError, ExactInverseScoresZero) {
  auto g = testutil::rng(64);
  const SymMat sigma = random_spd(g, 5);
  EXPECT_LT(reconstruction_error(inv_spd(sigma), sigma), 1e-12);
}

TEST(ReconstructionError, ZeroMatrixScoresOne) {
  auto g = testutil::rng(65);
  const SymMat sigma = random_spd(g, 6);
  EXPECT_DOUBLE_EQ(reconstruction_error(SymMat(6), sigma), 1.0);
}

TEST(ReconstructionError, MatchesBruteForceExpansion) {
  auto g = testutil::rng(66);
  const Eigen::Index p = 4;
  const SymMat inv = random_symmetric(g, p);
  const SymMat sigma = random_spd(g, p);
  double expected = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      double entry = 0.0;
      for (Eigen::Index k = 0; k < p; ++k) entry += inv(i, k) * sigma(k, j);
      if (i == j) entry -= 1.0;
      expected += entry * entry;
    }
  }
  expected /= static_cast<double>(p);
  EXPECT_NEAR(reconstruction_error(inv, sigma), expected,
              1e-12 * expected + 1e-15);
}

TEST(InitInverse, SeedsWithDirectInversion) {
  auto g = testutil::rng(67);
  const auto f = StepFixture::make(g, 3, 2, 0.5);
  const InverseState state = init_inverse(f.prev_stream, f.prev_shrink,
                                          Variant::exact_chain);
  const Matrix residual =
      matmul(state.inv, f.prev_shrink.sigma_hat) - Matrix::Identity(3, 3);
  EXPECT_LT(residual.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(state.n, 2);
}

TEST(InitInverse, ReplayMatchesLateSeeding) {
  // Seeding at n=2 and replaying the exact chain to n=10 lands on the same
  // inverse as seeding directly at n=10.
  auto g = testutil::rng(68);
  std::uniform_real_distribution<double> pick_lambda(0.05, 0.95);
  const Eigen::Index p = 3;
  stream::StreamState st = stream::init(p);
  for (int i = 0; i < 2; ++i) st = stream::observe(st, random_vector(g, p)).state;
  shrink::ShrinkState sh = shrink::make_state(st, pick_lambda(g));
  InverseState chain = init_inverse(st, sh, Variant::exact_chain);

  while (st.n < 10) {
    const auto obs = stream::observe(st, random_vector(g, p));
    const double lambda_next = pick_lambda(g);
    const GFSplit gf = shrink::gf_split(sh, st, obs.innovation, lambda_next);
    chain = exact_chain_step(chain, obs.innovation, st.n, lambda_next, gf);
    st = obs.state;
    sh = shrink::ShrinkState{lambda_next, gf.g + gf.f, st.n};
  }
  const InverseState fresh = init_inverse(st, sh, Variant::exact_chain);
  EXPECT_LT(rel_frob(chain.inv, fresh.inv), 1e-8);
}

TEST(InitInverse, RejectsSingularSeed) {
  auto g = testutil::rng(69);
  // n=2 < p=3 with lambda = 0: sigma_hat is the rank-one S_2.
  const auto f = StepFixture::make(g, 3, 2, 0.0);
  EXPECT_THROW(init_inverse(f.prev_stream, f.prev_shrink, Variant::approx1),
               NotPositiveDefiniteError);
  // n < 2 refuses outright.
  const auto early = StepFixture::make(g, 3, 1, 0.0);
  EXPECT_THROW(init_inverse(early.prev_stream, early.prev_shrink,
                            Variant::approx1),
               NotPositiveDefiniteError);
}

TEST(UpdateOutputs, AreExactlySymmetric) {
  auto g = testutil::rng(70);
  std::uniform_real_distribution<double> pick_lambda(0.05, 0.95);
  const Eigen::Index p = 6;
  stream::StreamState st = stream::init(p);
  for (int i = 0; i < 2; ++i) st = stream::observe(st, random_vector(g, p)).state;
  shrink::ShrinkState sh = shrink::make_state(st, pick_lambda(g));
  InverseState s1 = init_inverse(st, sh, Variant::approx1);
  InverseState s2{Variant::approx2, s1.inv, st.n, std::nullopt};
  InverseState sc{Variant::exact_chain, s1.inv, st.n, std::nullopt};

  for (int step = 0; step < 12; ++step) {
    const auto obs = stream::observe(st, random_vector(g, p));
    const double lambda_next = pick_lambda(g);
    const GFSplit gf = shrink::gf_split(sh, st, obs.innovation, lambda_next);
    const SymMat sigma_next = gf.g + gf.f;
    s1 = approx1_step(s1, obs.innovation, st.n, sh.lambda, lambda_next, gf,
                      sigma_next);
    s2 = approx2_step(s2, obs.innovation, st.n, lambda_next, gf, sigma_next);
    sc = exact_chain_step(sc, obs.innovation, st.n, lambda_next, gf);
    for (const InverseState* s : {&s1, &s2, &sc}) {
      EXPECT_EQ(s->inv.mat(), Matrix(s->inv.mat().transpose()));
    }
    st = obs.state;
    sh = shrink::ShrinkState{lambda_next, sigma_next, st.n};
  }
}

}  // namespace
}  // namespace shrinkcov
