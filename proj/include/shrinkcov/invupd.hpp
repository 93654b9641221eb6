#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "shrinkcov/linalg.hpp"
#include "shrinkcov/shrink.hpp"
#include "shrinkcov/stream.hpp"

namespace shrinkcov::invupd {

enum class Variant { exact_chain, approx1, approx2 };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::exact_chain: return "exact_chain";
    case Variant::approx1: return "approx1";
    case Variant::approx2: return "approx2";
  }
  return "?";
}

/// One sequentially maintained inverse of the shrinkage estimator.
/// `inv` tracks sigma_hat(lambda_n)^-1 exactly (exact_chain) or
/// approximately (approx1/approx2); `last_alpha` records the correction
/// scalar of the latest approximate step.
struct InverseState {
  Variant variant = Variant::exact_chain;
  SymMat inv;
  long long n = 0;
  std::optional<double> last_alpha;
};

namespace detail {

/// Sherman-Morrison-Woodbury update shared by the sample-covariance and
/// shrinkage-estimator inverses. For M^-1 the inverse of M,
///
///   [ (n-1)/n * M + w/(n+1) * d d^T ]^-1
///     = n/(n-1) * ( M^-1 - M^-1 d d^T M^-1 / ((n^2-1)/(n w) + d^T M^-1 d) )
///
/// with w = 1 for the plain sample update and w = 1 - lambda_{n+1} for the
/// shrinkage G update. Both public entry points funnel through here, so the
/// two coincide bit for bit when lambda == 0.
inline SymMat smw_scaled_update(const SymMat& m_inv, const Vector& d,
                                long long n, double w) {
  if (n < 2) throw InvalidInputError("smw update: need n >= 2");
  if (d.size() != m_inv.dim()) {
    throw DimensionMismatchError("smw update: dimension mismatch");
  }
  const double nn = static_cast<double>(n);
  const Vector v = m_inv.mat() * d;
  const double denom = (nn * nn - 1.0) / (nn * w) + d.dot(v);
  if (!std::isfinite(denom) || denom == 0.0) {
    throw NumericError("smw update: non-finite or zero denominator");
  }
  return rank_one_downdate(m_inv, v, denom, nn / (nn - 1.0));
}

}  // namespace detail

/// S_{n+1}^-1 from S_n^-1 after observing innovation d. Valid only while
/// S_n is invertible, i.e. n > p; the caller owns that precondition.
inline SymMat smw_sample_inverse_update(const SymMat& s_inv, const Vector& d,
                                        long long n) {
  return detail::smw_scaled_update(s_inv, d, n, 1.0);
}

/// G_n^-1 from an inverse (exact or approximate) of sigma_hat(lambda_n).
/// G_n = ((n-1)/n) sigma_hat(lambda_n) + (1-lambda_{n+1}) d d^T/(n+1) is the
/// rank-one-updated part of the split, so the same SMW form applies with the
/// (1 - lambda_{n+1}) scaling. Undefined at lambda_{n+1} == 1 (the rank-one
/// coefficient vanishes together with the update denominator).
inline SymMat g_inverse_update(const SymMat& sigma_inv, const Vector& d,
                               long long n, double lambda_next) {
  if (!(lambda_next >= 0.0 && lambda_next <= 1.0)) {
    throw InvalidInputError("g_inverse_update: lambda_next must lie in [0, 1]");
  }
  if (lambda_next == 1.0) {
    throw DegenerateLambdaError(
        "g_inverse_update: lambda_next == 1 makes the update degenerate");
  }
  return detail::smw_scaled_update(sigma_inv, d, n, 1.0 - lambda_next);
}

/// Exact inverse of G + F from G^-1 via p sequential rank-one corrections,
/// one per column f_i of F against identity column e_i:
///
///   (M + f_i e_i^T)^-1 = M^-1 - M^-1 f_i e_i^T M^-1 / (1 + e_i^T M^-1 f_i)
///
/// Intermediates G + sum_{j<=i} f_j e_j^T are not symmetric, so the chain
/// runs on a general matrix; the final result is symmetric again.
inline SymMat exact_inverse_chain(const SymMat& g_inv, const SymMat& f) {
  const Eigen::Index p = g_inv.dim();
  if (f.dim() != p) {
    throw DimensionMismatchError("exact_inverse_chain: dimension mismatch");
  }
  Matrix m = g_inv.mat();
  for (Eigen::Index i = 0; i < p; ++i) {
    const Vector mf = m * f.mat().col(i);
    const double pivot = 1.0 + mf(i);
    if (!(std::abs(pivot) >= 1e-12)) {
      throw PivotBlowupError("exact_inverse_chain: pivot below 1e-12 at column " +
                             std::to_string(i));
    }
    m -= (mf * m.row(i)) / pivot;
  }
  return SymMat::symmetrized(m);
}

/// Correction scalar minimizing the reconstruction squared error
///
///   || (G^-1 - alpha G^-1 F G^-1) sigma - I ||_F^2
///
/// over alpha. With A = G^-1 sigma - I and B = (G^-1 F)(G^-1 sigma) the
/// minimizer is the Frobenius inner product ratio <B, A> / ||B||_F^2.
/// F == 0 (zero curvature) yields alpha = 0.
inline double alpha_opt(const SymMat& g_inv, const SymMat& f,
                        const SymMat& sigma_next) {
  const Matrix gs = matmul(g_inv, sigma_next);
  const Matrix b = matmul(matmul(g_inv, f), gs);
  const double den = b.squaredNorm();
  if (den < 1e-300) return 0.0;
  Matrix a = gs;
  a.diagonal().array() -= 1.0;
  return inner(b, a) / den;
}

/// alpha for the simplified split F_tilde = f_scale * I, in the factored
/// form with M2 = G^-2:
///
///   alpha' = <M2 sigma, G^-1 sigma - I> / (f_scale ||M2 sigma||_F^2)
///
/// f_scale == 0 (no diagonal correction at all) yields alpha' = 0.
inline double alpha_opt_simplified(const SymMat& g_inv, double f_scale,
                                   const SymMat& sigma_next) {
  const SymMat g2 = SymMat::symmetrized(matmul(g_inv, g_inv));
  const Matrix m2s = matmul(g2, sigma_next);
  const double den = f_scale * m2s.squaredNorm();
  if (!(std::abs(den) >= 1e-300)) return 0.0;
  Matrix a = matmul(g_inv, sigma_next);
  a.diagonal().array() -= 1.0;
  return inner(m2s, a) / den;
}

/// (1/p) || inv * sigma_hat - I ||_F^2, the quality metric for tracked
/// inverses; the 1/p makes a zero matrix score exactly 1.
inline double reconstruction_error(const SymMat& inv, const SymMat& sigma_hat) {
  if (inv.dim() != sigma_hat.dim()) {
    throw DimensionMismatchError("reconstruction_error: dimension mismatch");
  }
  Matrix r = matmul(inv, sigma_hat);
  r.diagonal().array() -= 1.0;
  return r.squaredNorm() / static_cast<double>(inv.dim());
}

/// First-approximation step: SMW G update on the tracked inverse, then a
/// single alpha-weighted correction through the full F,
///
///   inv_{n+1} = G~^-1 - alpha_n G~^-1 F_n G~^-1.
inline InverseState approx1_step(const InverseState& state, const Vector& d,
                                 long long n, double lambda_now,
                                 double lambda_next, const shrink::GFSplit& gf,
                                 const SymMat& sigma_next) {
  if (state.variant != Variant::approx1) {
    throw InvalidInputError("approx1_step: state variant is not approx1");
  }
  if (state.n != n) throw InvalidInputError("approx1_step: state/n mismatch");
  if (!(lambda_now >= 0.0 && lambda_now <= 1.0)) {
    throw InvalidInputError("approx1_step: lambda_now must lie in [0, 1]");
  }
  const SymMat g_inv = g_inverse_update(state.inv, d, n, lambda_next);
  const double alpha = alpha_opt(g_inv, gf.f, sigma_next);
  const SymMat corr =
      SymMat::symmetrized(matmul(matmul(g_inv, gf.f), g_inv.mat()));
  return InverseState{Variant::approx1, g_inv - alpha * corr, n + 1, alpha};
}

/// Second-approximation step: like approx1 but with the simplified
/// F_tilde = c I, whose sandwich collapses to c G~^-2,
///
///   inv_{n+1} = G~'^-1 - alpha'_n c G~'^-2.
inline InverseState approx2_step(const InverseState& state, const Vector& d,
                                 long long n, double lambda_next,
                                 const shrink::GFSplit& gf,
                                 const SymMat& sigma_next) {
  if (state.variant != Variant::approx2) {
    throw InvalidInputError("approx2_step: state variant is not approx2");
  }
  if (state.n != n) throw InvalidInputError("approx2_step: state/n mismatch");
  const SymMat g_inv = g_inverse_update(state.inv, d, n, lambda_next);
  const double c = gf.f_simplified;
  const double alpha = alpha_opt_simplified(g_inv, c, sigma_next);
  const SymMat g2 = SymMat::symmetrized(matmul(g_inv, g_inv));
  return InverseState{Variant::approx2, g_inv - (alpha * c) * g2, n + 1, alpha};
}

/// Exact step: SMW G update on the exact inverse followed by the full
/// rank-one chain through F. Keeps the tracked inverse algebraically exact.
inline InverseState exact_chain_step(const InverseState& state, const Vector& d,
                                     long long n, double lambda_next,
                                     const shrink::GFSplit& gf) {
  if (state.variant != Variant::exact_chain) {
    throw InvalidInputError("exact_chain_step: state variant is not exact_chain");
  }
  if (state.n != n) throw InvalidInputError("exact_chain_step: state/n mismatch");
  const SymMat g_inv = g_inverse_update(state.inv, d, n, lambda_next);
  return InverseState{Variant::exact_chain, exact_inverse_chain(g_inv, gf.f),
                      n + 1, std::nullopt};
}

/// Seeds the recursion with one direct SPD inversion of the current
/// sigma_hat(lambda_n). All later steps are update-only.
inline InverseState init_inverse(const stream::StreamState& stream_state,
                                 const shrink::ShrinkState& shrink_state,
                                 Variant variant) {
  if (stream_state.n != shrink_state.n) {
    throw InvalidInputError("init_inverse: stream and shrink states disagree on n");
  }
  if (stream_state.n < 2) {
    throw NotPositiveDefiniteError("init_inverse: need n >= 2 to seed");
  }
  if (!(trace(stream_state.cov) > 0.0)) {
    throw NotPositiveDefiniteError("init_inverse: trace(S_n) must be positive");
  }
  return InverseState{variant, inv_spd(shrink_state.sigma_hat), stream_state.n,
                      std::nullopt};
}

}  // namespace shrinkcov::invupd
