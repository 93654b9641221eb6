#pragma once

#include <algorithm>
#include <cmath>

#include "shrinkcov/linalg.hpp"
#include "shrinkcov/stream.hpp"

namespace shrinkcov::shrink {

/// Shrinkage coefficient and the forward shrinkage estimator
/// sigma_hat = (1 - lambda) S_n + lambda (Tr(S_n)/p) I at count n.
struct ShrinkState {
  double lambda = 0.0;
  SymMat sigma_hat;
  long long n = 0;
};

struct OracleLambda {
  double lambda = 0.0;
  /// ||T - S||_F was numerically zero (S exactly spherical); any lambda is
  /// optimal and 0 is returned by convention.
  bool degenerate = false;
};

/// Realized-value plug-in of the oracle coefficient: the MSE-minimizing
/// lambda with expectations dropped and the true covariance substituted,
///
///   lambda = clamp_[0,1]( <T - S, Sigma - S> / ||T - S||_F^2 ),  T = t I.
inline OracleLambda oracle_lambda_plugin(const SymMat& s, double target_scale,
                                         const SymMat& sigma_true) {
  if (s.dim() != sigma_true.dim()) {
    throw DimensionMismatchError("oracle_lambda_plugin: dimension mismatch");
  }
  const SymMat t_minus_s = SymMat::scaled_identity(s.dim(), target_scale) - s;
  const double denom = frob_norm2(t_minus_s);
  if (denom < 1e-300) return OracleLambda{0.0, true};
  const double num = inner(t_minus_s, sigma_true - s);
  return OracleLambda{std::clamp(num / denom, 0.0, 1.0), false};
}

/// Sample-based shrinkage coefficient in the oracle-approximating (OAS)
/// closed form of Chen, Wiesel, Eldar & Hero (2010), computable from the
/// streaming state alone:
///
///   lambda_hat = min(1, [ (1 - 2/p) Tr(S^2) + Tr(S)^2 ]
///                     / [ (n + 1 - 2/p) (Tr(S^2) - Tr(S)^2 / p) ])
///
/// A spherical S (zero denominator) yields lambda_hat = 1: the target
/// already equals the sample estimate, so full shrinkage is free.
inline double estimate_lambda(const SymMat& s, long long n) {
  if (n < 2) throw InvalidInputError("estimate_lambda: need n >= 2");
  const double tr_s = trace(s);
  if (!(tr_s > 0.0)) throw InvalidInputError("estimate_lambda: trace(S) must be positive");
  const double p = static_cast<double>(s.dim());
  const double tr_s2 = frob_norm2(s);  // Tr(S^2) for symmetric S
  const double num = (1.0 - 2.0 / p) * tr_s2 + tr_s * tr_s;
  const double den =
      (static_cast<double>(n) + 1.0 - 2.0 / p) * (tr_s2 - tr_s * tr_s / p);
  if (!(den > 0.0)) return 1.0;
  return std::clamp(num / den, 0.0, 1.0);
}

/// (1 - lambda) S + lambda t I.
inline SymMat shrinkage_matrix(const SymMat& s, double target_scale,
                               double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InvalidInputError("shrinkage_matrix: lambda must lie in [0, 1]");
  }
  return (1.0 - lambda) * s +
         SymMat::scaled_identity(s.dim(), lambda * target_scale);
}

inline ShrinkState make_state(const stream::StreamState& stream_state,
                              double lambda) {
  return ShrinkState{
      lambda,
      shrinkage_matrix(stream_state.cov, stream_state.target_scale, lambda),
      stream_state.n};
}

/// One-step split of the updated shrinkage estimator,
/// sigma_hat(lambda_{n+1}) = G_n + F_n, where G_n absorbs the rank-one
/// innovation (and stays SMW-invertible) and F_n carries the rest:
///
///   G_n = ((n-1)/n) sigma_hat(lambda_n) + (1 - lambda_{n+1}) d d^T/(n+1)
///   F_n = lambda_{n+1} ||d||^2 I / ((n+1) p)
///       + ((n-1)/n) (lambda_n - lambda_{n+1}) (S_n - t_n I)
///
/// f_simplified is the scale c of the diagonal first term alone
/// (F_tilde = c I), the simplification obtained by dropping the
/// (lambda_n - lambda_{n+1}) term.
struct GFSplit {
  SymMat g;
  SymMat f;
  double f_simplified = 0.0;
};

inline GFSplit gf_split(const ShrinkState& prev,
                        const stream::StreamState& stream_prev,
                        const Vector& d, double lambda_next) {
  if (stream_prev.n < 1) throw InvalidInputError("gf_split: need n >= 1");
  if (prev.n != stream_prev.n) {
    throw InvalidInputError("gf_split: shrink and stream states disagree on n");
  }
  const Eigen::Index p = stream_prev.dim();
  if (d.size() != p || prev.sigma_hat.dim() != p) {
    throw DimensionMismatchError("gf_split: dimension mismatch");
  }
  if (!(lambda_next >= 0.0 && lambda_next <= 1.0)) {
    throw InvalidInputError("gf_split: lambda_next must lie in [0, 1]");
  }

  const double n = static_cast<double>(stream_prev.n);
  const double decay = (n - 1.0) / n;

  GFSplit out;
  out.g = decay * prev.sigma_hat +
          ((1.0 - lambda_next) / (n + 1.0)) * self_outer(d);
  out.f_simplified =
      lambda_next * d.squaredNorm() / ((n + 1.0) * static_cast<double>(p));
  const SymMat s_minus_t =
      stream_prev.cov -
      SymMat::scaled_identity(p, stream_prev.target_scale);
  out.f = SymMat::scaled_identity(p, out.f_simplified) +
          (decay * (prev.lambda - lambda_next)) * s_minus_t;
  return out;
}

}  // namespace shrinkcov::shrink
