#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "shrinkcov/linalg.hpp"

namespace shrinkcov::stream {

/// Running state of the streaming moment estimators:
///
///   mean           m_n = (1/n) sum x_i
///   cov            S_n = (1/(n-1)) sum (x_i - m_n)(x_i - m_n)^T
///   target_scale   t_n = Tr(S_n) / p, the scale of the identity target
///
/// Conventions at the degenerate counts: n == 0 keeps zero sentinels for
/// mean and cov; n == 1 keeps cov at the zero matrix, which makes the
/// (n-1)/n recursion below exact from the first usable step.
struct StreamState {
  long long n = 0;
  Vector mean;
  SymMat cov;
  double target_scale = 0.0;

  Eigen::Index dim() const { return mean.size(); }
};

/// New state plus the innovation d_{n+1} = x_{n+1} - m_n that produced it.
/// Every downstream update rule consumes d, so it is returned rather than
/// recomputed.
struct Observation {
  StreamState state;
  Vector innovation;
};

inline StreamState init(Eigen::Index p) {
  if (p < 1) throw InvalidInputError("stream::init: p must be >= 1");
  return StreamState{0, Vector::Zero(p), SymMat(p), 0.0};
}

/// Folds one observation into the state:
///
///   m_{n+1} = m_n + d/(n+1)
///   S_{n+1} = ((n-1)/n) S_n + d d^T/(n+1)          (n >= 1)
///   t_{n+1} = ((n-1)/n) t_n + ||d||^2 / ((n+1) p)
inline Observation observe(const StreamState& state, const Vector& x) {
  const Eigen::Index p = state.dim();
  if (x.size() != p) {
    throw DimensionMismatchError("stream::observe: dimension mismatch");
  }
  if (!x.allFinite()) {
    throw InvalidInputError("stream::observe: non-finite observation entries");
  }

  const Vector d = x - state.mean;
  const double n = static_cast<double>(state.n);

  StreamState next;
  next.n = state.n + 1;
  next.mean = state.mean + d / (n + 1.0);
  if (state.n == 0) {
    next.cov = SymMat(p);
    next.target_scale = 0.0;
  } else {
    const double decay = (n - 1.0) / n;
    next.cov = decay * state.cov + (1.0 / (n + 1.0)) * self_outer(d);
    next.target_scale =
        decay * state.target_scale +
        d.squaredNorm() / ((n + 1.0) * static_cast<double>(p));
  }
  return Observation{std::move(next), d};
}

inline Vector batch_mean(std::span<const Vector> samples) {
  if (samples.empty()) throw InvalidInputError("batch_mean: no samples");
  Vector sum = Vector::Zero(samples.front().size());
  for (const Vector& x : samples) {
    if (x.size() != sum.size()) {
      throw DimensionMismatchError("batch_mean: ragged samples");
    }
    sum += x;
  }
  return sum / static_cast<double>(samples.size());
}

/// Two-pass unbiased sample covariance; requires n >= 2.
inline SymMat batch_cov(std::span<const Vector> samples) {
  if (samples.size() < 2) {
    throw InvalidInputError("batch_cov: need at least 2 samples");
  }
  const Vector mean = batch_mean(samples);
  Matrix acc = Matrix::Zero(mean.size(), mean.size());
  for (const Vector& x : samples) {
    const Vector c = x - mean;
    acc += c * c.transpose();
  }
  return SymMat::symmetrized(acc / static_cast<double>(samples.size() - 1));
}

/// The restricted target (Tr(S)/p) I.
inline SymMat batch_target(const SymMat& cov) {
  return SymMat::scaled_identity(cov.dim(),
                                 trace(cov) / static_cast<double>(cov.dim()));
}

}  // namespace shrinkcov::stream
