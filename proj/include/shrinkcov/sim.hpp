#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <thread>
#include <vector>

#include "shrinkcov/invupd.hpp"
#include "shrinkcov/linalg.hpp"
#include "shrinkcov/shrink.hpp"
#include "shrinkcov/stream.hpp"

namespace shrinkcov::sim {

enum class LambdaMode { oracle_plugin, sample_estimate };

inline const char* lambda_mode_name(LambdaMode m) {
  return m == LambdaMode::oracle_plugin ? "oracle" : "estimate";
}

struct ExperimentConfig {
  Eigen::Index p = 50;
  double r = 0.5;
  int n_max = 30;
  int reps = 200;
  std::uint64_t seed = 1;
  std::vector<invupd::Variant> variants = {invupd::Variant::approx1,
                                           invupd::Variant::approx2};
  LambdaMode lambda_mode = LambdaMode::sample_estimate;
  /// <= 0 selects the default 10 * p; +inf disables flagging entirely.
  double divergence_threshold = 0.0;

  double effective_divergence_threshold() const {
    return divergence_threshold > 0.0 ? divergence_threshold
                                      : 10.0 * static_cast<double>(p);
  }

  void validate() const {
    if (p < 1) throw InvalidInputError("config: p must be >= 1");
    if (!(std::abs(r) < 1.0)) {
      throw InvalidInputError("config: AR coefficient must satisfy |r| < 1");
    }
    if (n_max < 2) throw InvalidInputError("config: n_max must be >= 2");
    if (reps < 1) throw InvalidInputError("config: reps must be >= 1");
    if (variants.empty()) throw InvalidInputError("config: no variants selected");
    for (std::size_t i = 0; i < variants.size(); ++i) {
      for (std::size_t j = i + 1; j < variants.size(); ++j) {
        if (variants[i] == variants[j]) {
          throw InvalidInputError("config: duplicate variant");
        }
      }
    }
    if (std::isnan(divergence_threshold)) {
      throw InvalidInputError("config: divergence threshold is NaN");
    }
  }
};

/// Covariance of a stationary AR(1) process: entries r^|i-j|, unit diagonal.
inline SymMat ar1_cov(Eigen::Index p, double r) {
  if (!(std::abs(r) < 1.0)) {
    throw InvalidInputError("ar1_cov: AR coefficient must satisfy |r| < 1");
  }
  std::vector<double> powers(static_cast<std::size_t>(p));
  powers[0] = 1.0;
  for (Eigen::Index k = 1; k < p; ++k) powers[k] = powers[k - 1] * r;
  Matrix m(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) m(i, j) = powers[std::abs(i - j)];
  }
  return SymMat::symmetrized(m);
}

/// Per-variant error trace of a single trial. errors[k] is the
/// reconstruction error at count n = k + 2 (traces start at the seeding
/// step); entries are NaN once a variant's recursion has failed hard.
/// diverged_at is the first n at which the variant was flagged (error above
/// threshold, a degenerate update, or non-finite arithmetic), -1 if never.
struct VariantTrace {
  invupd::Variant variant = invupd::Variant::approx1;
  std::vector<double> errors;
  int diverged_at = -1;

  bool diverged() const { return diverged_at >= 0; }
};

struct TrialTrace {
  std::vector<VariantTrace> variants;
};

namespace detail {

inline std::mt19937_64 trial_rng(std::uint64_t seed, int trial_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial_index), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

inline double next_lambda(const ExperimentConfig& cfg,
                          const stream::StreamState& state,
                          const SymMat& sigma_true) {
  if (cfg.lambda_mode == LambdaMode::oracle_plugin) {
    // Recompute the target scale from S itself so an exactly spherical
    // sample (always the case at p = 1) is detected as degenerate instead
    // of leaving rounding noise in T - S.
    const double t = trace(state.cov) / static_cast<double>(state.dim());
    return shrink::oracle_lambda_plugin(state.cov, t, sigma_true).lambda;
  }
  return shrink::estimate_lambda(state.cov, state.n);
}

}  // namespace detail

/// Runs one trial: n_max i.i.d. zero-mean Gaussian draws with AR(1)
/// covariance, folded through the stream / shrinkage / inverse-update
/// pipeline, recording each variant's reconstruction error against the
/// sequentially maintained sigma_hat(lambda_n). Deterministic given
/// (seed, trial_index). Degeneracies never escape: they set divergence
/// flags and the trial keeps going.
inline TrialTrace run_trial(const ExperimentConfig& cfg, int trial_index) {
  cfg.validate();
  const SymMat sigma = ar1_cov(cfg.p, cfg.r);
  const CholFactor chol = cholesky(sigma);
  std::mt19937_64 rng = detail::trial_rng(cfg.seed, trial_index);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double threshold = cfg.effective_divergence_threshold();
  const std::size_t trace_len = static_cast<std::size_t>(cfg.n_max - 1);
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  TrialTrace trial;
  trial.variants.reserve(cfg.variants.size());
  for (invupd::Variant v : cfg.variants) {
    trial.variants.push_back(
        VariantTrace{v, std::vector<double>(trace_len, kNaN), -1});
  }
  std::vector<std::optional<invupd::InverseState>> states(cfg.variants.size());

  auto flag = [&](std::size_t i, int n) {
    if (trial.variants[i].diverged_at < 0) trial.variants[i].diverged_at = n;
  };

  stream::StreamState st = stream::init(cfg.p);
  shrink::ShrinkState sh;
  Vector z(cfg.p);
  bool pipeline_dead = false;

  for (int k = 1; k <= cfg.n_max; ++k) {
    for (Eigen::Index i = 0; i < cfg.p; ++i) z(i) = gauss(rng);
    stream::Observation obs = stream::observe(st, sample_gaussian(chol, z));
    const int n_now = static_cast<int>(obs.state.n);

    if (n_now >= 2 && !pipeline_dead) {
      double lambda_next = 0.0;
      SymMat sigma_next;
      try {
        lambda_next = detail::next_lambda(cfg, obs.state, sigma);
        if (n_now == 2) {
          sigma_next = shrink::shrinkage_matrix(
              obs.state.cov, obs.state.target_scale, lambda_next);
        } else {
          const shrink::GFSplit gf =
              shrink::gf_split(sh, st, obs.innovation, lambda_next);
          sigma_next = gf.g + gf.f;
          for (std::size_t i = 0; i < states.size(); ++i) {
            if (!states[i]) continue;
            try {
              switch (cfg.variants[i]) {
                case invupd::Variant::approx1:
                  states[i] = invupd::approx1_step(*states[i], obs.innovation,
                                                   st.n, sh.lambda, lambda_next,
                                                   gf, sigma_next);
                  break;
                case invupd::Variant::approx2:
                  states[i] = invupd::approx2_step(*states[i], obs.innovation,
                                                   st.n, lambda_next, gf,
                                                   sigma_next);
                  break;
                case invupd::Variant::exact_chain:
                  states[i] = invupd::exact_chain_step(
                      *states[i], obs.innovation, st.n, lambda_next, gf);
                  break;
              }
            } catch (const Error&) {
              states[i].reset();
              flag(i, n_now);
            }
          }
        }
      } catch (const Error&) {
        // lambda or split degenerated; nothing downstream can proceed.
        for (std::size_t i = 0; i < states.size(); ++i) flag(i, n_now);
        pipeline_dead = true;
      }

      if (!pipeline_dead) {
        if (n_now == 2) {
          const shrink::ShrinkState seed_state{lambda_next, sigma_next, 2};
          for (std::size_t i = 0; i < states.size(); ++i) {
            try {
              states[i] =
                  invupd::init_inverse(obs.state, seed_state, cfg.variants[i]);
            } catch (const Error&) {
              flag(i, 2);
            }
          }
        }
        const std::size_t idx = static_cast<std::size_t>(n_now - 2);
        for (std::size_t i = 0; i < states.size(); ++i) {
          if (!states[i]) continue;
          const double e =
              invupd::reconstruction_error(states[i]->inv, sigma_next);
          trial.variants[i].errors[idx] = e;
          if (!std::isfinite(e)) {
            states[i].reset();
            flag(i, n_now);
          } else if (e > threshold) {
            flag(i, n_now);
          }
        }
        sh = shrink::ShrinkState{lambda_next, sigma_next, obs.state.n};
      }
    }
    st = std::move(obs.state);
  }
  return trial;
}

/// Five-number box-plot summary. Quartiles use the linear-interpolation
/// order-statistic rule; whiskers sit on the most extreme data points
/// within 1.5 IQR of the quartile box (about +/-2.7 sigma, 99.3% coverage,
/// for normal data); everything beyond is listed as an outlier.
struct BoxSummary {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  std::vector<double> outliers;
};

inline BoxSummary box_summary(std::vector<double> values) {
  if (values.empty()) throw InvalidInputError("box_summary: empty input");
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw InvalidInputError("box_summary: non-finite value");
    }
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  auto quantile = [&](double q) {
    const double h = static_cast<double>(n - 1) * q;
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= n) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
  };

  BoxSummary b;
  b.q25 = quantile(0.25);
  b.median = quantile(0.5);
  b.q75 = quantile(0.75);
  const double iqr = b.q75 - b.q25;
  const double lo_fence = b.q25 - 1.5 * iqr;
  const double hi_fence = b.q75 + 1.5 * iqr;

  std::size_t first = 0;
  while (values[first] < lo_fence) ++first;
  std::size_t last = n - 1;
  while (values[last] > hi_fence) --last;
  b.whisker_low = values[first];
  b.whisker_high = values[last];
  b.outliers.reserve(first + (n - 1 - last));
  for (std::size_t i = 0; i < first; ++i) b.outliers.push_back(values[i]);
  for (std::size_t i = last + 1; i < n; ++i) b.outliers.push_back(values[i]);
  return b;
}

/// Aggregated (variant, n) row: box statistics plus the mean over the
/// finite errors, how many trials contributed, and how many had been
/// flagged diverged by this n.
struct SummaryRow {
  int n = 0;
  BoxSummary box;
  double mean = 0.0;
  int sample_count = 0;
  int diverged_count = 0;
};

struct VariantSummary {
  invupd::Variant variant = invupd::Variant::approx1;
  std::vector<SummaryRow> rows;
  int diverged_trials = 0;
  int outlier_or_diverged_trials = 0;
};

/// Deterministic reduction of per-trial traces (in the given order) into
/// per-n box summaries. Rows where no finite value survives are emitted
/// with NaN statistics rather than dropped.
inline VariantSummary summarize_variant(invupd::Variant variant,
                                        std::span<const VariantTrace> traces) {
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  VariantSummary out;
  out.variant = variant;

  std::size_t n_len = 0;
  for (const VariantTrace& t : traces) n_len = std::max(n_len, t.errors.size());

  out.rows.reserve(n_len);
  for (std::size_t k = 0; k < n_len; ++k) {
    SummaryRow row;
    row.n = static_cast<int>(k) + 2;
    std::vector<double> values;
    values.reserve(traces.size());
    double sum = 0.0;
    for (const VariantTrace& t : traces) {
      if (k < t.errors.size() && std::isfinite(t.errors[k])) {
        values.push_back(t.errors[k]);
        sum += t.errors[k];
      }
      if (t.diverged_at >= 0 && t.diverged_at <= row.n) ++row.diverged_count;
    }
    row.sample_count = static_cast<int>(values.size());
    if (values.empty()) {
      row.box = BoxSummary{kNaN, kNaN, kNaN, kNaN, kNaN, {}};
      row.mean = kNaN;
    } else {
      row.mean = sum / static_cast<double>(values.size());
      row.box = box_summary(std::move(values));
    }
    out.rows.push_back(std::move(row));
  }

  for (const VariantTrace& t : traces) {
    bool outlier = false;
    for (std::size_t k = 0; k < t.errors.size() && k < n_len; ++k) {
      const double e = t.errors[k];
      if (std::isfinite(e) && (e < out.rows[k].box.whisker_low ||
                               e > out.rows[k].box.whisker_high)) {
        outlier = true;
        break;
      }
    }
    if (t.diverged()) ++out.diverged_trials;
    if (t.diverged() || outlier) ++out.outlier_or_diverged_trials;
  }
  return out;
}

struct ExperimentResult {
  std::vector<TrialTrace> trials;
  std::vector<VariantSummary> summaries;
};

/// Runs cfg.reps independent trials (parallel across up to `threads`
/// workers; 0 picks the hardware count) and aggregates them. Per-trial RNG
/// streams are derived from (seed, trial index) and aggregation order is
/// fixed, so results are identical for any thread count.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       int threads = 0) {
  cfg.validate();
  ExperimentResult result;
  result.trials.resize(static_cast<std::size_t>(cfg.reps));

  int workers = threads > 0
                    ? threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, cfg.reps);

  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= cfg.reps) return;
      try {
        result.trials[static_cast<std::size_t>(i)] = run_trial(cfg, i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  result.summaries.reserve(cfg.variants.size());
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    std::vector<VariantTrace> column;
    column.reserve(result.trials.size());
    for (const TrialTrace& t : result.trials) column.push_back(t.variants[vi]);
    result.summaries.push_back(summarize_variant(cfg.variants[vi], column));
  }
  return result;
}

}  // namespace shrinkcov::sim
