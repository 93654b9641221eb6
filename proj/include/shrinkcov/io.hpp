#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "json.hpp"
#include "shrinkcov/errors.hpp"
#include "shrinkcov/invupd.hpp"
#include "shrinkcov/sim.hpp"

namespace shrinkcov::io {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kRngTag = "mt19937_64-seedseq";
inline constexpr std::string_view kSummaryHeader =
    "variant,n,median,q25,q75,whisker_lo,whisker_hi,n_outliers,mean,diverged_count";
inline constexpr std::string_view kRawHeader = "variant,trial,n,error,diverged_at";

/// Shortest decimal representation that parses back to exactly the same
/// double. All numeric output funnels through here so that serialized
/// results are byte-stable and lossless.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw InvalidInputError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw InvalidInputError("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

inline std::optional<invupd::Variant> variant_from_name(std::string_view name) {
  if (name == "exact_chain") return invupd::Variant::exact_chain;
  if (name == "approx1") return invupd::Variant::approx1;
  if (name == "approx2") return invupd::Variant::approx2;
  return std::nullopt;
}

inline std::string variant_list_string(std::span<const invupd::Variant> vs) {
  std::string out;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (i) out += ',';
    out += invupd::variant_name(vs[i]);
  }
  return out;
}

/// Config echo embedded in every output. Deliberately excludes anything
/// that must not influence the bytes (thread count, output paths, clock).
inline std::string config_echo_line(const sim::ExperimentConfig& cfg) {
  std::string line = "# config p=" + std::to_string(cfg.p);
  line += " r=" + format_double(cfg.r);
  line += " n-max=" + std::to_string(cfg.n_max);
  line += " reps=" + std::to_string(cfg.reps);
  line += " seed=" + std::to_string(cfg.seed);
  line += " lambda=" + std::string(sim::lambda_mode_name(cfg.lambda_mode));
  line += " variants=" + variant_list_string(cfg.variants);
  line += " divergence-threshold=" +
          format_double(cfg.effective_divergence_threshold());
  line += " rng=" + std::string(kRngTag);
  return line;
}

inline void write_summary_csv(std::ostream& os, const std::string& config_line,
                              std::span<const sim::VariantSummary> summaries) {
  os << "# shrinkcov summary " << kToolVersion << "\n";
  if (!config_line.empty()) os << config_line << "\n";
  os << kSummaryHeader << "\n";
  for (const sim::VariantSummary& vs : summaries) {
    for (const sim::SummaryRow& row : vs.rows) {
      os << invupd::variant_name(vs.variant) << ',' << row.n << ','
         << format_double(row.box.median) << ',' << format_double(row.box.q25)
         << ',' << format_double(row.box.q75) << ','
         << format_double(row.box.whisker_low) << ','
         << format_double(row.box.whisker_high) << ','
         << row.box.outliers.size() << ',' << format_double(row.mean) << ','
         << row.diverged_count << "\n";
    }
  }
}

/// Raw per-trial records, variant-major then trial-major, so that reading
/// them back reproduces the exact aggregation order of run_experiment.
inline void write_raw_csv(std::ostream& os, const std::string& config_line,
                          std::span<const sim::TrialTrace> trials) {
  os << "# shrinkcov raw " << kToolVersion << "\n";
  if (!config_line.empty()) os << config_line << "\n";
  os << kRawHeader << "\n";
  if (trials.empty()) return;
  const std::size_t n_variants = trials.front().variants.size();
  for (std::size_t vi = 0; vi < n_variants; ++vi) {
    for (std::size_t t = 0; t < trials.size(); ++t) {
      const sim::VariantTrace& trace = trials[t].variants[vi];
      for (std::size_t k = 0; k < trace.errors.size(); ++k) {
        os << invupd::variant_name(trace.variant) << ',' << t << ','
           << (k + 2) << ',' << format_double(trace.errors[k]) << ','
           << trace.diverged_at << "\n";
      }
    }
  }
}

using json = nlohmann::json;

inline json metadata_json(const sim::ExperimentConfig& cfg,
                          std::string_view kind, std::string timestamp) {
  json meta;
  meta["tool"] = "shrinkcov";
  meta["version"] = std::string(kToolVersion);
  meta["kind"] = std::string(kind);
  meta["p"] = cfg.p;
  meta["r"] = cfg.r;
  meta["n_max"] = cfg.n_max;
  meta["reps"] = cfg.reps;
  meta["seed"] = cfg.seed;
  meta["lambda"] = sim::lambda_mode_name(cfg.lambda_mode);
  json vs = json::array();
  for (invupd::Variant v : cfg.variants) vs.push_back(invupd::variant_name(v));
  meta["variants"] = std::move(vs);
  meta["divergence_threshold"] = cfg.effective_divergence_threshold();
  meta["rng"] = std::string(kRngTag);
  if (!timestamp.empty()) meta["timestamp"] = std::move(timestamp);
  return meta;
}

inline json summary_json(json metadata,
                         std::span<const sim::VariantSummary> summaries) {
  json rows = json::array();
  for (const sim::VariantSummary& vs : summaries) {
    for (const sim::SummaryRow& row : vs.rows) {
      json r;
      r["variant"] = invupd::variant_name(vs.variant);
      r["n"] = row.n;
      r["median"] = row.box.median;
      r["q25"] = row.box.q25;
      r["q75"] = row.box.q75;
      r["whisker_lo"] = row.box.whisker_low;
      r["whisker_hi"] = row.box.whisker_high;
      r["n_outliers"] = row.box.outliers.size();
      r["mean"] = row.mean;
      r["diverged_count"] = row.diverged_count;
      rows.push_back(std::move(r));
    }
  }
  json out;
  out["metadata"] = std::move(metadata);
  out["rows"] = std::move(rows);
  return out;
}

inline json raw_json(json metadata, std::span<const sim::TrialTrace> trials) {
  json records = json::array();
  if (!trials.empty()) {
    const std::size_t n_variants = trials.front().variants.size();
    for (std::size_t vi = 0; vi < n_variants; ++vi) {
      for (std::size_t t = 0; t < trials.size(); ++t) {
        const sim::VariantTrace& trace = trials[t].variants[vi];
        for (std::size_t k = 0; k < trace.errors.size(); ++k) {
          json r;
          r["variant"] = invupd::variant_name(trace.variant);
          r["trial"] = t;
          r["n"] = k + 2;
          // JSON has no non-finite numbers; those entries become null.
          if (std::isfinite(trace.errors[k])) {
            r["error"] = trace.errors[k];
          } else {
            r["error"] = nullptr;
          }
          r["diverged_at"] = trace.diverged_at;
          records.push_back(std::move(r));
        }
      }
    }
  }
  json out;
  out["metadata"] = std::move(metadata);
  out["records"] = std::move(records);
  return out;
}

/// Raw records grouped back into per-variant trace lists, preserving file
/// order so downstream aggregation is bit-identical to the original run.
struct RawData {
  std::string config_line;
  json metadata;  // null unless parsed from JSON
  std::vector<std::pair<invupd::Variant, std::vector<sim::VariantTrace>>>
      segments;
};

namespace detail {

struct RawAccumulator {
  RawData data;
  invupd::Variant cur_variant = invupd::Variant::approx1;
  long long cur_trial = -1;
  bool has_current = false;

  std::vector<sim::VariantTrace>& variant_bucket(invupd::Variant v) {
    for (auto& [variant, traces] : data.segments) {
      if (variant == v) return traces;
    }
    data.segments.emplace_back(v, std::vector<sim::VariantTrace>{});
    return data.segments.back().second;
  }

  void add(invupd::Variant v, long long trial, long long n, double error,
           long long diverged_at) {
    if (n < 2) throw InvalidInputError("raw record: n must be >= 2");
    auto& bucket = variant_bucket(v);
    if (!has_current || v != cur_variant || trial != cur_trial ||
        bucket.empty()) {
      bucket.push_back(sim::VariantTrace{v, {}, -1});
      cur_variant = v;
      cur_trial = trial;
      has_current = true;
    }
    sim::VariantTrace& trace = bucket.back();
    const std::size_t idx = static_cast<std::size_t>(n - 2);
    if (trace.errors.size() <= idx) {
      trace.errors.resize(idx + 1, std::numeric_limits<double>::quiet_NaN());
    }
    trace.errors[idx] = error;
    trace.diverged_at = static_cast<int>(diverged_at);
  }
};

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

}  // namespace detail

inline RawData read_raw_csv(std::istream& is) {
  detail::RawAccumulator acc;
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (acc.data.config_line.empty() && line.rfind("# config", 0) == 0) {
        acc.data.config_line = line;
      }
      continue;
    }
    if (line == kRawHeader) {
      saw_header = true;
      continue;
    }
    if (!saw_header) {
      throw InvalidInputError("raw input: expected header '" +
                              std::string(kRawHeader) + "' before data (line " +
                              std::to_string(lineno) + ")");
    }
    const auto fields = detail::split_csv(line);
    if (fields.size() != 5) {
      throw InvalidInputError("raw input: expected 5 fields on line " +
                              std::to_string(lineno));
    }
    const auto variant = variant_from_name(fields[0]);
    if (!variant) {
      throw InvalidInputError("raw input: unknown variant '" +
                              std::string(fields[0]) + "' on line " +
                              std::to_string(lineno));
    }
    acc.add(*variant, parse_int(fields[1]), parse_int(fields[2]),
            parse_double(fields[3]), parse_int(fields[4]));
  }
  if (!saw_header) {
    throw InvalidInputError("raw input: no data (missing header)");
  }
  return std::move(acc.data);
}

inline RawData read_raw_json(const json& j) {
  if (!j.is_object() || !j.contains("records") || !j["records"].is_array()) {
    throw InvalidInputError("raw input: missing 'records' array");
  }
  detail::RawAccumulator acc;
  if (j.contains("metadata")) acc.data.metadata = j["metadata"];
  for (const json& r : j["records"]) {
    const auto variant = variant_from_name(r.at("variant").get<std::string>());
    if (!variant) throw InvalidInputError("raw input: unknown variant");
    const json& err = r.at("error");
    const double e = err.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                   : err.get<double>();
    acc.add(*variant, r.at("trial").get<long long>(),
            r.at("n").get<long long>(), e,
            r.at("diverged_at").get<long long>());
  }
  return std::move(acc.data);
}

inline std::vector<sim::VariantSummary> summarize_raw(const RawData& raw) {
  std::vector<sim::VariantSummary> out;
  out.reserve(raw.segments.size());
  for (const auto& [variant, traces] : raw.segments) {
    out.push_back(sim::summarize_variant(variant, traces));
  }
  return out;
}

}  // namespace shrinkcov::io
