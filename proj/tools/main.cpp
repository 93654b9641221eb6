// shrinkcov command line: `simulate` runs the AR(1) Monte-Carlo benchmark,
// `stream` folds a CSV of observations through the estimator, `summarize`
// re-aggregates raw trial records into box-plot tables.

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shrinkcov/shrinkcov.hpp"

namespace {

namespace sc = shrinkcov;

int log_verbosity() {
  const char* env = std::getenv("SHRINKCOV_LOG");
  if (!env) return 0;
  const std::string_view v(env);
  if (v == "debug") return 2;
  if (v == "info") return 1;
  return 0;
}

std::string iso8601_utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Output sink: a file path, or stdout for "-".
class OutputTarget {
 public:
  explicit OutputTarget(const std::string& path) {
    if (path != "-") {
      file_.open(path, std::ios::out | std::ios::trunc);
      if (!file_) throw sc::Error("cannot open output file '" + path + "'");
    }
  }
  std::ostream& os() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

std::string read_all(const std::string& path) {
  std::ostringstream ss;
  if (path == "-") {
    ss << std::cin.rdbuf();
  } else {
    std::ifstream f(path);
    if (!f) throw sc::Error("cannot open input file '" + path + "'");
    ss << f.rdbuf();
  }
  return ss.str();
}

std::vector<sc::invupd::Variant> parse_variants(const std::string& list) {
  std::vector<sc::invupd::Variant> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t comma = list.find(',', start);
    const std::string name =
        list.substr(start, comma == std::string::npos ? list.size() - start
                                                      : comma - start);
    const auto v = sc::io::variant_from_name(name);
    if (!v) {
      throw sc::InvalidInputError(
          "unknown variant '" + name +
          "' (expected approx1, approx2 or exact_chain)");
    }
    out.push_back(*v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

struct SimulateArgs {
  long long p = 50;
  double r = 0.5;
  int n_max = 30;
  int reps = 200;
  std::uint64_t seed = 1;
  std::string variants = "approx1,approx2";
  std::string lambda = "estimate";
  std::string out = "csv";
  std::string raw_path;
  int threads = 0;
  double divergence_threshold = 0.0;
  std::string output_path = "-";
};

int run_simulate(const SimulateArgs& args) {
  sc::sim::ExperimentConfig cfg;
  try {
    cfg.p = static_cast<Eigen::Index>(args.p);
    cfg.r = args.r;
    cfg.n_max = args.n_max;
    cfg.reps = args.reps;
    cfg.seed = args.seed;
    cfg.variants = parse_variants(args.variants);
    cfg.lambda_mode = args.lambda == "oracle"
                          ? sc::sim::LambdaMode::oracle_plugin
                          : sc::sim::LambdaMode::sample_estimate;
    cfg.divergence_threshold = args.divergence_threshold;
    cfg.validate();
    if (args.threads < 0) {
      throw sc::InvalidInputError("--threads must be >= 0");
    }
  } catch (const sc::InvalidInputError& e) {
    std::cerr << "error: " << e.what() << "\n(run 'shrinkcov simulate --help' for usage)\n";
    return 2;
  }

  try {
    const std::string timestamp = iso8601_utc_now();
    const sc::sim::ExperimentResult result =
        sc::sim::run_experiment(cfg, args.threads);

    if (log_verbosity() >= 1) {
      for (const auto& vs : result.summaries) {
        std::cerr << "info: variant=" << sc::invupd::variant_name(vs.variant)
                  << " diverged_trials=" << vs.diverged_trials
                  << " outlier_or_diverged_trials="
                  << vs.outlier_or_diverged_trials << "\n";
      }
    }

    OutputTarget target(args.output_path);
    if (args.out == "json") {
      target.os() << sc::io::summary_json(
                         sc::io::metadata_json(cfg, "summary", timestamp),
                         result.summaries)
                         .dump(2)
                  << "\n";
    } else {
      sc::io::write_summary_csv(target.os(), sc::io::config_echo_line(cfg),
                                result.summaries);
    }

    if (!args.raw_path.empty()) {
      OutputTarget raw_target(args.raw_path);
      if (args.out == "json") {
        raw_target.os() << sc::io::raw_json(
                               sc::io::metadata_json(cfg, "raw", timestamp),
                               result.trials)
                               .dump(2)
                        << "\n";
      } else {
        sc::io::write_raw_csv(raw_target.os(), sc::io::config_echo_line(cfg),
                              result.trials);
      }
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      std::string_view f = line.substr(start, i - start);
      while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) {
        f.remove_prefix(1);
      }
      while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) {
        f.remove_suffix(1);
      }
      fields.push_back(f);
      start = i + 1;
    }
  }
  return fields;
}

std::vector<sc::Vector> parse_observations(std::istream& in) {
  std::vector<sc::Vector> rows;
  std::string line;
  std::size_t lineno = 0;
  Eigen::Index p = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_fields(line);
    if (p == 0) {
      p = static_cast<Eigen::Index>(fields.size());
    } else if (static_cast<Eigen::Index>(fields.size()) != p) {
      throw sc::InvalidInputError(
          "row " + std::to_string(lineno) + ": expected " + std::to_string(p) +
          " fields, got " + std::to_string(fields.size()));
    }
    sc::Vector x(p);
    for (Eigen::Index i = 0; i < p; ++i) {
      double v = 0.0;
      try {
        v = sc::io::parse_double(fields[i]);
      } catch (const sc::InvalidInputError&) {
        throw sc::InvalidInputError("row " + std::to_string(lineno) + ": " +
                                    std::string(fields[i].empty()
                                                    ? "empty field"
                                                    : "not a number '" +
                                                          std::string(fields[i]) +
                                                          "'"));
      }
      if (!std::isfinite(v)) {
        throw sc::InvalidInputError("row " + std::to_string(lineno) +
                                    ": non-finite value");
      }
      x(i) = v;
    }
    rows.push_back(std::move(x));
  }
  if (rows.empty()) throw sc::InvalidInputError("no observations");
  return rows;
}

void write_matrix_csv(const std::string& path, const sc::Matrix& m) {
  std::ofstream f(path, std::ios::out | std::ios::trunc);
  if (!f) throw sc::Error("cannot open output file '" + path + "'");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) f << ',';
      f << sc::io::format_double(m(i, j));
    }
    f << "\n";
  }
}

struct StreamArgs {
  std::string input = "-";
  std::string variant = "approx2";
  std::string output_prefix = "shrinkcov-stream";
};

int run_stream(const StreamArgs& args) {
  sc::invupd::Variant variant = sc::invupd::Variant::approx2;
  if (const auto v = sc::io::variant_from_name(args.variant)) {
    variant = *v;
  } else {
    std::cerr << "error: unknown variant '" << args.variant
              << "'\n(run 'shrinkcov stream --help' for usage)\n";
    return 2;
  }

  try {
    const int verbosity = log_verbosity();
    const std::string content = read_all(args.input);
    std::istringstream ss(content);
    const std::vector<sc::Vector> rows = parse_observations(ss);
    const Eigen::Index p = rows.front().size();

    sc::stream::StreamState st = sc::stream::init(p);
    sc::shrink::ShrinkState sh;
    bool have_sh = false;
    std::optional<sc::invupd::InverseState> inv;
    int restarts = 0;
    double last_err = std::numeric_limits<double>::quiet_NaN();

    for (const sc::Vector& x : rows) {
      const sc::stream::Observation obs = sc::stream::observe(st, x);
      const long long n = obs.state.n;
      if (n >= 2) {
        double lambda_next = 1.0;
        try {
          lambda_next = sc::shrink::estimate_lambda(obs.state.cov, n);
        } catch (const sc::Error&) {
          // zero-variance data: the target equals the sample estimate and
          // the convention is full shrinkage.
        }
        sc::SymMat sigma_next;
        if (!have_sh) {
          sigma_next = sc::shrink::shrinkage_matrix(
              obs.state.cov, obs.state.target_scale, lambda_next);
        } else {
          const sc::shrink::GFSplit gf =
              sc::shrink::gf_split(sh, st, obs.innovation, lambda_next);
          sigma_next = gf.g + gf.f;
          if (inv) {
            try {
              switch (variant) {
                case sc::invupd::Variant::approx1:
                  inv = sc::invupd::approx1_step(*inv, obs.innovation, st.n,
                                                 sh.lambda, lambda_next, gf,
                                                 sigma_next);
                  break;
                case sc::invupd::Variant::approx2:
                  inv = sc::invupd::approx2_step(*inv, obs.innovation, st.n,
                                                 lambda_next, gf, sigma_next);
                  break;
                case sc::invupd::Variant::exact_chain:
                  inv = sc::invupd::exact_chain_step(*inv, obs.innovation,
                                                     st.n, lambda_next, gf);
                  break;
              }
            } catch (const sc::Error& e) {
              // Degenerate step (e.g. lambda_hat clamped to 1). Drop the
              // tracked inverse and re-seed from a direct inversion below.
              if (verbosity >= 1) {
                std::cerr << "info: update degenerated at n=" << n << " ("
                          << e.what() << "); re-seeding\n";
              }
              inv.reset();
              ++restarts;
            }
          }
        }
        if (!inv) {
          try {
            inv = sc::invupd::init_inverse(
                obs.state, sc::shrink::ShrinkState{lambda_next, sigma_next, n},
                variant);
            if (verbosity >= 1) std::cerr << "info: seeded inverse at n=" << n << "\n";
          } catch (const sc::Error&) {
            // not SPD yet; retry on a later observation
          }
        }
        if (inv) last_err = sc::invupd::reconstruction_error(inv->inv, sigma_next);
        if (verbosity >= 1) {
          std::cerr << "info: n=" << n << " lambda="
                    << sc::io::format_double(lambda_next) << " trace="
                    << sc::io::format_double(sc::trace(sigma_next))
                    << " reconstruction_error="
                    << sc::io::format_double(last_err) << "\n";
        }
        sh = sc::shrink::ShrinkState{lambda_next, sigma_next, n};
        have_sh = true;
      }
      st = obs.state;
    }

    const sc::SymMat sigma_final = have_sh ? sh.sigma_hat : sc::SymMat(p);
    if (!have_sh) {
      std::cerr << "warning: degenerate data (fewer than 2 observations); "
                   "estimate undefined\n";
    } else if (!(sc::trace(sigma_final) > 0.0)) {
      std::cerr << "warning: degenerate data (sample covariance has zero "
                   "trace); no inverse available\n";
    } else if (!inv) {
      std::cerr << "warning: estimate never became positive definite; no "
                   "inverse written\n";
    }

    const std::string sigma_path = args.output_prefix + ".sigma_hat.csv";
    write_matrix_csv(sigma_path, sigma_final.mat());
    std::string inverse_path = "none";
    if (inv) {
      inverse_path = args.output_prefix + ".inverse.csv";
      write_matrix_csv(inverse_path, inv->inv.mat());
    }

    std::cout << "stream: n=" << st.n << " p=" << p << " lambda="
              << sc::io::format_double(have_sh ? sh.lambda : 1.0) << " trace="
              << sc::io::format_double(sc::trace(sigma_final))
              << " reconstruction_error=" << sc::io::format_double(last_err)
              << " restarts=" << restarts << " sigma_hat=" << sigma_path
              << " inverse=" << inverse_path << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

struct SummarizeArgs {
  std::string input = "-";
  std::string out = "csv";
  std::string output_path = "-";
};

int run_summarize(const SummarizeArgs& args) {
  try {
    const std::string content = read_all(args.input);
    std::size_t first = content.find_first_not_of(" \t\r\n");
    sc::io::RawData raw;
    if (first != std::string::npos && content[first] == '{') {
      raw = sc::io::read_raw_json(sc::io::json::parse(content));
    } else {
      std::istringstream ss(content);
      raw = sc::io::read_raw_csv(ss);
    }
    const auto summaries = sc::io::summarize_raw(raw);

    OutputTarget target(args.output_path);
    if (args.out == "json") {
      sc::io::json meta = raw.metadata;
      if (meta.is_null()) {
        meta = sc::io::json{{"tool", "shrinkcov"},
                            {"version", std::string(sc::io::kToolVersion)}};
      }
      meta["kind"] = "summary";
      target.os() << sc::io::summary_json(std::move(meta), summaries).dump(2)
                  << "\n";
    } else {
      sc::io::write_summary_csv(target.os(), raw.config_line, summaries);
    }
    return 0;
  } catch (const sc::io::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming shrinkage covariance estimation benchmark"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  CLI::App* sim_cmd = app.add_subcommand(
      "simulate", "Monte-Carlo benchmark of the sequential inverse updates");
  sim_cmd->add_option("--p", sim_args.p, "Dimension (default 50)");
  sim_cmd->add_option("--r", sim_args.r, "AR(1) coefficient, |r| < 1 (default 0.5)");
  sim_cmd->add_option("--n-max", sim_args.n_max, "Observations per trial (default 30)");
  sim_cmd->add_option("--reps", sim_args.reps, "Trial repetitions (default 200)");
  sim_cmd->add_option("--seed", sim_args.seed, "RNG seed (default 1)");
  sim_cmd->add_option("--variants", sim_args.variants,
                      "Comma list of approx1,approx2,exact_chain");
  sim_cmd->add_option("--lambda", sim_args.lambda,
                      "Shrinkage coefficient source")
      ->check(CLI::IsMember({"estimate", "oracle"}));
  sim_cmd->add_option("--out", sim_args.out, "Output format")
      ->check(CLI::IsMember({"csv", "json"}));
  sim_cmd->add_option("--raw", sim_args.raw_path,
                      "Also write raw per-trial records to this path");
  sim_cmd->add_option("--threads", sim_args.threads,
                      "Worker threads (0 = hardware)");
  sim_cmd->add_option("--divergence-threshold", sim_args.divergence_threshold,
                      "Error level that flags a trial (0 = 10*p, inf disables)");
  sim_cmd->add_option("--output-path", sim_args.output_path,
                      "Summary destination ('-' = stdout)");

  StreamArgs stream_args;
  CLI::App* stream_cmd = app.add_subcommand(
      "stream", "Fold a CSV of observations through the estimator");
  stream_cmd->add_option("input", stream_args.input,
                         "CSV file of observation rows ('-' = stdin)");
  stream_cmd->add_option("--variant,--variants", stream_args.variant,
                         "Inverse variant to maintain (default approx2)");
  stream_cmd->add_option("--output-path", stream_args.output_prefix,
                         "Prefix for .sigma_hat.csv / .inverse.csv outputs");

  SummarizeArgs summarize_args;
  CLI::App* summarize_cmd = app.add_subcommand(
      "summarize", "Re-aggregate raw trial records into summary tables");
  summarize_cmd->add_option("input", summarize_args.input,
                            "Raw records from 'simulate --raw' ('-' = stdin)");
  summarize_cmd->add_option("--out", summarize_args.out, "Output format")
      ->check(CLI::IsMember({"csv", "json"}));
  summarize_cmd->add_option("--output-path", summarize_args.output_path,
                            "Summary destination ('-' = stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  if (sim_cmd->parsed()) return run_simulate(sim_args);
  if (stream_cmd->parsed()) return run_stream(stream_args);
  if (summarize_cmd->parsed()) return run_summarize(summarize_args);
  return 2;
}
