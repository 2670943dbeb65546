#pragma once

// Experiment sweeps over generation parameters, per-trial records, CSV
// persistence, summaries and the instance file format.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <mutex>
#include <thread>

#include "spore/baselines.hpp"
#include "spore/metrics.hpp"

namespace spore {

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

/// Parses RFC-4180 style text: quoted fields may contain commas, doubled
/// quotes and line breaks.
inline std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && in.peek() == '\n') in.get();
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw std::runtime_error("CSV ends inside a quoted field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Writes through a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write output file: " + path.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string join_vector(const Vector& v, char sep = ';') {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += format_double(v[i]);
  }
  return s;
}

inline Vector parse_vector(const std::string& key, const std::string& text, char sep = ';') {
  const auto parts = split(text, sep);
  Vector v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i) v[static_cast<Eigen::Index>(i)] = parse_double(key, parts[i]);
  return v;
}

inline std::string format_metric(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

inline double parse_metric(const std::string& key, const std::string& s) {
  return s == "nan" ? kNaN : parse_double(key, s);
}

// ---------------------------------------------------------------------------
// experiment configuration

/// Matrix text: rows separated by ';', entries by ','.
inline Matrix parse_matrix(const std::string& key, const std::string& text) {
  const auto rows = split(text, ';');
  std::vector<Vector> parsed;
  for (const auto& r : rows) parsed.push_back(parse_vector(key, r, ','));
  require(!parsed.empty() && parsed.front().size() > 0, "key '" + key + "': empty matrix");
  Matrix m(static_cast<Eigen::Index>(parsed.size()), parsed.front().size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    require(parsed[i].size() == m.cols(), "key '" + key + "': ragged matrix rows");
    m.row(static_cast<Eigen::Index>(i)) = parsed[i].transpose();
  }
  return m;
}

struct SweepAxes {
  std::vector<int> n_dims, sparsity, n_sensors, n_groups, n_observations;
  std::vector<double> rate_total, noise_variance;
};

struct ExperimentConfig {
  SweepAxes axes;
  std::vector<std::string> algorithms;
  int n_trials = 10;
  std::uint64_t seed = 0;
  std::string output;                 // CSV path; empty means no file
  std::optional<Vector> fixed_rates;  // optional fixed lambda*
  std::optional<Matrix> fixed_phi;    // optional fixed single sensing matrix
  AlgorithmSettings settings;

  void validate() const {
    require(n_trials >= 0, "n_trials must be nonnegative");
    require(!algorithms.empty(), "no algorithms requested");
    for (const auto& a : algorithms) require(is_algorithm(a), "unknown algorithm id: " + a);
    if (fixed_phi) {
      for (int m : axes.n_sensors) require(m == fixed_phi->rows(), "fixed phi row count differs from n_sensors");
      for (int n : axes.n_dims) require(n == fixed_phi->cols(), "fixed phi column count differs from n_dims");
      for (int g : axes.n_groups) require(g == 1, "fixed phi needs n_groups = 1");
    }
    if (fixed_rates)
      for (int n : axes.n_dims) require(n == fixed_rates->size(), "fixed rates length differs from n_dims");
  }

  /// Keys: the GenerationConfig names (any may be a comma list), algorithms,
  /// n_trials, seed, output, optional rates / phi, and solver overrides
  /// prefixed `spore.` and `alternating.`.
  static ExperimentConfig from_kv(const KeyValueFile& kv) {
    ExperimentConfig c;
    const GenerationConfig defaults;
    auto ints = [&](const char* key, int fallback) {
      std::vector<int> v;
      if (!kv.has(key)) return std::vector<int>{fallback};
      for (const auto& s : kv.get_list(key)) v.push_back(static_cast<int>(parse_int(key, s)));
      return v;
    };
    auto doubles = [&](const char* key, double fallback) {
      std::vector<double> v;
      if (!kv.has(key)) return std::vector<double>{fallback};
      for (const auto& s : kv.get_list(key)) v.push_back(parse_double(key, s));
      return v;
    };
    c.axes.n_dims = ints("n_dims", defaults.n_dims);
    c.axes.sparsity = ints("sparsity", defaults.sparsity);
    c.axes.rate_total = doubles("rate_total", defaults.rate_total);
    c.axes.n_sensors = ints("n_sensors", defaults.n_sensors);
    c.axes.n_groups = ints("n_groups", defaults.n_groups);
    c.axes.n_observations = ints("n_observations", defaults.n_observations);
    c.axes.noise_variance = doubles("noise_variance", defaults.noise_variance);
    c.algorithms = kv.has("algorithms") ? kv.get_list("algorithms") : std::vector<std::string>{"spore"};
    c.n_trials = static_cast<int>(kv.get_int("n_trials", 10));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    if (kv.has("output")) c.output = kv.get("output");
    if (kv.has("rates")) c.fixed_rates = parse_vector("rates", kv.get("rates"), ',');
    if (kv.has("phi")) c.fixed_phi = parse_matrix("phi", kv.get("phi"));
    c.settings.spore.apply_kv(kv, "spore.");
    c.settings.alternating.max_rounds =
        static_cast<int>(kv.get_int("alternating.max_rounds", c.settings.alternating.max_rounds));
    c.settings.alternating.rate_floor = kv.get_double("alternating.rate_floor", c.settings.alternating.rate_floor);
    if (kv.has("alternating.x_max")) c.settings.alternating.x_max = static_cast<int>(kv.get_int("alternating.x_max"));
    c.validate();
    return c;
  }

  /// Cartesian product of the axes; the last axis varies fastest.
  std::vector<GenerationConfig> grid() const {
    std::vector<GenerationConfig> out;
    for (int n : axes.n_dims)
      for (int k : axes.sparsity)
        for (double rt : axes.rate_total)
          for (int m : axes.n_sensors)
            for (int g : axes.n_groups)
              for (int d : axes.n_observations)
                for (double s2 : axes.noise_variance) {
                  GenerationConfig gc;
                  gc.n_dims = n;
                  gc.sparsity = k;
                  gc.rate_total = rt;
                  gc.n_sensors = m;
                  gc.n_groups = g;
                  gc.n_observations = d;
                  gc.noise_variance = s2;
                  out.push_back(gc);
                }
    return out;
  }
};

/// Seed of one trial, derived from the base seed, the grid coordinates (by
/// value, so adding grid points leaves other seeds alone) and the trial index.
inline std::uint64_t trial_seed(std::uint64_t base, const GenerationConfig& point, int trial) {
  GenerationConfig key = point;
  key.seed = 0;
  return hash_combine(hash_combine(base, hash_string(key.to_kv().to_string())), static_cast<std::uint64_t>(trial));
}

inline std::uint64_t algorithm_seed(std::uint64_t instance_seed, const std::string& id) {
  return hash_combine(instance_seed, hash_string(id));
}

// ---------------------------------------------------------------------------
// trial records

struct TrialRecord {
  int grid_index = 0;
  int trial = 0;
  std::uint64_t seed = 0;
  GenerationConfig config;
  std::string algorithm;
  int algorithm_index = 0;  // position in the requested list; sort key only
  Vector rates_hat, rates_true;
  double cosine = kNaN, mse = kNaN, precision = kNaN, recall = kNaN;
  double wall_time = 0.0;
  std::string termination;
  int iterations = 0;
};

inline const std::vector<std::string>& record_header() {
  static const std::vector<std::string> h = {
      "grid_index", "trial",     "seed",        "n_dims",     "sparsity",        "rate_total",
      "n_sensors",  "n_groups",  "n_observations", "noise_variance", "algorithm", "cosine",
      "mse",        "precision", "recall",      "wall_time_s", "termination",  "iterations",
      "lambda_hat", "lambda_true"};
  return h;
}

inline std::vector<std::string> record_fields(const TrialRecord& r) {
  return {std::to_string(r.grid_index),
          std::to_string(r.trial),
          std::to_string(r.seed),
          std::to_string(r.config.n_dims),
          std::to_string(r.config.sparsity),
          format_double(r.config.rate_total),
          std::to_string(r.config.n_sensors),
          std::to_string(r.config.n_groups),
          std::to_string(r.config.n_observations),
          format_double(r.config.noise_variance),
          r.algorithm,
          format_metric(r.cosine),
          format_metric(r.mse),
          format_metric(r.precision),
          format_metric(r.recall),
          format_double(r.wall_time),
          r.termination,
          std::to_string(r.iterations),
          join_vector(r.rates_hat),
          join_vector(r.rates_true)};
}

inline std::string records_to_csv(const std::vector<TrialRecord>& records) {
  std::ostringstream out;
  write_csv_row(out, record_header());
  for (const auto& r : records) write_csv_row(out, record_fields(r));
  return out.str();
}

inline std::vector<TrialRecord> records_from_csv(std::istream& in) {
  const auto rows = parse_csv(in);
  if (rows.empty()) throw std::runtime_error("CSV has no header row");
  if (rows.front() != record_header()) throw std::runtime_error("CSV header does not match the record schema");
  std::vector<TrialRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != record_header().size())
      throw std::runtime_error("CSV row " + std::to_string(i + 1) + " has " + std::to_string(f.size()) + " fields");
    TrialRecord r;
    r.grid_index = static_cast<int>(parse_int("grid_index", f[0]));
    r.trial = static_cast<int>(parse_int("trial", f[1]));
    r.seed = std::stoull(f[2]);
    r.config.n_dims = static_cast<int>(parse_int("n_dims", f[3]));
    r.config.sparsity = static_cast<int>(parse_int("sparsity", f[4]));
    r.config.rate_total = parse_double("rate_total", f[5]);
    r.config.n_sensors = static_cast<int>(parse_int("n_sensors", f[6]));
    r.config.n_groups = static_cast<int>(parse_int("n_groups", f[7]));
    r.config.n_observations = static_cast<int>(parse_int("n_observations", f[8]));
    r.config.noise_variance = parse_double("noise_variance", f[9]);
    r.config.seed = r.seed;
    r.algorithm = f[10];
    r.cosine = parse_metric("cosine", f[11]);
    r.mse = parse_metric("mse", f[12]);
    r.precision = parse_metric("precision", f[13]);
    r.recall = parse_metric("recall", f[14]);
    r.wall_time = parse_double("wall_time_s", f[15]);
    r.termination = f[16];
    r.iterations = static_cast<int>(parse_int("iterations", f[17]));
    r.rates_hat = f[18].empty() ? Vector() : parse_vector("lambda_hat", f[18]);
    r.rates_true = f[19].empty() ? Vector() : parse_vector("lambda_true", f[19]);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// summaries

struct SummaryRow {
  int grid_index = 0;
  GenerationConfig config;
  std::string algorithm;
  int n = 0;                  // trials with a defined cosine
  double cosine_mean = kNaN;
  double cosine_half_std = kNaN;  // half the sample standard deviation
  double mse_mean = kNaN;
};

/// Groups records by (grid point, algorithm) in order of first appearance.
inline std::vector<SummaryRow> summarize(const std::vector<TrialRecord>& records) {
  std::vector<SummaryRow> rows;
  std::vector<std::vector<double>> cos, mse;
  std::map<std::pair<int, std::string>, std::size_t> index;
  for (const auto& r : records) {
    auto [it, fresh] = index.emplace(std::make_pair(r.grid_index, r.algorithm), rows.size());
    if (fresh) {
      SummaryRow s;
      s.grid_index = r.grid_index;
      s.config = r.config;
      s.config.seed = 0;
      s.algorithm = r.algorithm;
      rows.push_back(s);
      cos.emplace_back();
      mse.emplace_back();
    }
    if (std::isfinite(r.cosine)) cos[it->second].push_back(r.cosine);
    if (std::isfinite(r.mse)) mse[it->second].push_back(r.mse);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& c = cos[i];
    rows[i].n = static_cast<int>(c.size());
    if (!c.empty()) {
      double mean = 0.0;
      for (double v : c) mean += v;
      mean /= static_cast<double>(c.size());
      double ss = 0.0;
      for (double v : c) ss += (v - mean) * (v - mean);
      rows[i].cosine_mean = mean;
      rows[i].cosine_half_std = c.size() > 1 ? 0.5 * std::sqrt(ss / static_cast<double>(c.size() - 1)) : 0.0;
    }
    if (!mse[i].empty()) {
      double m = 0.0;
      for (double v : mse[i]) m += v;
      rows[i].mse_mean = m / static_cast<double>(mse[i].size());
    }
  }
  return rows;
}

inline std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  write_csv_row(out, {"grid_index", "n_dims", "sparsity", "rate_total", "n_sensors", "n_groups", "n_observations",
                      "noise_variance", "algorithm", "n", "cosine_mean", "cosine_half_std", "mse_mean"});
  for (const auto& r : rows)
    write_csv_row(out, {std::to_string(r.grid_index), std::to_string(r.config.n_dims),
                        std::to_string(r.config.sparsity), format_double(r.config.rate_total),
                        std::to_string(r.config.n_sensors), std::to_string(r.config.n_groups),
                        std::to_string(r.config.n_observations), format_double(r.config.noise_variance), r.algorithm,
                        std::to_string(r.n), format_metric(r.cosine_mean), format_metric(r.cosine_half_std),
                        format_metric(r.mse_mean)});
  return out.str();
}

/// Fixed-width table for terminals.
inline std::string summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%4s %4s %3s %8s %3s %4s %6s %10s  %-14s %3s %9s %9s\n", "grid", "N", "k", "sum_lam",
                "M", "G", "D", "sigma2", "algorithm", "n", "cosine", "+-0.5sd");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%4d %4d %3d %8.4g %3d %4d %6d %10.3g  %-14s %3d %9.4f %9.4f\n", r.grid_index,
                  r.config.n_dims, r.config.sparsity, r.config.rate_total, r.config.n_sensors, r.config.n_groups,
                  r.config.n_observations, r.config.noise_variance, r.algorithm.c_str(), r.n, r.cosine_mean,
                  r.cosine_half_std);
    out << line;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// running

/// Builds the instance of one trial.
inline Instance make_trial_instance(const ExperimentConfig& cfg, GenerationConfig point) {
  if (cfg.fixed_phi) {
    SensingEnsemble ens;
    ens.matrices = {*cfg.fixed_phi};
    Rng rng(hash_combine(point.seed, 0x72617465ULL));
    PoissonRates rates = cfg.fixed_rates ? PoissonRates(*cfg.fixed_rates)
                                         : sample_rates(point.n_dims, point.sparsity, point.rate_total, rng);
    return generate_instance(point, std::move(rates), std::move(ens));
  }
  if (cfg.fixed_rates) return generate_instance(point, PoissonRates(*cfg.fixed_rates));
  return generate_instance(point);
}

inline TrialRecord score_record(TrialRecord r, const AlgorithmOutput& out, double rate_floor) {
  r.rates_hat = out.rates;
  r.cosine = cosine_similarity(out.rates, r.rates_true);
  r.mse = mean_squared_error(out.rates, r.rates_true);
  const SupportScore sc = support_precision_recall(out.rates, r.rates_true, 10.0 * rate_floor);
  r.precision = sc.precision;
  r.recall = sc.recall;
  r.termination = out.termination;
  r.iterations = out.iterations;
  return r;
}

/// Runs every algorithm on one shared instance per (grid point, trial).
/// Records come back sorted by (grid point, trial, requested algorithm order)
/// whatever the thread count.
inline std::vector<TrialRecord> run_experiment(const ExperimentConfig& cfg, int n_threads = 1) {
  cfg.validate();
  const auto grid = cfg.grid();
  struct Task {
    int grid_index, trial;
  };
  std::vector<Task> tasks;
  for (int g = 0; g < static_cast<int>(grid.size()); ++g)
    for (int t = 0; t < cfg.n_trials; ++t) tasks.push_back({g, t});

  std::vector<std::vector<TrialRecord>> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        const Task& task = tasks[i];
        GenerationConfig point = grid[static_cast<std::size_t>(task.grid_index)];
        point.seed = trial_seed(cfg.seed, point, task.trial);
        const Instance inst = make_trial_instance(cfg, point);
        const OracleKnowledge oracle = OracleKnowledge::from_truth(inst.rates, inst.signals);
        const AlgorithmContext ctx{inst.batch, inst.ensemble, oracle, cfg.settings};
        for (int a = 0; a < static_cast<int>(cfg.algorithms.size()); ++a) {
          const std::string& id = cfg.algorithms[static_cast<std::size_t>(a)];
          Rng rng(algorithm_seed(point.seed, id));
          const auto t0 = std::chrono::steady_clock::now();
          const AlgorithmOutput out = run_algorithm(id, ctx, rng);
          TrialRecord rec;
          rec.grid_index = task.grid_index;
          rec.trial = task.trial;
          rec.seed = point.seed;
          rec.config = point;
          rec.algorithm = id;
          rec.algorithm_index = a;
          rec.rates_true = inst.rates.values();
          rec = score_record(std::move(rec), out, cfg.settings.spore.rate_floor);
          rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          results[i].push_back(std::move(rec));
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(tasks.size());
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(n_threads, static_cast<int>(tasks.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<TrialRecord> records;
  for (auto& r : results)
    for (auto& rec : r) records.push_back(std::move(rec));
  std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    return std::tie(a.grid_index, a.trial, a.algorithm_index) < std::tie(b.grid_index, b.trial, b.algorithm_index);
  });
  return records;
}

// ---------------------------------------------------------------------------
// efficiency study

struct EfficiencyConfig {
  std::vector<int> sparsity{1};
  std::vector<int> n_observations{1000};
  int n_dims = 50;
  int n_sensors = 2;
  int n_groups = 20;
  double noise_variance = 1e-2;
  double rate_value = 1.0;
  int n_trials = 10;
  std::uint64_t seed = 0;
  SporeConfig spore;

  static EfficiencyConfig from_kv(const KeyValueFile& kv) {
    EfficiencyConfig c;
    auto ints = [&](const char* key, std::vector<int> fallback) {
      if (!kv.has(key)) return fallback;
      std::vector<int> v;
      for (const auto& s : kv.get_list(key)) v.push_back(static_cast<int>(parse_int(key, s)));
      return v;
    };
    c.sparsity = ints("sparsity", c.sparsity);
    c.n_observations = ints("n_observations", c.n_observations);
    c.n_dims = static_cast<int>(kv.get_int("n_dims", c.n_dims));
    c.n_sensors = static_cast<int>(kv.get_int("n_sensors", c.n_sensors));
    c.n_groups = static_cast<int>(kv.get_int("n_groups", c.n_groups));
    c.noise_variance = kv.get_double("noise_variance", c.noise_variance);
    c.rate_value = kv.get_double("rate_value", c.rate_value);
    c.n_trials = static_cast<int>(kv.get_int("n_trials", c.n_trials));
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    c.spore.apply_kv(kv, "spore.");
    require(c.n_trials >= 2, "efficiency study needs at least two trials");
    require(c.rate_value > 0.0, "rate_value must be positive");
    return c;
  }
};

struct EfficiencyRow {
  int sparsity = 0;
  int n_observations = 0;
  int n_pooled = 0;
  double mean = kNaN;
  double variance = kNaN;  // sample variance of the pooled support estimates
  double cr_bound = kNaN;  // rate_value / D
  double ratio() const { return variance / cr_bound; }
};

/// Pools SPoRe's estimates on the true support (all rates equal to
/// rate_value) across trials at each (k, D).
inline std::vector<EfficiencyRow> efficiency_study(const EfficiencyConfig& cfg, int n_threads = 1) {
  std::vector<EfficiencyRow> rows;
  for (int k : cfg.sparsity)
    for (int d : cfg.n_observations) {
      std::vector<std::vector<double>> pooled(static_cast<std::size_t>(cfg.n_trials));
      std::atomic<int> next{0};
      std::exception_ptr failure;
      std::mutex failure_mutex;
      auto worker = [&] {
        while (true) {
          const int t = next.fetch_add(1);
          if (t >= cfg.n_trials) return;
          try {
            GenerationConfig gc;
            gc.n_dims = cfg.n_dims;
            gc.sparsity = k;
            gc.rate_total = k * cfg.rate_value;
            gc.n_sensors = cfg.n_sensors;
            gc.n_groups = cfg.n_groups;
            gc.n_observations = d;
            gc.noise_variance = cfg.noise_variance;
            gc.seed = trial_seed(cfg.seed, gc, t);
            Rng rate_rng(hash_combine(gc.seed, 0x72617465ULL));
            const Instance inst =
                generate_instance(gc, sample_constant_rates(cfg.n_dims, k, cfg.rate_value, rate_rng));
            Rng rng(algorithm_seed(gc.seed, "spore"));
            const SporeResult res = run_spore(inst.batch, inst.ensemble, cfg.spore, rng);
            for (int n : inst.rates.support()) pooled[static_cast<std::size_t>(t)].push_back(res.rates_hat[n]);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(cfg.n_trials);
          }
        }
      };
      const int n_workers = std::max(1, std::min(n_threads, cfg.n_trials));
      if (n_workers == 1) {
        worker();
      } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
      }
      if (failure) std::rethrow_exception(failure);

      std::vector<double> all;
      for (const auto& p : pooled) all.insert(all.end(), p.begin(), p.end());
      EfficiencyRow row;
      row.sparsity = k;
      row.n_observations = d;
      row.n_pooled = static_cast<int>(all.size());
      row.cr_bound = cfg.rate_value / d;
      if (all.size() >= 2) {
        double mean = 0.0;
        for (double v : all) mean += v;
        mean /= static_cast<double>(all.size());
        double ss = 0.0;
        for (double v : all) ss += (v - mean) * (v - mean);
        row.mean = mean;
        row.variance = ss / static_cast<double>(all.size() - 1);
      }
      rows.push_back(row);
    }
  return rows;
}

inline std::string efficiency_to_csv(const std::vector<EfficiencyRow>& rows) {
  std::ostringstream out;
  write_csv_row(out, {"sparsity", "n_observations", "n_pooled", "mean", "variance", "cr_bound", "ratio"});
  for (const auto& r : rows)
    write_csv_row(out, {std::to_string(r.sparsity), std::to_string(r.n_observations), std::to_string(r.n_pooled),
                        format_metric(r.mean), format_metric(r.variance), format_double(r.cr_bound),
                        format_metric(r.ratio())});
  return out.str();
}

// ---------------------------------------------------------------------------
// instance files
//
//   spore-instance 1
//   <GenerationConfig keys, one "key value" per line>
//   rates <N values>
//   groups <D 0-based group indices>
//   phi <g>            followed by M lines of N values, for each group
//   signals            followed by N lines of D integers
//   measurements       followed by M lines of D values

constexpr int kInstanceFormatVersion = 1;

inline std::string instance_to_string(const Instance& inst) {
  std::ostringstream out;
  out << "spore-instance " << kInstanceFormatVersion << '\n';
  const KeyValueFile kv = inst.config.to_kv();
  for (const auto& k : kv.keys()) out << k << ' ' << kv.get(k) << '\n';
  out << "rates";
  for (Eigen::Index n = 0; n < inst.rates.values().size(); ++n) out << ' ' << format_double(inst.rates[static_cast<int>(n)]);
  out << "\ngroups";
  for (int g : inst.batch.group_of) out << ' ' << g;
  out << '\n';
  auto put_matrix = [&](const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << format_double(m(i, j));
      out << '\n';
    }
  };
  for (int g = 0; g < inst.ensemble.n_groups(); ++g) {
    out << "phi " << g << '\n';
    put_matrix(inst.ensemble.matrices[static_cast<std::size_t>(g)]);
  }
  out << "signals\n";
  for (Eigen::Index i = 0; i < inst.signals.counts.rows(); ++i) {
    for (Eigen::Index j = 0; j < inst.signals.counts.cols(); ++j) out << (j ? " " : "") << inst.signals.counts(i, j);
    out << '\n';
  }
  out << "measurements\n";
  put_matrix(inst.batch.measurements);
  return out.str();
}

inline Instance instance_from_stream(std::istream& in) {
  auto fail = [](const std::string& msg) -> void { throw std::runtime_error("instance file: " + msg); };
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "spore-instance") fail("missing 'spore-instance' header");
  if (version != kInstanceFormatVersion) fail("unsupported version " + std::to_string(version));

  KeyValueFile kv;
  for (const char* key : {"n_dims", "sparsity", "rate_total", "n_sensors", "n_groups", "n_observations",
                          "noise_variance", "seed"}) {
    std::string k, v;
    if (!(in >> k >> v) || k != key) fail(std::string("expected key ") + key);
    kv.set(k, v);
  }
  Instance inst;
  inst.config = GenerationConfig::from_kv(kv);
  const auto& c = inst.config;
  auto read_double = [&]() {
    std::string s;
    if (!(in >> s)) fail("unexpected end of file");
    return parse_double("instance", s);
  };
  auto expect = [&](const std::string& w) {
    std::string s;
    if (!(in >> s) || s != w) fail("expected '" + w + "'");
  };
  expect("rates");
  Vector rates(c.n_dims);
  for (int n = 0; n < c.n_dims; ++n) rates[n] = read_double();
  inst.rates = PoissonRates(rates);
  expect("groups");
  std::vector<int> groups(static_cast<std::size_t>(c.n_observations));
  for (int& g : groups)
    if (!(in >> g)) fail("bad group index");
  for (int g = 0; g < c.n_groups; ++g) {
    expect("phi");
    int idx = -1;
    if (!(in >> idx) || idx != g) fail("phi blocks out of order");
    Matrix m(c.n_sensors, c.n_dims);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = read_double();
    inst.ensemble.matrices.push_back(std::move(m));
  }
  inst.ensemble.group_of = groups;
  expect("signals");
  inst.signals.counts.resize(c.n_dims, c.n_observations);
  for (Eigen::Index i = 0; i < inst.signals.counts.rows(); ++i)
    for (Eigen::Index j = 0; j < inst.signals.counts.cols(); ++j)
      if (!(in >> inst.signals.counts(i, j))) fail("bad signal entry");
  expect("measurements");
  inst.batch.measurements.resize(c.n_sensors, c.n_observations);
  for (Eigen::Index i = 0; i < inst.batch.measurements.rows(); ++i)
    for (Eigen::Index j = 0; j < inst.batch.measurements.cols(); ++j) inst.batch.measurements(i, j) = read_double();
  inst.batch.group_of = groups;
  inst.batch.noise_variance = c.noise_variance;
  inst.batch.validate_against(inst.ensemble);
  return inst;
}

inline void save_instance(const std::filesystem::path& path, const Instance& inst) {
  write_file_atomic(path, instance_to_string(inst));
}

inline Instance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open instance file: " + path.string());
  return instance_from_stream(in);
}

}  // namespace spore
