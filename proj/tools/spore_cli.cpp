// Command-line front end: instance generation, single recoveries, sweeps,
// theory checks and CSV reports.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "spore/harness.hpp"
#include "spore/theory.hpp"

namespace {

using namespace spore;

constexpr int kExitUsage = 2;
constexpr const char* kUsage =
    "usage: spore [--config PATH] [--seed INT] [--out PATH] [--threads INT] "
    "{generate|recover|experiment|theory|report} ...\n";

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

KeyValueFile load_config(const GlobalOptions& g, bool required) {
  if (g.config.empty()) {
    if (required) throw UsageError("--config PATH is required");
    return {};
  }
  if (!std::filesystem::is_regular_file(g.config)) throw UsageError("config file not found: " + g.config);
  return KeyValueFile::load(g.config);
}

void print_vector(std::ostream& os, const char* label, const Vector& v) {
  os << label << " =";
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << format_double(v[i]);
  os << '\n';
}

// ---------------------------------------------------------------------------

int cmd_generate(const GlobalOptions& g, const std::vector<std::string>& sets, const std::string& rates,
                 const std::string& phi) {
  KeyValueFile kv = load_config(g, false);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (g.seed) kv.set("seed", std::to_string(*g.seed));
  if (!rates.empty()) kv.set("rates", rates);
  if (!phi.empty()) kv.set("phi", phi);

  GenerationConfig cfg = GenerationConfig::from_kv(kv);
  Instance inst;
  if (kv.has("phi")) {
    SensingEnsemble ens;
    ens.matrices = {parse_matrix("phi", kv.get("phi"))};
    Rng rng(hash_combine(cfg.seed, 0x72617465ULL));
    PoissonRates r = kv.has("rates") ? PoissonRates(parse_vector("rates", kv.get("rates"), ','))
                                     : sample_rates(cfg.n_dims, cfg.sparsity, cfg.rate_total, rng);
    inst = generate_instance(cfg, std::move(r), std::move(ens));
  } else if (kv.has("rates")) {
    inst = generate_instance(cfg, PoissonRates(parse_vector("rates", kv.get("rates"), ',')));
  } else {
    inst = generate_instance(cfg);
  }
  const std::string out = g.out.empty() ? std::string("instance.txt") : g.out;
  save_instance(out, inst);
  std::cout << "wrote " << out << " (N=" << inst.config.n_dims << ", M=" << inst.config.n_sensors
            << ", G=" << inst.config.n_groups << ", D=" << inst.config.n_observations << ")\n";
  return 0;
}

int cmd_recover(const GlobalOptions& g, const std::string& instance_path, const std::string& algorithm,
                const std::string& trace_path, const std::string& curve_path) {
  const KeyValueFile kv = load_config(g, false);
  ExperimentConfig ec;
  ec.settings.spore.apply_kv(kv, "spore.");
  ec.settings.alternating.max_rounds =
      static_cast<int>(kv.get_int("alternating.max_rounds", ec.settings.alternating.max_rounds));
  ec.settings.alternating.rate_floor = kv.get_double("alternating.rate_floor", ec.settings.alternating.rate_floor);
  if (!is_algorithm(algorithm)) throw UsageError("unknown algorithm id: " + algorithm);

  const Instance inst = load_instance(instance_path);
  const OracleKnowledge oracle = OracleKnowledge::from_truth(inst.rates, inst.signals);
  const AlgorithmContext ctx{inst.batch, inst.ensemble, oracle, ec.settings};
  const std::uint64_t seed = g.seed ? *g.seed : inst.config.seed;

  AlgorithmOutput out;
  if (algorithm == "spore" && !trace_path.empty()) {
    Rng rng(algorithm_seed(seed, algorithm));
    const SporeResult res = run_spore(inst.batch, inst.ensemble, ec.settings.spore, rng);
    out = {res.rates_hat.values(), to_string(res.termination), res.n_iters};
    std::ostringstream trace;
    write_trace_csv(trace, res.trace);
    write_file_atomic(trace_path, trace.str());
  } else {
    if (!trace_path.empty()) std::cerr << "note: --trace is only recorded for spore\n";
    Rng rng(algorithm_seed(seed, algorithm));
    out = run_algorithm(algorithm, ctx, rng);
  }

  print_vector(std::cout, "lambda_hat ", out.rates);
  print_vector(std::cout, "lambda_true", inst.rates.values());
  std::cout << "cosine      = " << format_metric(cosine_similarity(out.rates, inst.rates.values())) << '\n';
  std::cout << "mse         = " << format_metric(mean_squared_error(out.rates, inst.rates.values())) << '\n';
  if (!out.termination.empty())
    std::cout << "termination = " << out.termination << " after " << out.iterations << " iterations\n";

  if (!curve_path.empty()) {
    require(inst.ensemble.n_groups() == 1 && inst.config.n_sensors == 1,
            "--curve needs a single one-row sensing matrix");
    const Matrix& phi = inst.ensemble.matrices.front();
    const Vector y = inst.batch.measurements.row(0).transpose();
    const double sd = std::sqrt(inst.config.noise_variance);
    const double lo = y.minCoeff() - 4.0 * sd, hi = y.maxCoeff() + 4.0 * sd;
    const int n_grid = 801;
    std::vector<double> grid(n_grid);
    for (int i = 0; i < n_grid; ++i) grid[i] = lo + (hi - lo) * i / (n_grid - 1);
    const int x_max = std::max(default_x_max(inst.rates.values()), default_x_max(out.rates));
    const auto truth = mixture_density_curve(grid, inst.rates.values(), phi, inst.config.noise_variance, x_max);
    const auto fitted = mixture_density_curve(grid, out.rates, phi, inst.config.noise_variance, x_max);
    std::ostringstream csv;
    write_csv_row(csv, {"y", "density_true", "density_hat"});
    for (int i = 0; i < n_grid; ++i)
      write_csv_row(csv, {format_double(grid[i]), format_double(truth[i]), format_double(fitted[i])});
    write_file_atomic(curve_path, csv.str());
  }
  return 0;
}

int cmd_experiment(const GlobalOptions& g, const std::string& summary_path) {
  KeyValueFile kv = load_config(g, true);
  if (g.seed) kv.set("seed", std::to_string(*g.seed));
  const std::string study = kv.has("study") ? kv.get("study") : std::string("sweep");

  if (study == "efficiency") {
    const EfficiencyConfig cfg = EfficiencyConfig::from_kv(kv);
    const auto rows = efficiency_study(cfg, g.threads);
    const std::string csv = efficiency_to_csv(rows);
    const std::string out = !g.out.empty() ? g.out : kv.has("output") ? kv.get("output") : std::string();
    if (!out.empty()) write_file_atomic(out, csv);
    std::cout << csv;
    return 0;
  }
  if (study != "sweep") throw ArgumentError("study must be 'sweep' or 'efficiency', got '" + study + "'");

  ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
  if (!g.out.empty()) cfg.output = g.out;
  const auto records = run_experiment(cfg, g.threads);
  if (!cfg.output.empty()) write_file_atomic(cfg.output, records_to_csv(records));
  const auto summary = summarize(records);
  if (!summary_path.empty()) write_file_atomic(summary_path, summary_to_csv(summary));
  std::cout << summary_table(summary);
  if (!cfg.output.empty()) std::cout << records.size() << " records written to " << cfg.output << '\n';
  return 0;
}

int cmd_theory(const GlobalOptions& g, std::string phi_text, int n_sensors, int n_dims, int x_max,
               const std::string& rates_text, double noise_variance) {
  Matrix phi;
  if (phi_text.empty()) {
    const KeyValueFile kv = load_config(g, false);
    if (kv.has("phi")) phi_text = kv.get("phi");
  }
  if (!phi_text.empty()) {
    phi = parse_matrix("phi", phi_text);
  } else {
    Rng rng(g.seed.value_or(0));
    phi.resize(n_sensors, n_dims);
    for (Eigen::Index i = 0; i < phi.rows(); ++i)
      for (Eigen::Index j = 0; j < phi.cols(); ++j) phi(i, j) = uniform01(rng);
  }
  std::cout << "phi (" << phi.rows() << " x " << phi.cols() << ")\n";
  for (Eigen::Index i = 0; i < phi.rows(); ++i) print_vector(std::cout, " ", phi.row(i).transpose());

  const bool nullspace = nullspace_positive_check(phi);
  const bool distinct = distinct_columns_check(phi, is_integer_valued(phi) ? 0.0 : 1e-12);
  std::cout << "nullspace check: " << (nullspace ? "true" : "false") << '\n';
  std::cout << "distinct columns: " << (distinct ? "true" : "false") << '\n';
  if (nullspace && distinct) {
    const auto j = onehot_singleton_exists(phi, x_max);
    if (j)
      std::cout << "one-hot singleton: j = " << *j << '\n';
    else
      std::cout << "one-hot singleton: none found up to x_max = " << x_max << '\n';
  } else {
    std::cout << "one-hot singleton: skipped (identifiability conditions fail)\n";
  }

  if (!rates_text.empty()) {
    const Vector rates = parse_vector("rates", rates_text, ',');
    require(rates.size() == phi.cols(), "--rates length differs from the number of columns");
    if (phi.rows() == 1) {
      const FisherReport rep = fisher_diag_numeric(rates, phi, noise_variance);
      std::cout << "fisher (sigma2 = " << format_double(noise_variance) << ", " << rep.method << ")\n";
      print_vector(std::cout, "  ideal 1/lambda", rep.diag_ideal);
      print_vector(std::cout, "  numeric I_nn  ", rep.diag_numeric);
      print_vector(std::cout, "  loss (diff)   ", rep.loss_difference);
      print_vector(std::cout, "  loss (pairs)  ", rep.loss_pair);
    }
    const JensenSolution js = jensen_maximizer(rates, jensen_kernel(phi, noise_variance));
    print_vector(std::cout, "jensen closed form", js.closed_form);
    print_vector(std::cout, "jensen numeric    ", js.numeric);
    std::cout << "jensen interior: " << (js.interior ? "true" : "false") << '\n';
  }
  return 0;
}

int cmd_report(const GlobalOptions& g, const std::string& in_path) {
  std::ifstream in(in_path);
  if (!in) throw std::runtime_error("cannot open CSV: " + in_path);
  const auto records = records_from_csv(in);
  const auto summary = summarize(records);
  if (!g.out.empty()) write_file_atomic(g.out, summary_to_csv(summary));
  std::cout << summary_table(summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Poisson-signal recovery from multiple measurement vectors"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "Key-value config file");
  auto* seed_opt = app.add_option("--seed", seed_value, "Base seed (overrides the config)");
  app.add_option("--out", g.out, "Output path");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("generate", "Write a generated instance file");
  std::vector<std::string> sets;
  std::string gen_rates, gen_phi;
  gen->add_option("--set", sets, "Override a generation key (key=value)");
  gen->add_option("--rates", gen_rates, "Fixed rate vector, comma separated");
  gen->add_option("--phi", gen_phi, "Fixed sensing matrix, rows separated by ';'");

  auto* rec = app.add_subcommand("recover", "Run one algorithm on a stored instance");
  std::string instance_path, algorithm = "spore", trace_path, curve_path;
  rec->add_option("--instance", instance_path, "Instance file")->required()->check(CLI::ExistingFile);
  rec->add_option("--algorithm", algorithm, "Algorithm id");
  rec->add_option("--trace", trace_path, "Write the SPoRe iteration trace as CSV");
  rec->add_option("--curve", curve_path, "Write true and fitted mixture densities as CSV (M = 1, G = 1)");

  auto* exp = app.add_subcommand("experiment", "Run a sweep or efficiency study from --config");
  std::string summary_path;
  exp->add_option("--summary", summary_path, "Write the per-(grid, algorithm) summary as CSV");

  auto* th = app.add_subcommand("theory", "Identifiability, Fisher and Jensen checks on a sensing matrix");
  std::string phi_text, th_rates;
  int th_m = 1, th_n = 3, th_xmax = 20;
  double th_s2 = 1e-2;
  th->add_option("--phi", phi_text, "Sensing matrix, entries ',' and rows ';'");
  th->add_option("--sensors", th_m, "Rows of a random uniform(0,1) matrix when --phi is absent");
  th->add_option("--dims", th_n, "Columns of a random matrix when --phi is absent");
  th->add_option("--x-max", th_xmax, "Box cap for the singleton search");
  th->add_option("--rates", th_rates, "Rate vector for the Fisher and Jensen reports");
  th->add_option("--sigma2", th_s2, "Noise variance for the Fisher and Jensen reports");

  auto* rep = app.add_subcommand("report", "Summarize a results CSV");
  std::string in_path;
  rep->add_option("--in", in_path, "Results CSV")->required();

  for (auto* sub : {gen, rec, exp, th, rep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << kUsage << app.help();
    return kExitUsage;
  }
  if (*seed_opt) g.seed = seed_value;

  try {
    if (*gen) return cmd_generate(g, sets, gen_rates, gen_phi);
    if (*rec) return cmd_recover(g, instance_path, algorithm, trace_path, curve_path);
    if (*exp) return cmd_experiment(g, summary_path);
    if (*th) return cmd_theory(g, phi_text, th_m, th_n, th_xmax, th_rates, th_s2);
    if (*rep) return cmd_report(g, in_path);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << kUsage << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
