#pragma once

// Comparison algorithms that receive some oracle knowledge about the true
// signals: brute-force l0 search, alternating integer MAP, a total-count MAP,
// simplex-constrained least squares (single and multiple measurement vector
// forms) and a group-stacking least squares estimator.

#include <functional>
#include <optional>

#include "spore/branch_bound.hpp"
#include "spore/likelihood.hpp"
#include "spore/simplex.hpp"
#include "spore/spore.hpp"

namespace spore {

/// What an oracle baseline is told about the ground truth.
struct OracleKnowledge {
  std::optional<int> sparsity;        // k
  std::optional<int> x_max_true;      // max entry of X*
  std::optional<double> total_count;  // sum of all entries of X*
  std::optional<double> rate_total;   // sum of lambda*

  static OracleKnowledge from_truth(const PoissonRates& rates, const SignalMatrix& signals) {
    OracleKnowledge k;
    k.sparsity = rates.sparsity();
    k.x_max_true = signals.counts.size() ? signals.counts.maxCoeff() : 0;
    k.total_count = static_cast<double>(signals.counts.cast<long long>().sum());
    k.rate_total = rates.total();
    return k;
  }
};

template <class T>
const T& granted(const std::optional<T>& v, const char* what) {
  if (!v) throw ArgumentError(std::string("oracle knowledge missing: ") + what);
  return *v;
}

// ---------------------------------------------------------------------------
// l0 oracle

/// Tries every size-k support; on each, every column takes its nearest point
/// of {0..x_max}^k under Phi, and the support with the least total squared
/// error wins (first support in lexicographic order on ties).
inline Vector l0_oracle(const MeasurementBatch& batch, const SensingEnsemble& ens, int sparsity, int x_max,
                        double guard = 2e9) {
  batch.validate_against(ens);
  require(ens.n_groups() == 1, "l0 oracle needs a single sensor group");
  const int n_dims = ens.n_dims();
  require(sparsity >= 1 && sparsity <= n_dims, "l0 oracle needs 1 <= k <= N");
  require(x_max >= 0, "x_max must be nonnegative");
  const Matrix& phi = ens.matrices.front();
  const int n_cols = batch.size();

  double n_supports = 1.0;
  for (int i = 0; i < sparsity; ++i) n_supports = n_supports * (n_dims - i) / (i + 1);
  require(lattice_size(sparsity, x_max) * n_supports * std::max(1, n_cols) <= guard,
          "l0 oracle search exceeds the compute guard");

  const IntMatrix lattice = enumerate_lattice(sparsity, x_max);
  const Matrix lat = lattice.cast<double>();

  std::vector<int> support(sparsity);
  std::iota(support.begin(), support.end(), 0);
  double best_err = kInf;
  std::vector<int> best_support;
  std::vector<Eigen::Index> best_choice;
  std::vector<Eigen::Index> choice(n_cols);
  Matrix sub(phi.rows(), sparsity);
  while (true) {
    for (int i = 0; i < sparsity; ++i) sub.col(i) = phi.col(support[i]);
    const Matrix images = sub * lat;  // M x P
    double err = 0.0;
    for (int d = 0; d < n_cols && err < best_err; ++d) {
      Eigen::Index arg = 0;
      const double dmin = (images.colwise() - batch.measurements.col(d)).colwise().squaredNorm().minCoeff(&arg);
      choice[d] = arg;
      err += dmin;
    }
    if (err < best_err) {
      best_err = err;
      best_support = support;
      best_choice = choice;
    }
    // next combination in lexicographic order
    int i = sparsity - 1;
    while (i >= 0 && support[i] == n_dims - sparsity + i) --i;
    if (i < 0) break;
    ++support[i];
    for (int j = i + 1; j < sparsity; ++j) support[j] = support[j - 1] + 1;
  }

  Vector rates = Vector::Zero(n_dims);
  for (int d = 0; d < n_cols; ++d)
    for (int i = 0; i < sparsity; ++i) rates[best_support[i]] += lattice(i, best_choice[d]);
  return n_cols ? Vector(rates / n_cols) : rates;
}

// ---------------------------------------------------------------------------
// integer MAP baselines

struct AlternatingOptions {
  int max_rounds = 50;
  double rate_floor = 1e-3;
  std::optional<int> x_max;  // fixed box; otherwise the tail rule on the current estimate
};

struct AlternatingResult {
  Vector rates;
  IntMatrix signals;
  int rounds = 0;
  bool fixed_point = false;
};

inline std::vector<QuadraticModel> quadratic_models(const SensingEnsemble& ens, double noise_variance) {
  std::vector<QuadraticModel> out;
  out.reserve(ens.n_groups());
  for (const auto& m : ens.matrices) out.emplace_back(m, noise_variance);
  return out;
}

/// Alternates per-column integer MAP (given lambda) with lambda = mean of the
/// MAP columns until the columns repeat or max_rounds is reached.
inline AlternatingResult alternating_map(const MeasurementBatch& batch, const SensingEnsemble& ens, Vector init,
                                         const AlternatingOptions& opt = {}) {
  batch.validate_against(ens);
  require(init.size() == ens.n_dims(), "initial lambda has wrong length");
  require(opt.max_rounds >= 1 && opt.rate_floor > 0.0, "bad alternating options");
  const auto models = quadratic_models(ens, batch.noise_variance);
  const int n_cols = batch.size();

  AlternatingResult res;
  res.rates = init.cwiseMax(opt.rate_floor);
  res.signals = IntMatrix::Constant(ens.n_dims(), n_cols, -1);
  for (int round = 1; round <= opt.max_rounds; ++round) {
    const int x_max = opt.x_max ? *opt.x_max : default_x_max(res.rates);
    IntMatrix next(ens.n_dims(), n_cols);
    for (int d = 0; d < n_cols; ++d)
      next.col(d) = map_integer_column(models[batch.group_of[d]], batch.measurements.col(d), res.rates, x_max);
    res.rounds = round;
    const bool repeated = next == res.signals;
    res.signals = std::move(next);
    const Vector mean = n_cols ? Vector(res.signals.cast<double>().rowwise().sum() / n_cols)
                               : Vector(Vector::Zero(ens.n_dims()));
    res.rates = mean.cwiseMax(opt.rate_floor);
    if (repeated) {
      res.fixed_point = true;
      break;
    }
  }
  return res;
}

/// Per-column MAP under a Poisson(rate_total) prior on the column total.
inline Vector sum_lambda_oracle(const MeasurementBatch& batch, const SensingEnsemble& ens, double rate_total,
                                std::optional<int> x_max = std::nullopt) {
  batch.validate_against(ens);
  require(rate_total > 0.0, "rate_total must be positive");
  const auto models = quadratic_models(ens, batch.noise_variance);
  const int cap = x_max ? *x_max : default_x_max(Vector::Constant(1, rate_total));
  const int n_cols = batch.size();
  Vector acc = Vector::Zero(ens.n_dims());
  for (int d = 0; d < n_cols; ++d)
    acc += sum_prior_integer_column(models[batch.group_of[d]], batch.measurements.col(d), rate_total, cap)
               .cast<double>();
  return n_cols ? Vector(acc / n_cols) : acc;
}

// ---------------------------------------------------------------------------
// least-squares oracles

enum class L1Mode { SMV, MMV };

/// SMV: min ||sum_d y_d - Phi x|| with x >= 0, sum x = total_count; lambda = x / D.
/// MMV: min sum_g ||Y^(g) - Phi^(g) X^(g)||_F^2 with X >= 0 and the same total;
/// lambda = row means of X.
inline Vector l1_oracle(const MeasurementBatch& batch, const SensingEnsemble& ens, double total_count, L1Mode mode,
                        const SimplexSolveOptions& opt = {}) {
  batch.validate_against(ens);
  require(total_count >= 0.0, "total_count must be nonnegative");
  require(batch.size() > 0, "no observations");
  const int n_dims = ens.n_dims();
  const int n_cols = batch.size();
  if (mode == L1Mode::SMV) {
    require(ens.n_groups() == 1, "SMV collapse needs a single sensor group");
    const Vector y_sum = batch.measurements.rowwise().sum();
    return least_squares_on_simplex(ens.matrices.front(), y_sum, total_count, SimplexConstraint::Equal, opt).x /
           n_cols;
  }
  const auto by_group = batch.columns_by_group(ens.n_groups());
  double lip = 0.0;
  for (const auto& m : ens.matrices) lip = std::max(lip, spectral_norm_sq(m));
  auto f = [&](const Vector& xflat, Vector& g) {
    double val = 0.0;
    g.resize(xflat.size());
    Eigen::Map<const Matrix> x(xflat.data(), n_dims, n_cols);
    Eigen::Map<Matrix> gm(g.data(), n_dims, n_cols);
    for (int grp = 0; grp < ens.n_groups(); ++grp) {
      const Matrix& phi = ens.matrices[grp];
      for (int d : by_group[grp]) {
        const Vector r = phi * x.col(d) - batch.measurements.col(d);
        val += 0.5 * r.squaredNorm();
        gm.col(d) = phi.transpose() * r;
      }
    }
    return val;
  };
  const double size = static_cast<double>(n_dims) * n_cols;
  const Vector x0 = Vector::Constant(n_dims * n_cols, total_count / size);
  const Vector x = simplex_pg_solve(f, lip, x0, total_count, SimplexConstraint::Equal, opt).x;
  return Eigen::Map<const Matrix>(x.data(), n_dims, n_cols).rowwise().sum() / n_cols;
}

/// Stacks per-group measurement means and solves one least-squares problem
/// for lambda on the simplex of total total_count / D.
inline Vector gm_smv_oracle(const MeasurementBatch& batch, const SensingEnsemble& ens, double total_count,
                            const SimplexSolveOptions& opt = {}) {
  batch.validate_against(ens);
  require(total_count >= 0.0, "total_count must be nonnegative");
  const int n_groups = ens.n_groups();
  const int m = ens.n_sensors();
  const auto by_group = batch.columns_by_group(n_groups);
  Matrix stacked(n_groups * m, ens.n_dims());
  Vector y_bar(n_groups * m);
  for (int g = 0; g < n_groups; ++g) {
    if (by_group[g].empty()) throw ArgumentError("group " + std::to_string(g) + " has no observations");
    Vector mean = Vector::Zero(m);
    for (int d : by_group[g]) mean += batch.measurements.col(d);
    y_bar.segment(g * m, m) = mean / static_cast<double>(by_group[g].size());
    stacked.middleRows(g * m, m) = ens.matrices[g];
  }
  return least_squares_on_simplex(stacked, y_bar, total_count / batch.size(), SimplexConstraint::Equal, opt).x;
}

// ---------------------------------------------------------------------------
// registry

struct AlgorithmSettings {
  SporeConfig spore;
  AlternatingOptions alternating;
};

struct AlgorithmOutput {
  Vector rates;
  std::string termination;  // solver-specific status, empty when not applicable
  int iterations = 0;
};

struct AlgorithmContext {
  const MeasurementBatch& batch;
  const SensingEnsemble& ensemble;
  const OracleKnowledge& oracle;
  const AlgorithmSettings& settings;
};

using AlgorithmFn = std::function<AlgorithmOutput(const AlgorithmContext&, Rng&)>;

namespace detail {

inline AlgorithmOutput from_alternating(const AlternatingResult& r) {
  return {r.rates, r.fixed_point ? "fixed_point" : "max_rounds", r.rounds};
}

inline AlgorithmOutput run_spore_algorithm(const AlgorithmContext& c, Rng& rng) {
  const SporeResult r = run_spore(c.batch, c.ensemble, c.settings.spore, rng);
  return {r.rates_hat.values(), to_string(r.termination), r.n_iters};
}

inline const std::vector<std::pair<std::string, AlgorithmFn>>& registry() {
  static const std::vector<std::pair<std::string, AlgorithmFn>> table = {
      {"spore", run_spore_algorithm},
      {"l0_oracle",
       [](const AlgorithmContext& c, Rng&) -> AlgorithmOutput {
         return {l0_oracle(c.batch, c.ensemble, granted(c.oracle.sparsity, "sparsity"),
                           granted(c.oracle.x_max_true, "x_max_true")),
                 "", 0};
       }},
      {"alt_random",
       [](const AlgorithmContext& c, Rng& rng) {
         Vector init(c.ensemble.n_dims());
         for (Eigen::Index n = 0; n < init.size(); ++n) init[n] = uniform01(rng) + 0.1;
         return from_alternating(alternating_map(c.batch, c.ensemble, init, c.settings.alternating));
       }},
      {"alt_unbiased",
       [](const AlgorithmContext& c, Rng&) {
         const double total = granted(c.oracle.rate_total, "rate_total");
         const Vector init = Vector::Constant(c.ensemble.n_dims(), total / c.ensemble.n_dims());
         return from_alternating(alternating_map(c.batch, c.ensemble, init, c.settings.alternating));
       }},
      {"alt_sumlam",
       [](const AlgorithmContext& c, Rng&) {
         const Vector init = sum_lambda_oracle(c.batch, c.ensemble, granted(c.oracle.rate_total, "rate_total"));
         return from_alternating(alternating_map(c.batch, c.ensemble, init, c.settings.alternating));
       }},
      {"alt_spore",
       [](const AlgorithmContext& c, Rng& rng) {
         const Vector init = run_spore(c.batch, c.ensemble, c.settings.spore, rng).rates_hat.values();
         return from_alternating(alternating_map(c.batch, c.ensemble, init, c.settings.alternating));
       }},
      {"sumlam_oracle",
       [](const AlgorithmContext& c, Rng&) -> AlgorithmOutput {
         return {sum_lambda_oracle(c.batch, c.ensemble, granted(c.oracle.rate_total, "rate_total")), "", 0};
       }},
      {"l1_smv",
       [](const AlgorithmContext& c, Rng&) -> AlgorithmOutput {
         return {l1_oracle(c.batch, c.ensemble, granted(c.oracle.total_count, "total_count"), L1Mode::SMV), "", 0};
       }},
      {"l1_mmv",
       [](const AlgorithmContext& c, Rng&) -> AlgorithmOutput {
         return {l1_oracle(c.batch, c.ensemble, granted(c.oracle.total_count, "total_count"), L1Mode::MMV), "", 0};
       }},
      {"gm_smv",
       [](const AlgorithmContext& c, Rng&) -> AlgorithmOutput {
         return {gm_smv_oracle(c.batch, c.ensemble, granted(c.oracle.total_count, "total_count")), "", 0};
       }},
  };
  return table;
}

}  // namespace detail

inline std::vector<std::string> algorithm_ids() {
  std::vector<std::string> ids;
  for (const auto& [id, fn] : detail::registry()) ids.push_back(id);
  return ids;
}

inline bool is_algorithm(const std::string& id) {
  for (const auto& [name, fn] : detail::registry())
    if (name == id) return true;
  return false;
}

inline AlgorithmOutput run_algorithm(const std::string& id, const AlgorithmContext& ctx, Rng& rng) {
  for (const auto& [name, fn] : detail::registry())
    if (name == id) return fn(ctx, rng);
  throw ArgumentError("unknown algorithm id: " + id);
}

}  // namespace spore
