#pragma once

// Domain types and the generative model for Poisson signals observed through
// grouped linear sensors with additive Gaussian noise.

#include <numeric>
#include <optional>
#include <utility>

#include "spore/common.hpp"
#include "spore/kvfile.hpp"

namespace spore {

/// Nonnegative rate vector (true or estimated).
class PoissonRates {
 public:
  PoissonRates() = default;
  explicit PoissonRates(Vector values) : values_(std::move(values)) {
    for (Eigen::Index n = 0; n < values_.size(); ++n)
      require(std::isfinite(values_[n]) && values_[n] >= 0.0, "rates must be finite and nonnegative");
  }

  const Vector& values() const { return values_; }
  int n_dims() const { return static_cast<int>(values_.size()); }
  double operator[](int n) const { return values_[n]; }
  double total() const { return values_.sum(); }

  std::vector<int> support() const {
    std::vector<int> s;
    for (int n = 0; n < n_dims(); ++n)
      if (values_[n] > 0.0) s.push_back(n);
    return s;
  }
  int sparsity() const { return static_cast<int>(support().size()); }

 private:
  Vector values_;
};

/// G sensing matrices of identical shape M x N plus the observation -> group
/// map (0-based groups).
struct SensingEnsemble {
  std::vector<Matrix> matrices;
  std::vector<int> group_of;

  int n_groups() const { return static_cast<int>(matrices.size()); }
  int n_sensors() const { return matrices.empty() ? 0 : static_cast<int>(matrices.front().rows()); }
  int n_dims() const { return matrices.empty() ? 0 : static_cast<int>(matrices.front().cols()); }
  const Matrix& for_observation(int d) const { return matrices[group_of[d]]; }

  void validate() const {
    require(!matrices.empty(), "ensemble needs at least one matrix");
    for (const auto& m : matrices)
      require(m.rows() == n_sensors() && m.cols() == n_dims() && m.size() > 0,
              "all sensing matrices must share one nonempty shape");
    for (int g : group_of) require(g >= 0 && g < n_groups(), "group index out of range");
  }
};

/// N x D nonnegative integer counts.
struct SignalMatrix {
  IntMatrix counts;
  int n_dims() const { return static_cast<int>(counts.rows()); }
  int n_observations() const { return static_cast<int>(counts.cols()); }
};

/// M x D measurements with their group map and the generating noise variance.
struct MeasurementBatch {
  Matrix measurements;
  std::vector<int> group_of;
  double noise_variance = 0.0;

  int size() const { return static_cast<int>(measurements.cols()); }
  int n_sensors() const { return static_cast<int>(measurements.rows()); }

  void validate_against(const SensingEnsemble& ens) const {
    ens.validate();
    require(static_cast<int>(group_of.size()) == size(), "group map must cover every observation");
    require(n_sensors() == ens.n_sensors(), "measurement dimension differs from sensor count");
    for (int g : group_of) require(g >= 0 && g < ens.n_groups(), "group index out of range");
  }

  /// Observation indices belonging to each group.
  std::vector<std::vector<int>> columns_by_group(int n_groups) const {
    std::vector<std::vector<int>> out(n_groups);
    for (int d = 0; d < size(); ++d) out[group_of[d]].push_back(d);
    return out;
  }
};

struct GenerationConfig {
  int n_dims = 20;
  int sparsity = 3;
  double rate_total = 2.0;
  int n_sensors = 10;
  int n_groups = 1;
  int n_observations = 100;
  double noise_variance = 1e-2;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_dims >= 1, "n_dims must be >= 1");
    require(sparsity >= 1 && sparsity <= n_dims, "sparsity must lie in [1, n_dims]");
    require(rate_total > 0.0, "rate_total must be positive");
    require(n_sensors >= 1, "n_sensors must be >= 1");
    require(n_groups >= 1, "n_groups must be >= 1");
    require(n_observations >= 1, "n_observations must be >= 1");
    require(noise_variance >= 0.0, "noise_variance must be nonnegative");
  }

  KeyValueFile to_kv() const {
    KeyValueFile kv;
    kv.set("n_dims", std::to_string(n_dims));
    kv.set("sparsity", std::to_string(sparsity));
    kv.set("rate_total", format_double(rate_total));
    kv.set("n_sensors", std::to_string(n_sensors));
    kv.set("n_groups", std::to_string(n_groups));
    kv.set("n_observations", std::to_string(n_observations));
    kv.set("noise_variance", format_double(noise_variance));
    kv.set("seed", std::to_string(seed));
    return kv;
  }

  /// Missing keys keep their defaults.
  static GenerationConfig from_kv(const KeyValueFile& kv) {
    GenerationConfig c;
    c.n_dims = static_cast<int>(kv.get_int("n_dims", c.n_dims));
    c.sparsity = static_cast<int>(kv.get_int("sparsity", c.sparsity));
    c.rate_total = kv.get_double("rate_total", c.rate_total);
    c.n_sensors = static_cast<int>(kv.get_int("n_sensors", c.n_sensors));
    c.n_groups = static_cast<int>(kv.get_int("n_groups", c.n_groups));
    c.n_observations = static_cast<int>(kv.get_int("n_observations", c.n_observations));
    c.noise_variance = kv.get_double("noise_variance", c.noise_variance);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    c.validate();
    return c;
  }

  bool operator==(const GenerationConfig&) const = default;
};

/// k-sparse rates: uniform random support, uniform(0,1) values rescaled so the
/// entries sum to rate_total.
inline PoissonRates sample_rates(int n_dims, int sparsity, double rate_total, Rng& rng) {
  require(n_dims >= 1 && sparsity >= 1 && sparsity <= n_dims, "need 1 <= k <= N");
  require(rate_total > 0.0 && std::isfinite(rate_total), "rate_total must be positive");
  // partial Fisher-Yates picks a uniform size-k subset
  std::vector<int> idx(n_dims);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < sparsity; ++i) {
    const int j = i + static_cast<int>(uniform01(rng) * (n_dims - i));
    std::swap(idx[i], idx[j]);
  }
  std::vector<double> raw(sparsity);
  for (double& v : raw) {
    do v = uniform01(rng);
    while (v <= 0.0);
  }
  const double s = std::accumulate(raw.begin(), raw.end(), 0.0);
  Vector values = Vector::Zero(n_dims);
  double acc = 0.0;
  for (int i = 0; i + 1 < sparsity; ++i) {
    values[idx[i]] = raw[i] / s * rate_total;
    acc += values[idx[i]];
  }
  // last entry absorbs rounding
  values[idx[sparsity - 1]] = rate_total - acc;
  return PoissonRates(std::move(values));
}

/// Rates equal to `value` on a uniformly random size-k support.
inline PoissonRates sample_constant_rates(int n_dims, int sparsity, double value, Rng& rng) {
  require(n_dims >= 1 && sparsity >= 1 && sparsity <= n_dims, "need 1 <= k <= N");
  require(value > 0.0, "rate value must be positive");
  std::vector<int> idx(n_dims);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < sparsity; ++i) {
    const int j = i + static_cast<int>(uniform01(rng) * (n_dims - i));
    std::swap(idx[i], idx[j]);
  }
  Vector values = Vector::Zero(n_dims);
  for (int i = 0; i < sparsity; ++i) values[idx[i]] = value;
  return PoissonRates(std::move(values));
}

/// Contiguous balanced blocks: 1-based observation d goes to group ceil(dG/D).
/// Returned groups are 0-based.
inline std::vector<int> assign_groups(int n_observations, int n_groups) {
  require(n_groups >= 1, "need at least one group");
  require(n_observations >= n_groups, "need at least as many observations as groups");
  std::vector<int> g(n_observations);
  const long long D = n_observations, G = n_groups;
  for (long long d = 1; d <= D; ++d) g[d - 1] = static_cast<int>((d * G + D - 1) / D) - 1;
  return g;
}

/// G matrices with i.i.d. uniform(0,1) entries; group map left empty.
inline SensingEnsemble sample_sensing_ensemble(int n_sensors, int n_dims, int n_groups, Rng& rng) {
  require(n_sensors >= 1 && n_dims >= 1 && n_groups >= 1, "M, N, G must be >= 1");
  SensingEnsemble ens;
  ens.matrices.reserve(n_groups);
  for (int g = 0; g < n_groups; ++g) {
    Matrix m(n_sensors, n_dims);
    // column-major fill order is part of the replay contract
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = uniform01(rng);
    ens.matrices.push_back(std::move(m));
  }
  return ens;
}

inline SignalMatrix sample_signals(const PoissonRates& rates, int n_observations, Rng& rng) {
  require(n_observations >= 0, "D must be nonnegative");
  SignalMatrix x{IntMatrix::Zero(rates.n_dims(), n_observations)};
  for (int d = 0; d < n_observations; ++d)
    for (int n = 0; n < rates.n_dims(); ++n) x.counts(n, d) = sample_poisson(rates[n], rng);
  return x;
}

/// y_d = Phi^(g(d)) x_d + b_d with b_d ~ N(0, noise_variance I).
inline MeasurementBatch measure(const SensingEnsemble& ens, const SignalMatrix& signals,
                                double noise_variance, const std::vector<int>& group_of, Rng& rng) {
  require(noise_variance >= 0.0, "noise variance must be nonnegative");
  require(!ens.matrices.empty(), "empty ensemble");
  require(signals.n_dims() == ens.n_dims(), "signal dimension differs from sensing matrix columns");
  require(static_cast<int>(group_of.size()) == signals.n_observations(), "group map must cover every column");
  const double sd = std::sqrt(noise_variance);
  MeasurementBatch batch;
  batch.group_of = group_of;
  batch.noise_variance = noise_variance;
  batch.measurements.resize(ens.n_sensors(), signals.n_observations());
  for (int d = 0; d < signals.n_observations(); ++d) {
    const int g = group_of[d];
    require(g >= 0 && g < ens.n_groups(), "group index out of range");
    const Vector clean = ens.matrices[g] * signals.counts.col(d).cast<double>();
    for (int m = 0; m < ens.n_sensors(); ++m)
      batch.measurements(m, d) = clean[m] + (sd > 0.0 ? sd * standard_normal(rng) : 0.0);
  }
  return batch;
}

/// One fully generated problem instance.
struct Instance {
  GenerationConfig config;
  PoissonRates rates;
  SensingEnsemble ensemble;
  SignalMatrix signals;
  MeasurementBatch batch;
};

/// Draws rates, matrices, signals and measurements from one generator seeded
/// with config.seed. Pass `rates` to fix the rate vector instead of sampling it.
inline Instance generate_instance(const GenerationConfig& config,
                                  std::optional<PoissonRates> rates = std::nullopt) {
  config.validate();
  Rng rng(config.seed);
  Instance inst;
  inst.config = config;
  inst.rates = rates ? std::move(*rates)
                     : sample_rates(config.n_dims, config.sparsity, config.rate_total, rng);
  require(inst.rates.n_dims() == config.n_dims, "rate vector length differs from n_dims");
  inst.ensemble = sample_sensing_ensemble(config.n_sensors, config.n_dims, config.n_groups, rng);
  inst.ensemble.group_of = assign_groups(config.n_observations, config.n_groups);
  inst.signals = sample_signals(inst.rates, config.n_observations, rng);
  inst.batch = measure(inst.ensemble, inst.signals, config.noise_variance, inst.ensemble.group_of, rng);
  return inst;
}

/// Same as above with fixed rates and sensing matrices; only signals and
/// noise are drawn. The group map is rebuilt from the config.
inline Instance generate_instance(const GenerationConfig& config, PoissonRates rates, SensingEnsemble ensemble) {
  config.validate();
  require(rates.n_dims() == config.n_dims, "rate vector length differs from n_dims");
  require(ensemble.n_groups() == config.n_groups && ensemble.n_sensors() == config.n_sensors &&
              ensemble.n_dims() == config.n_dims,
          "sensing matrices do not match the config shape");
  Rng rng(config.seed);
  Instance inst;
  inst.config = config;
  inst.rates = std::move(rates);
  inst.ensemble = std::move(ensemble);
  inst.ensemble.group_of = assign_groups(config.n_observations, config.n_groups);
  inst.ensemble.validate();
  inst.signals = sample_signals(inst.rates, config.n_observations, rng);
  inst.batch = measure(inst.ensemble, inst.signals, config.noise_variance, inst.ensemble.group_of, rng);
  return inst;
}

}  // namespace spore
