#pragma once

// Sparse Poisson Recovery: batch stochastic gradient ascent on the Monte Carlo
// approximation of the average marginal log-likelihood.

#include <cassert>
#include <deque>
#include <ostream>

#include "spore/likelihood.hpp"

namespace spore {

struct SporeConfig {
  int n_samples = 1000;        // S
  int batch_size = 100;        // B
  double learning_rate = 0.02;  // alpha
  double step_cap = 1.0;       // gamma
  double rate_floor = 1e-3;    // epsilon
  double init_value = 0.1;     // nu
  int max_iters = 20000;
  int ma_window = 50;
  double ma_tol = 1e-3;
  int patience = 200;
  double alpha_decay = 0.5;
  int n_decays_to_stop = 3;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_samples >= 1, "n_samples must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(learning_rate > 0.0, "learning_rate must be positive");
    require(step_cap > 0.0, "step_cap must be positive");
    require(rate_floor > 0.0 && rate_floor < init_value, "need 0 < rate_floor < init_value");
    require(alpha_decay > 0.0 && alpha_decay < 1.0, "alpha_decay must lie in (0, 1)");
    require(max_iters >= 1 && ma_window >= 1 && patience >= 1 && n_decays_to_stop >= 1,
            "iteration controls must be positive");
    require(ma_tol >= 0.0, "ma_tol must be nonnegative");
  }

  KeyValueFile to_kv() const {
    KeyValueFile kv;
    kv.set("n_samples", std::to_string(n_samples));
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("learning_rate", format_double(learning_rate));
    kv.set("step_cap", format_double(step_cap));
    kv.set("rate_floor", format_double(rate_floor));
    kv.set("init_value", format_double(init_value));
    kv.set("max_iters", std::to_string(max_iters));
    kv.set("ma_window", std::to_string(ma_window));
    kv.set("ma_tol", format_double(ma_tol));
    kv.set("patience", std::to_string(patience));
    kv.set("alpha_decay", format_double(alpha_decay));
    kv.set("n_decays_to_stop", std::to_string(n_decays_to_stop));
    kv.set("seed", std::to_string(seed));
    return kv;
  }

  /// Reads keys `<prefix>name`; absent keys keep their current values.
  void apply_kv(const KeyValueFile& kv, const std::string& prefix = "") {
    auto geti = [&](const char* k, int& v) { v = static_cast<int>(kv.get_int(prefix + k, v)); };
    auto getd = [&](const char* k, double& v) { v = kv.get_double(prefix + k, v); };
    geti("n_samples", n_samples);
    geti("batch_size", batch_size);
    getd("learning_rate", learning_rate);
    getd("step_cap", step_cap);
    getd("rate_floor", rate_floor);
    getd("init_value", init_value);
    geti("max_iters", max_iters);
    geti("ma_window", ma_window);
    getd("ma_tol", ma_tol);
    geti("patience", patience);
    getd("alpha_decay", alpha_decay);
    geti("n_decays_to_stop", n_decays_to_stop);
    if (kv.has(prefix + "seed")) seed = static_cast<std::uint64_t>(kv.get_int(prefix + "seed"));
    validate();
  }

  static SporeConfig from_kv(const KeyValueFile& kv) {
    SporeConfig c;
    c.apply_kv(kv);
    return c;
  }

  bool operator==(const SporeConfig&) const = default;
};

struct GradientResult {
  Vector gradient;
  int n_used = 0;
  int n_skipped = 0;
  double objective = kNaN;  // average log[(1/W) sum_u w_u p(y_d|x_u)] over used columns
  bool zero_step() const { return n_used == 0; }
};

/// Gradient of the sample-approximated objective over `columns`:
///   (1/|used|) sum_d [sum_u w_u p(y_d|x_u) x_u] / [lambda sum_u w_u p(y_d|x_u)] - 1.
/// Columns whose every sample density underflows are left out; if all are left
/// out the result is a flagged zero step.
inline GradientResult spore_gradient(const MeasurementBatch& batch, const SensingEnsemble& ens,
                                     std::span<const int> columns, const Vector& rates,
                                     const SampleSet& samples, double rate_floor) {
  require(rates.size() == ens.n_dims() && samples.points.rows() == rates.size(), "dimension mismatch");
  for (Eigen::Index n = 0; n < rates.size(); ++n)
    require(rates[n] >= rate_floor, "lambda entries must not fall below the rate floor");
  const int n_dims = static_cast<int>(rates.size());
  const Matrix pts = samples.points.cast<double>();
  GradientResult res;
  Vector acc = Vector::Zero(n_dims);
  double obj = 0.0;
  for_each_density_block(batch, ens, samples.points, columns, [&](const DensityBlock& b) {
    const Eigen::Index n_cols = b.log_density.cols();
    Eigen::ArrayXXd w = b.log_density.colwise() + samples.log_weights.array();
    const Eigen::RowVectorXd dens_max = b.log_density.colwise().maxCoeff().matrix();
    const Eigen::RowVectorXd mx = w.colwise().maxCoeff().matrix();
    w = (w.rowwise() - mx.array()).exp();
    const Eigen::RowVectorXd den = w.colwise().sum().matrix();
    const Matrix num = pts * w.matrix();  // N x |cols|
    for (Eigen::Index c = 0; c < n_cols; ++c) {
      if (dens_max[c] < kLogMinNormal) {
        ++res.n_skipped;
        continue;
      }
      acc += num.col(c) / den[c];
      obj += mx[c] + std::log(den[c]) - samples.log_normalizer;
      ++res.n_used;
    }
  });
  if (res.n_used == 0) {
    res.gradient = Vector::Zero(n_dims);
    return res;
  }
  res.gradient = (acc.array() / (res.n_used * rates.array())).matrix() - Vector::Ones(n_dims);
  res.objective = obj / res.n_used;
  return res;
}

/// Caps the step so that its restriction to indices still being optimized
/// (lambda + delta > floor) has norm at most `cap`; the whole vector is scaled.
inline Vector rescale_step(const Vector& step, const Vector& rates, double rate_floor, double cap) {
  double sq = 0.0;
  for (Eigen::Index n = 0; n < step.size(); ++n)
    if (rates[n] + step[n] > rate_floor) sq += step[n] * step[n];
  const double norm = std::sqrt(sq);
  if (norm > cap) return step * (cap / norm);
  return step;
}

inline Vector clip_update(const Vector& rates, const Vector& step, double rate_floor) {
  return (rates + step).cwiseMax(rate_floor);
}

enum class Termination { Converged, AlphaExhausted, MaxIters };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::Converged: return "converged";
    case Termination::AlphaExhausted: return "alpha_exhausted";
    case Termination::MaxIters: return "max_iters";
  }
  return "?";
}

struct IterationRecord {
  int iter = 0;
  double objective_estimate = kNaN;
  double step_norm = 0.0;
  int n_skipped = 0;
  double alpha = 0.0;
};

struct SporeResult {
  PoissonRates rates_hat;
  std::vector<IterationRecord> trace;
  int n_iters = 0;
  Termination termination = Termination::MaxIters;
};

inline void write_trace_csv(std::ostream& out, const std::vector<IterationRecord>& trace) {
  out << "iter,objective_estimate,step_norm,n_skipped,alpha\n";
  for (const auto& r : trace)
    out << r.iter << ',' << (std::isnan(r.objective_estimate) ? std::string("nan") : format_double(r.objective_estimate))
        << ',' << format_double(r.step_norm) << ',' << r.n_skipped << ',' << format_double(r.alpha) << '\n';
}

/// Runs SPoRe from lambda = init_value * 1 (or `init` when given).
inline SporeResult run_spore(const MeasurementBatch& batch, const SensingEnsemble& ens, const SporeConfig& cfg,
                             Rng& rng, const Vector* init = nullptr) {
  cfg.validate();
  require(batch.size() > 0, "batch has no columns");
  batch.validate_against(ens);
  require(batch.noise_variance > 0.0, "SPoRe needs a positive noise variance");
  const int n_dims = ens.n_dims();
  const int n_cols = batch.size();

  Vector rates = init ? Vector(init->cwiseMax(cfg.rate_floor)) : Vector::Constant(n_dims, cfg.init_value);
  require(rates.size() == n_dims, "initial lambda has wrong length");
  double alpha = cfg.learning_rate;
  double best_obj = -kInf;
  int since_improve = 0;
  int n_cuts = 0;

  // last 2*window iterates for the moving-average convergence test
  std::deque<Vector> history;
  const int window = cfg.ma_window;

  SporeResult res;
  res.termination = Termination::MaxIters;
  std::vector<int> cols(cfg.batch_size);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    for (int& c : cols) c = static_cast<int>(uniform01(rng) * n_cols);
    const SampleSet samples = draw_samples(rates, cfg.n_samples, rng);
    const GradientResult g = spore_gradient(batch, ens, cols, rates, samples, cfg.rate_floor);
    const Vector step = rescale_step(alpha * g.gradient, rates, cfg.rate_floor, cfg.step_cap);
    rates = clip_update(rates, step, cfg.rate_floor);
    assert((rates.array() >= cfg.rate_floor).all());

    res.trace.push_back({it, g.objective, step.norm(), g.n_skipped, alpha});
    res.n_iters = it;

    if (g.n_used > 0 && g.objective > best_obj) {
      best_obj = g.objective;
      since_improve = 0;
    } else if (++since_improve >= cfg.patience) {
      alpha *= cfg.alpha_decay;
      since_improve = 0;
      if (++n_cuts >= cfg.n_decays_to_stop) {
        res.termination = Termination::AlphaExhausted;
        break;
      }
    }

    history.push_back(rates);
    if (static_cast<int>(history.size()) > 2 * window) history.pop_front();
    if (static_cast<int>(history.size()) == 2 * window) {
      Vector older = Vector::Zero(n_dims), newer = Vector::Zero(n_dims);
      for (int i = 0; i < window; ++i) {
        older += history[i];
        newer += history[window + i];
      }
      if ((newer - older).norm() <= cfg.ma_tol * older.norm()) {
        res.termination = Termination::Converged;
        break;
      }
    }
  }
  res.rates_hat = PoissonRates(rates);
  return res;
}

}  // namespace spore
