#pragma once

// Measurement and prior densities, Monte Carlo and exact (lattice-enumerated)
// marginal log-likelihoods of p(y | lambda) = sum_x p(y | x) P(x | lambda).

#include <map>
#include <span>

#include "spore/model.hpp"

namespace spore {

/// log N(y; Phi x, noise_variance I).
inline double log_density_y_given_x(const Vector& y, const Vector& x, const Matrix& phi,
                                    double noise_variance) {
  require(noise_variance > 0.0, "log density needs a positive noise variance");
  require(phi.rows() == y.size() && phi.cols() == x.size(), "shape mismatch in log density");
  const double m = static_cast<double>(y.size());
  return -0.5 * m * (kLog2Pi + std::log(noise_variance)) -
         (y - phi * x).squaredNorm() / (2.0 * noise_variance);
}

/// log P(x | lambda) for independent Poisson coordinates, with 0 log 0 = 0.
/// Rates below `rate_floor` are raised to it.
inline double poisson_log_pmf(const IntVector& x, const Vector& rates, double rate_floor = 0.0) {
  require(x.size() == rates.size(), "x and lambda differ in length");
  double acc = 0.0;
  for (Eigen::Index n = 0; n < x.size(); ++n) {
    require(x[n] >= 0, "Poisson pmf needs nonnegative counts");
    const double lam = std::max(rates[n], rate_floor);
    require(lam >= 0.0, "Poisson pmf needs nonnegative rates");
    if (x[n] == 0) {
      acc -= lam;
    } else {
      if (lam == 0.0) return -kInf;
      acc += x[n] * std::log(lam) - lam - std::lgamma(x[n] + 1.0);
    }
  }
  return acc;
}

/// Upper tail P(X > x_max) of a single Poisson(rate) coordinate.
inline double poisson_tail(double rate, int x_max) {
  if (rate <= 0.0) return 0.0;
  // sum the pmf up to x_max in log space, subtract from one; for large tails
  // this is accurate enough, for tiny tails sum the tail directly instead
  double p = std::exp(-rate), cdf = p;
  for (int x = 1; x <= x_max; ++x) {
    p *= rate / x;
    cdf += p;
  }
  if (cdf < 0.5) return 1.0 - cdf;
  double tail = 0.0;
  double q = std::exp(-rate + (x_max + 1) * std::log(rate) - std::lgamma(x_max + 2.0));
  for (int x = x_max + 1; q > 1e-300 && x < x_max + 10000; ++x) {
    tail += q;
    q *= rate / (x + 1);
    if (q < tail * 1e-17) break;
  }
  return tail;
}

/// P(some coordinate exceeds x_max).
inline double lattice_tail_mass(const Vector& rates, int x_max) {
  double inside = 1.0;
  for (Eigen::Index n = 0; n < rates.size(); ++n) inside *= 1.0 - poisson_tail(rates[n], x_max);
  return 1.0 - inside;
}

/// Smallest cap with per-coordinate tail below 1e-9 at the largest rate,
/// clamped to at least 3.
inline int default_x_max(const Vector& rates, double tail_tol = 1e-9) {
  const double lam = rates.size() ? rates.maxCoeff() : 0.0;
  int x = 3;
  while (poisson_tail(lam, x) >= tail_tol) ++x;
  return x;
}

inline double lattice_size(int n_dims, int x_max) { return std::pow(x_max + 1.0, n_dims); }

/// All points of {0..x_max}^N as columns, in lexicographic order (first
/// coordinate slowest).
inline IntMatrix enumerate_lattice(int n_dims, int x_max, double guard = 1e7) {
  require(x_max >= 0 && n_dims >= 1, "bad lattice bound");
  require(lattice_size(n_dims, x_max) <= guard, "enumeration lattice too large");
  const auto count = static_cast<Eigen::Index>(lattice_size(n_dims, x_max));
  IntMatrix pts(n_dims, count);
  IntVector cur = IntVector::Zero(n_dims);
  for (Eigen::Index i = 0; i < count; ++i) {
    pts.col(i) = cur;
    for (int n = n_dims - 1; n >= 0; --n) {
      if (++cur[n] <= x_max) break;
      cur[n] = 0;
    }
  }
  return pts;
}

/// Weighted signal points used to approximate sum_x p(y|x) P(x|lambda).
/// For Monte Carlo draws the weights are multiplicities and the normalizer is
/// log S; for lattice enumeration the weights are P(x|lambda) and the
/// normalizer is 0.
struct SampleSet {
  IntMatrix points;    // N x U
  Vector log_weights;  // U
  double log_normalizer = 0.0;

  int n_points() const { return static_cast<int>(points.cols()); }
};

/// S draws from Poisson(lambda), collapsed to distinct points with counts.
/// Each draw takes its total from Poisson(sum lambda) and splits it
/// multinomially with probabilities lambda / sum lambda, which has the same
/// law as independent per-coordinate draws.
inline SampleSet draw_samples(const Vector& rates, int n_samples, Rng& rng) {
  require(n_samples >= 1, "need at least one sample");
  const int n = static_cast<int>(rates.size());
  const double total = rates.sum();
  std::vector<double> cum(n);
  double c = 0.0;
  for (int i = 0; i < n; ++i) cum[i] = (c += rates[i]);
  const double e_total = std::exp(-total);

  // key: sorted list of coordinate indices, one entry per event
  std::map<std::vector<int>, int> counts;
  std::vector<int> key;
  for (int s = 0; s < n_samples; ++s) {
    key.clear();
    const int k = sample_poisson(total, e_total, rng);
    for (int j = 0; j < k; ++j) {
      const double u = uniform01(rng) * total;
      auto it = std::upper_bound(cum.begin(), cum.end(), u);
      int idx = static_cast<int>(it - cum.begin());
      if (idx >= n) idx = n - 1;
      while (rates[idx] <= 0.0) --idx;  // never land on a zero-rate coordinate
      key.push_back(idx);
    }
    std::sort(key.begin(), key.end());
    ++counts[key];
  }
  SampleSet set;
  set.points = IntMatrix::Zero(n, static_cast<Eigen::Index>(counts.size()));
  set.log_weights.resize(static_cast<Eigen::Index>(counts.size()));
  Eigen::Index u = 0;
  for (const auto& [pt, cnt] : counts) {
    for (int i : pt) ++set.points(i, u);
    set.log_weights[u] = std::log(static_cast<double>(cnt));
    ++u;
  }
  set.log_normalizer = std::log(static_cast<double>(n_samples));
  return set;
}

/// The whole lattice {0..x_max}^N weighted by the Poisson pmf.
inline SampleSet lattice_samples(const Vector& rates, int x_max) {
  SampleSet set;
  set.points = enumerate_lattice(static_cast<int>(rates.size()), x_max);
  set.log_weights.resize(set.points.cols());
  for (Eigen::Index i = 0; i < set.points.cols(); ++i)
    set.log_weights[i] = poisson_log_pmf(set.points.col(i), rates);
  set.log_normalizer = 0.0;
  return set;
}

/// log p(y_d | x_u) for a chunk of columns that share one sensing matrix.
struct DensityBlock {
  std::vector<int> columns;
  Eigen::ArrayXXd log_density;  // U x |columns|
};

/// Groups `columns` by sensor group and evaluates the Gaussian log densities
/// of every sample point against them, in chunks of at most ~4M entries.
/// Calls `visit(const DensityBlock&)` per chunk.
template <class Visitor>
void for_each_density_block(const MeasurementBatch& batch, const SensingEnsemble& ens, const IntMatrix& points,
                            std::span<const int> columns, Visitor&& visit) {
  require(batch.noise_variance > 0.0, "likelihood needs a positive noise variance");
  const double log_norm = -0.5 * batch.n_sensors() * (kLog2Pi + std::log(batch.noise_variance));
  const double inv_two_var = 1.0 / (2.0 * batch.noise_variance);
  const Eigen::Index n_pts = points.cols();
  const Eigen::Index chunk = std::max<Eigen::Index>(1, 4'000'000 / std::max<Eigen::Index>(1, n_pts));

  std::vector<std::vector<int>> by_group(ens.n_groups());
  for (int d : columns) by_group[batch.group_of[d]].push_back(d);
  const Matrix pts = points.cast<double>();
  DensityBlock block;
  for (int g = 0; g < ens.n_groups(); ++g) {
    const auto& cols = by_group[g];
    if (cols.empty()) continue;
    const Matrix proj = ens.matrices[g] * pts;  // M x U
    for (std::size_t start = 0; start < cols.size(); start += chunk) {
      const std::size_t stop = std::min(cols.size(), start + static_cast<std::size_t>(chunk));
      block.columns.assign(cols.begin() + start, cols.begin() + stop);
      const auto n_cols = static_cast<Eigen::Index>(block.columns.size());
      block.log_density = Eigen::ArrayXXd::Zero(n_pts, n_cols);
      for (Eigen::Index m = 0; m < proj.rows(); ++m) {
        Eigen::RowVectorXd y(n_cols);
        for (Eigen::Index c = 0; c < n_cols; ++c) y[c] = batch.measurements(m, block.columns[c]);
        block.log_density +=
            (proj.row(m).transpose().replicate(1, n_cols) - y.replicate(n_pts, 1)).array().square();
      }
      block.log_density = log_norm - block.log_density * inv_two_var;
      visit(std::as_const(block));
    }
  }
}

/// Average over columns of log[(1/W) sum_u w_u p(y_d | x_u)], skipping columns
/// whose best sample density underflows in linear space.
struct LogLikelihoodEstimate {
  double value = kNaN;  // NaN when every column was skipped
  int n_used = 0;
  int n_skipped = 0;
  bool informative() const { return n_used > 0; }
};

inline LogLikelihoodEstimate sample_log_likelihood(const MeasurementBatch& batch, const SensingEnsemble& ens,
                                                   const SampleSet& samples, std::span<const int> columns,
                                                   bool skip_underflow = true) {
  LogLikelihoodEstimate est;
  double acc = 0.0;
  for_each_density_block(batch, ens, samples.points, columns, [&](const DensityBlock& b) {
    for (Eigen::Index c = 0; c < b.log_density.cols(); ++c) {
      const auto lp = b.log_density.col(c);
      if (skip_underflow && lp.maxCoeff() < kLogMinNormal) {
        ++est.n_skipped;
        continue;
      }
      const Eigen::ArrayXd t = lp + samples.log_weights.array();
      const double mx = t.maxCoeff();
      acc += mx + std::log((t - mx).exp().sum()) - samples.log_normalizer;
      ++est.n_used;
    }
  });
  if (est.n_used > 0) est.value = acc / est.n_used;
  return est;
}

inline std::vector<int> all_columns(const MeasurementBatch& batch) {
  std::vector<int> c(batch.size());
  std::iota(c.begin(), c.end(), 0);
  return c;
}

/// Monte Carlo estimate of the average log-likelihood with proposal
/// Q = P(. | lambda) and S draws shared by all columns.
inline LogLikelihoodEstimate mc_log_likelihood(const MeasurementBatch& batch, const SensingEnsemble& ens,
                                               const Vector& rates, int n_samples, Rng& rng) {
  batch.validate_against(ens);
  require(rates.size() == ens.n_dims(), "lambda length differs from N");
  require((rates.array() >= 0.0).all(), "lambda must be nonnegative");
  const SampleSet samples = draw_samples(rates, n_samples, rng);
  const auto cols = all_columns(batch);
  return sample_log_likelihood(batch, ens, samples, cols);
}

struct ExactLogLikelihood {
  double value = kNaN;
  double tail_mass = 0.0;  // Poisson mass outside the enumerated box
};

/// Exact average log-likelihood with the sum over signals truncated to
/// {0..x_max}^N. No columns are skipped.
inline ExactLogLikelihood exact_log_likelihood_small(const MeasurementBatch& batch, const SensingEnsemble& ens,
                                                     const Vector& rates, int x_max) {
  batch.validate_against(ens);
  require(rates.size() == ens.n_dims(), "lambda length differs from N");
  const SampleSet lat = lattice_samples(rates, x_max);
  const auto cols = all_columns(batch);
  const LogLikelihoodEstimate est = sample_log_likelihood(batch, ens, lat, cols, /*skip_underflow=*/false);
  return {est.value, lattice_tail_mass(rates, x_max)};
}

/// p(y | lambda) on a scalar grid for a one-row sensing matrix.
inline std::vector<double> mixture_density_curve(std::span<const double> y_grid, const Vector& rates,
                                                 const Matrix& phi, double noise_variance, int x_max) {
  require(phi.rows() == 1, "mixture curves are defined for one-row sensing matrices");
  require(phi.cols() == rates.size(), "lambda length differs from N");
  require(noise_variance > 0.0, "noise variance must be positive");
  const SampleSet lat = lattice_samples(rates, x_max);
  const Vector proj = (phi * lat.points.cast<double>()).row(0).transpose();
  const double log_norm = -0.5 * (kLog2Pi + std::log(noise_variance));
  std::vector<double> out;
  out.reserve(y_grid.size());
  Vector terms(lat.n_points());
  for (double y : y_grid) {
    for (int u = 0; u < lat.n_points(); ++u) {
      const double r = y - proj[u];
      terms[u] = log_norm - r * r / (2.0 * noise_variance) + lat.log_weights[u];
    }
    out.push_back(std::exp(log_sum_exp(terms)));
  }
  return out;
}

}  // namespace spore
