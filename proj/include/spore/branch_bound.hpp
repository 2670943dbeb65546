#pragma once

// Exact maximization of separable-prior concave objectives
//   f(x) = -||y - Phi x||^2 / (2 sigma^2) + prior(x)
// over integer boxes by branch-and-bound. The prior is either independent
// Poisson (sum_n x_n log lambda_n - log Gamma(x_n + 1)) or Poisson on the total
// count (s log Lambda - log Gamma(s + 1), s = sum_n x_n). Both extend to
// concave functions of real x >= 0 through log Gamma.

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "spore/common.hpp"

namespace spore {

/// Sensing matrix with cached Gram matrix and noise scale, shared by all
/// columns of one group.
struct QuadraticModel {
  Matrix phi;
  Matrix gram;  // Phi^T Phi
  double inv_noise = 0.0;

  QuadraticModel() = default;
  QuadraticModel(const Matrix& phi_, double noise_variance) : phi(phi_), gram(phi_.transpose() * phi_) {
    require(noise_variance > 0.0, "MAP objective needs a positive noise variance");
    inv_noise = 1.0 / noise_variance;
  }
};

enum class PriorKind { IndependentPoisson, TotalPoisson };

class ColumnObjective {
 public:
  /// Independent Poisson prior with rates `rates` (all > 0).
  ColumnObjective(const QuadraticModel& model, Vector y, const Vector& rates)
      : model_(&model), y_(std::move(y)), kind_(PriorKind::IndependentPoisson) {
    require(rates.size() == model.phi.cols(), "rate vector length differs from Phi columns");
    for (Eigen::Index n = 0; n < rates.size(); ++n) require(rates[n] > 0.0, "MAP rates must be positive");
    log_rates_ = rates.array().log().matrix();
    init();
  }

  /// Poisson prior on sum_n x_n with mean `rate_total` (> 0).
  ColumnObjective(const QuadraticModel& model, Vector y, double rate_total)
      : model_(&model), y_(std::move(y)), kind_(PriorKind::TotalPoisson), log_total_(std::log(rate_total)) {
    require(rate_total > 0.0, "rate_total must be positive");
    init();
  }

  int n_dims() const { return static_cast<int>(model_->phi.cols()); }

  double value(const Vector& x) const {
    const double fit = -0.5 * model_->inv_noise * (y_ - model_->phi * x).squaredNorm();
    if (kind_ == PriorKind::IndependentPoisson) {
      double prior = 0.0;
      for (Eigen::Index n = 0; n < x.size(); ++n) prior += x[n] * log_rates_[n] - std::lgamma(x[n] + 1.0);
      return fit + prior;
    }
    const double s = x.sum();
    return fit + s * log_total_ - std::lgamma(s + 1.0);
  }

  double value(const IntVector& x) const { return value(Vector(x.cast<double>())); }

  Vector gradient(const Vector& x) const {
    Vector g = model_->inv_noise * (phi_t_y_ - model_->gram * x);
    if (kind_ == PriorKind::IndependentPoisson) {
      for (Eigen::Index n = 0; n < x.size(); ++n) g[n] += log_rates_[n] - boost::math::digamma(x[n] + 1.0);
    } else {
      g.array() += log_total_ - boost::math::digamma(x.sum() + 1.0);
    }
    return g;
  }

  /// Negated Hessian (positive semidefinite).
  Matrix neg_hessian(const Vector& x) const {
    Matrix h = model_->inv_noise * model_->gram;
    if (kind_ == PriorKind::IndependentPoisson) {
      for (Eigen::Index n = 0; n < x.size(); ++n) h(n, n) += boost::math::trigamma(x[n] + 1.0);
    } else {
      h.array() += boost::math::trigamma(x.sum() + 1.0);
    }
    return h;
  }

 private:
  void init() {
    require(y_.size() == model_->phi.rows(), "measurement length differs from Phi rows");
    phi_t_y_ = model_->phi.transpose() * y_;
  }

  const QuadraticModel* model_;
  Vector y_;
  Vector phi_t_y_;
  PriorKind kind_;
  Vector log_rates_;
  double log_total_ = 0.0;
};

inline bool lex_less(const IntVector& a, const IntVector& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return a[i] < b[i];
  return false;
}

struct RelaxationResult {
  Vector x;
  double value = -kInf;
  double upper_bound = kInf;  // certified bound on the box maximum
};

/// Maximizes the continuous relaxation over [lo, hi] by projected Newton
/// with an Armijo search along the projection arc. The returned upper bound
/// f(x) + sum_n max(g_n (lo_n - x_n), g_n (hi_n - x_n)) holds for any x in
/// the box because f is concave, so it stays valid however early the inner
/// loop stops.
inline RelaxationResult maximize_relaxation(const ColumnObjective& f, const Vector& lo, const Vector& hi,
                                            Vector start, int max_iters = 100, double tol = 1e-10) {
  const Eigen::Index n = lo.size();
  auto project = [&](const Vector& v) { return v.cwiseMax(lo).cwiseMin(hi); };
  Vector x = project(start);
  double fx = f.value(x);
  Vector g = f.gradient(x);
  for (int it = 0; it < max_iters; ++it) {
    if ((project(x + g) - x).norm() <= tol * (1.0 + std::abs(fx))) break;
    // free coordinates: not pinned at a bound by the gradient
    std::vector<int> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool at_lo = x[i] <= lo[i] && g[i] <= 0.0;
      const bool at_hi = x[i] >= hi[i] && g[i] >= 0.0;
      if (!at_lo && !at_hi) free.push_back(static_cast<int>(i));
    }
    Vector dir = Vector::Zero(n);
    if (!free.empty()) {
      const Matrix h = f.neg_hessian(x);
      const auto nf = static_cast<Eigen::Index>(free.size());
      Matrix hf(nf, nf);
      Vector gf(nf);
      double ridge = 0.0;
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = g[free[a]];
        for (Eigen::Index b = 0; b < nf; ++b) hf(a, b) = h(free[a], free[b]);
        ridge = std::max(ridge, hf(a, a));
      }
      hf.diagonal().array() += 1e-12 * (1.0 + ridge);
      const Vector d = hf.ldlt().solve(gf);
      for (Eigen::Index a = 0; a < nf; ++a) dir[free[a]] = d[a];
    }
    if (!(dir.dot(g) > 0.0) || !dir.allFinite()) dir = g;

    bool moved = false;
    for (double t = 1.0; t > 1e-14; t *= 0.5) {
      Vector xt = project(x + t * dir);
      const double ft = f.value(xt);
      if (ft >= fx + 1e-4 * g.dot(xt - x) && ft >= fx) {
        moved = (xt - x).norm() > 0.0;
        x = std::move(xt);
        fx = ft;
        break;
      }
    }
    if (!moved) {
      // fall back to a short projected gradient step
      const Matrix h = f.neg_hessian(x);
      const double lip = std::max(h.diagonal().sum(), 1e-12);
      Vector xt = project(x + g / lip);
      const double ft = f.value(xt);
      if (!(ft > fx)) break;
      x = std::move(xt);
      fx = ft;
    }
    g = f.gradient(x);
  }
  RelaxationResult r;
  r.x = x;
  r.value = fx;
  double slack = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) slack += std::max(g[i] * (lo[i] - x[i]), g[i] * (hi[i] - x[i]));
  r.upper_bound = fx + slack;
  return r;
}

struct BbOptions {
  double enumerate_below = 16;  // boxes with at most this many points are enumerated
  long long max_nodes = 2'000'000;
};

struct BbResult {
  IntVector x;
  double value = -kInf;
  long long nodes = 0;
};

/// Exact argmax of f over the integer box [lo, hi]; among equal values the
/// lexicographically smallest point wins.
inline BbResult branch_and_bound(const ColumnObjective& f, const IntVector& lo, const IntVector& hi,
                                 const BbOptions& opt = {}) {
  const int n = f.n_dims();
  require(lo.size() == n && hi.size() == n, "box dimension differs from objective");
  require((lo.array() >= 0).all() && (lo.array() <= hi.array()).all(), "need 0 <= lo <= hi");

  BbResult best;
  best.x = lo;
  best.value = f.value(lo);
  auto offer = [&](const IntVector& x) {
    const double v = f.value(x);
    if (v > best.value || (v == best.value && lex_less(x, best.x))) {
      best.value = v;
      best.x = x;
    }
  };
  auto prune_below = [&] { return best.value - 1e-9 * (1.0 + std::abs(best.value)); };

  auto enumerate_box = [&](const IntVector& a, const IntVector& b) {
    IntVector cur = a;
    while (true) {
      offer(cur);
      int i = n - 1;
      for (; i >= 0; --i) {
        if (++cur[i] <= b[i]) break;
        cur[i] = a[i];
      }
      if (i < 0) break;
    }
  };

  struct Node {
    IntVector lo, hi;
    RelaxationResult relax;
  };
  auto make_node = [&](IntVector a, IntVector b, const Vector& warm) {
    Node nd{std::move(a), std::move(b), {}};
    nd.relax = maximize_relaxation(f, nd.lo.cast<double>(), nd.hi.cast<double>(), warm);
    return nd;
  };

  std::vector<Node> stack;
  {
    Node root = make_node(lo, hi, 0.5 * (lo + hi).cast<double>());
    offer(root.relax.x.array().round().cast<int>().matrix().cwiseMax(lo).cwiseMin(hi));
    stack.push_back(std::move(root));
  }
  while (!stack.empty()) {
    Node nd = std::move(stack.back());
    stack.pop_back();
    if (++best.nodes > opt.max_nodes) throw IndeterminateError("branch-and-bound node limit exceeded");
    if (nd.relax.upper_bound < prune_below()) continue;

    double volume = 1.0;
    for (int i = 0; i < n; ++i) volume *= nd.hi[i] - nd.lo[i] + 1.0;
    if (volume <= opt.enumerate_below) {
      enumerate_box(nd.lo, nd.hi);
      continue;
    }

    const Vector& xr = nd.relax.x;
    offer(xr.array().round().cast<int>().matrix().cwiseMax(nd.lo).cwiseMin(nd.hi));

    // branch on the most fractional coordinate; if the relaxation is
    // integral, on the coordinate contributing most to the bound gap
    int j = -1;
    double best_frac = 1e-6;
    for (int i = 0; i < n; ++i) {
      if (nd.lo[i] == nd.hi[i]) continue;
      const double frac = std::abs(xr[i] - std::round(xr[i]));
      if (frac > best_frac) {
        best_frac = frac;
        j = i;
      }
    }
    if (j < 0) {
      const Vector g = f.gradient(xr);
      double best_gap = -1.0;
      for (int i = 0; i < n; ++i) {
        if (nd.lo[i] == nd.hi[i]) continue;
        const double gap = std::max(g[i] * (nd.lo[i] - xr[i]), g[i] * (nd.hi[i] - xr[i]));
        if (gap > best_gap) {
          best_gap = gap;
          j = i;
        }
      }
    }
    const int split = std::clamp(static_cast<int>(std::floor(xr[j])), nd.lo[j], nd.hi[j] - 1);
    IntVector left_hi = nd.hi, right_lo = nd.lo;
    left_hi[j] = split;
    right_lo[j] = split + 1;
    Node left = make_node(nd.lo, left_hi, xr);
    Node right = make_node(right_lo, nd.hi, xr);
    // depth first, better bound on top of the stack
    if (left.relax.upper_bound >= right.relax.upper_bound) {
      stack.push_back(std::move(right));
      stack.push_back(std::move(left));
    } else {
      stack.push_back(std::move(left));
      stack.push_back(std::move(right));
    }
  }
  return best;
}

/// Integer MAP estimate of one signal column under the independent Poisson
/// prior, over {0..x_max}^N.
inline IntVector map_integer_column(const QuadraticModel& model, const Vector& y, const Vector& rates, int x_max) {
  require(x_max >= 0, "x_max must be nonnegative");
  const ColumnObjective f(model, y, rates);
  const int n = f.n_dims();
  return branch_and_bound(f, IntVector::Zero(n), IntVector::Constant(n, x_max)).x;
}

inline IntVector map_integer_column(const Vector& y, const Matrix& phi, double noise_variance, const Vector& rates,
                                    int x_max) {
  return map_integer_column(QuadraticModel(phi, noise_variance), y, rates, x_max);
}

/// Integer MAP estimate under a Poisson(rate_total) prior on the column total.
inline IntVector sum_prior_integer_column(const QuadraticModel& model, const Vector& y, double rate_total,
                                          int x_max) {
  require(x_max >= 0, "x_max must be nonnegative");
  const ColumnObjective f(model, y, rate_total);
  const int n = f.n_dims();
  return branch_and_bound(f, IntVector::Zero(n), IntVector::Constant(n, x_max)).x;
}

}  // namespace spore
