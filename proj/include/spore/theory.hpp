#pragma once

// Numerical checks of identifiability conditions, collision structure,
// Fisher information of noisy projected Poisson measurements and the
// small-rate Jensen-bound analysis.

#include <map>
#include <optional>

#include <boost/multiprecision/cpp_int.hpp>

#include "spore/likelihood.hpp"
#include "spore/simplex.hpp"

namespace spore {

// ---------------------------------------------------------------------------
// dense two-phase simplex (Bland's rule), exact for rational scalars

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

template <class T>
struct LpSolution {
  LpStatus status = LpStatus::IterationLimit;
  T value{};
  std::vector<T> x;
};

/// maximize c.x subject to A x = b, x >= 0. `eps` is the pivot tolerance
/// (zero for exact scalar types).
template <class T>
LpSolution<T> simplex_maximize(std::vector<std::vector<T>> a, std::vector<T> b, const std::vector<T>& c, T eps,
                               int max_pivots = 100000) {
  const std::size_t m = a.size();
  const std::size_t n = c.size();
  for (const auto& row : a) require(row.size() == n, "LP row length differs from objective length");
  require(b.size() == m, "LP right-hand side has wrong length");
  for (std::size_t i = 0; i < m; ++i)
    if (b[i] < T(0)) {
      for (auto& v : a[i]) v = -v;
      b[i] = -b[i];
    }

  // tableau columns: n structural, m artificial, then rhs
  const std::size_t width = n + m + 1;
  std::vector<std::vector<T>> tab(m, std::vector<T>(width, T(0)));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) tab[i][j] = a[i][j];
    tab[i][n + i] = T(1);
    tab[i][width - 1] = b[i];
    basis[i] = n + i;
  }
  std::vector<bool> active_col(n + m, true);
  int pivots = 0;

  auto pivot = [&](std::size_t r, std::size_t col) {
    const T p = tab[r][col];
    for (auto& v : tab[r]) v /= p;
    for (std::size_t i = 0; i < tab.size(); ++i) {
      if (i == r || tab[i][col] == T(0)) continue;
      const T f = tab[i][col];
      for (std::size_t j = 0; j < width; ++j) tab[i][j] -= f * tab[r][j];
    }
    basis[r] = col;
    ++pivots;
  };

  // runs simplex iterations for costs `cost` over active columns
  auto optimize = [&](const std::vector<T>& cost) -> LpStatus {
    while (true) {
      if (pivots > max_pivots) return LpStatus::IterationLimit;
      std::size_t enter = width;
      for (std::size_t j = 0; j + 1 < width && enter == width; ++j) {
        if (!active_col[j]) continue;
        T r = cost[j];
        for (std::size_t i = 0; i < tab.size(); ++i) r -= cost[basis[i]] * tab[i][j];
        if (r > eps) enter = j;
      }
      if (enter == width) return LpStatus::Optimal;
      std::size_t leave = tab.size();
      T best_ratio{};
      for (std::size_t i = 0; i < tab.size(); ++i) {
        if (!(tab[i][enter] > eps)) continue;
        const T ratio = tab[i][width - 1] / tab[i][enter];
        if (leave == tab.size() || ratio < best_ratio ||
            (ratio == best_ratio && basis[i] < basis[leave])) {
          leave = i;
          best_ratio = ratio;
        }
      }
      if (leave == tab.size()) return LpStatus::Unbounded;
      pivot(leave, enter);
    }
  };

  LpSolution<T> sol;
  std::vector<T> phase1(n + m, T(0));
  for (std::size_t i = 0; i < m; ++i) phase1[n + i] = T(-1);
  if (const auto s = optimize(phase1); s != LpStatus::Optimal) {
    sol.status = s;
    return sol;
  }
  T infeas(0);
  for (std::size_t i = 0; i < tab.size(); ++i)
    if (basis[i] >= n) infeas += tab[i][width - 1];
  if (infeas > eps) {
    sol.status = LpStatus::Infeasible;
    return sol;
  }
  // drive zero-level artificials out of the basis; drop redundant rows
  for (std::size_t i = 0; i < tab.size();) {
    if (basis[i] < n) {
      ++i;
      continue;
    }
    std::size_t col = n;
    for (std::size_t j = 0; j < n && col == n; ++j) {
      const T v = tab[i][j] < T(0) ? T(-tab[i][j]) : tab[i][j];
      if (v > eps) col = j;
    }
    if (col == n) {
      tab.erase(tab.begin() + static_cast<std::ptrdiff_t>(i));
      basis.erase(basis.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      pivot(i, col);
      ++i;
    }
  }
  for (std::size_t j = n; j < n + m; ++j) active_col[j] = false;

  std::vector<T> phase2(n + m, T(0));
  for (std::size_t j = 0; j < n; ++j) phase2[j] = c[j];
  sol.status = optimize(phase2);
  if (sol.status != LpStatus::Optimal) return sol;
  sol.x.assign(n, T(0));
  for (std::size_t i = 0; i < tab.size(); ++i)
    if (basis[i] < n) sol.x[basis[i]] = tab[i][width - 1];
  sol.value = T(0);
  for (std::size_t j = 0; j < n; ++j) sol.value += c[j] * sol.x[j];
  return sol;
}

inline bool is_integer_valued(const Matrix& phi) {
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    const double v = phi.data()[i];
    if (!std::isfinite(v) || v != std::round(v) || std::abs(v) > 0x1p52) return false;
  }
  return true;
}

namespace detail {

template <class T>
LpSolution<T> nullspace_lp(const Matrix& phi, T eps) {
  const auto m = static_cast<std::size_t>(phi.rows());
  const auto n = static_cast<std::size_t>(phi.cols());
  // variables [x, s] with x + s = 1
  std::vector<std::vector<T>> a(m + n, std::vector<T>(2 * n, T(0)));
  std::vector<T> b(m + n, T(0)), c(2 * n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] = T(phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  for (std::size_t j = 0; j < n; ++j) {
    a[m + j][j] = T(1);
    a[m + j][n + j] = T(1);
    b[m + j] = T(1);
    c[j] = T(1);
  }
  return simplex_maximize<T>(std::move(a), std::move(b), c, eps);
}

}  // namespace detail

/// True iff the null space of Phi meets the nonnegative orthant only at 0,
/// decided by max{sum x : Phi x = 0, 0 <= x <= 1} <= 1e-9. Integer-valued
/// matrices are solved in exact rational arithmetic.
inline bool nullspace_positive_check(const Matrix& phi) {
  require(phi.size() > 0 && phi.allFinite(), "Phi must be nonempty and finite");
  if (is_integer_valued(phi)) {
    using boost::multiprecision::cpp_rational;
    const auto sol = detail::nullspace_lp<cpp_rational>(phi, cpp_rational(0));
    if (sol.status != LpStatus::Optimal) throw IndeterminateError("nullspace LP did not reach an optimum");
    return sol.value == 0;
  }
  const auto sol = detail::nullspace_lp<double>(phi, 1e-10);
  if (sol.status != LpStatus::Optimal) throw IndeterminateError("nullspace LP did not reach an optimum");
  return sol.value <= 1e-9;
}

/// True iff every pair of columns differs in some coordinate by more than
/// `tol` (use 0 for integer-valued matrices).
inline bool distinct_columns_check(const Matrix& phi, double tol = 0.0) {
  for (Eigen::Index a = 0; a < phi.cols(); ++a)
    for (Eigen::Index b = a + 1; b < phi.cols(); ++b)
      if ((phi.col(a) - phi.col(b)).cwiseAbs().maxCoeff() <= tol) return false;
  return true;
}

// ---------------------------------------------------------------------------
// collision sets

struct CollisionSet {
  IntVector anchor;
  IntMatrix members;      // N x count, lexicographic order
  bool complete = false;  // box provably contains every member
  int size() const { return static_cast<int>(members.cols()); }
};

/// Coordinate cap valid for every x >= 0 with Phi x = Phi u, when Phi has a
/// strictly positive (or strictly negative) row r: x_n <= (r.u) / min |r|.
inline std::optional<int> certified_x_max(const Matrix& phi, const IntVector& u) {
  std::optional<int> best;
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    Vector r = phi.row(i).transpose();
    if ((r.array() < 0.0).all()) r = -r;
    if (!(r.array() > 0.0).all()) continue;
    const double bound = r.dot(u.cast<double>()) / r.minCoeff();
    const int cap = static_cast<int>(std::floor(bound + 1e-9));
    if (!best || cap < *best) best = cap;
  }
  return best;
}

namespace detail {
inline double collision_tol(const Matrix& phi) { return is_integer_valued(phi) ? 0.0 : 1e-9; }
}  // namespace detail

/// All x in {0..x_max}^N with Phi x = Phi u (exactly for integer Phi, within
/// 1e-9 per coordinate otherwise).
inline CollisionSet collision_set(const Matrix& phi, const IntVector& u, int x_max, double guard = 1e7) {
  require(u.size() == phi.cols(), "anchor length differs from Phi columns");
  require((u.array() >= 0).all(), "anchor must be nonnegative");
  const IntMatrix box = enumerate_lattice(static_cast<int>(phi.cols()), x_max, guard);
  const double tol = detail::collision_tol(phi);
  const Vector target = phi * u.cast<double>();
  const Matrix images = phi * box.cast<double>();
  std::vector<Eigen::Index> hits;
  for (Eigen::Index j = 0; j < box.cols(); ++j)
    if ((images.col(j) - target).cwiseAbs().maxCoeff() <= tol) hits.push_back(j);
  CollisionSet cs;
  cs.anchor = u;
  cs.members.resize(phi.cols(), static_cast<Eigen::Index>(hits.size()));
  for (std::size_t i = 0; i < hits.size(); ++i) cs.members.col(static_cast<Eigen::Index>(i)) = box.col(hits[i]);
  const auto cert = certified_x_max(phi, u);
  cs.complete = cert && *cert <= x_max;
  return cs;
}

/// Splits {0..x_max}^N into collision classes. Returns, for each lattice point
/// (lexicographic order, as enumerate_lattice), the index of its class;
/// classes are numbered by first appearance.
inline std::vector<int> collision_partition(const Matrix& phi, int x_max, double guard = 1e6) {
  const IntMatrix box = enumerate_lattice(static_cast<int>(phi.cols()), x_max, guard);
  const Matrix images = phi * box.cast<double>();
  const double tol = detail::collision_tol(phi);
  const auto count = box.cols();
  std::vector<int> label(static_cast<std::size_t>(count), -1);
  // sweep over points sorted by their first image coordinate
  std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return images(0, a) < images(0, b); });
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(count));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<Eigen::Index(Eigen::Index)> find = [&](Eigen::Index i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t p = 0; p < order.size(); ++p)
    for (std::size_t q = p + 1; q < order.size() && images(0, order[q]) - images(0, order[p]) <= tol; ++q)
      if ((images.col(order[p]) - images.col(order[q])).cwiseAbs().maxCoeff() <= tol) {
        const auto ra = find(order[p]), rb = find(order[q]);
        parent[std::max(ra, rb)] = std::min(ra, rb);
      }
  std::map<Eigen::Index, int> ids;
  for (Eigen::Index j = 0; j < count; ++j) {
    const auto root = find(j);
    auto [it, fresh] = ids.emplace(root, static_cast<int>(ids.size()));
    label[static_cast<std::size_t>(j)] = it->second;
  }
  return label;
}

/// Some j whose one-hot collision set is {e_j}; nullopt only when no box up
/// to x_max settles it. Phi must satisfy both identifiability conditions.
inline std::optional<int> onehot_singleton_exists(const Matrix& phi, int x_max) {
  const double tol = is_integer_valued(phi) ? 0.0 : 1e-12;
  if (!distinct_columns_check(phi, tol)) throw ArgumentError("Phi has repeated columns");
  if (!nullspace_positive_check(phi)) throw ArgumentError("Phi has a nonnegative null-space direction");
  const int n = static_cast<int>(phi.cols());
  for (int j = 0; j < n; ++j) {
    IntVector e = IntVector::Zero(n);
    e[j] = 1;
    const auto cert = certified_x_max(phi, e);
    const int cap = cert ? std::min(*cert, x_max) : x_max;
    const CollisionSet cs = collision_set(phi, e, cap);
    if (cs.size() == 1 && (cert || cap >= 1)) return j;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Fisher information (diagonal) for scalar measurements

struct FisherReport {
  std::vector<int> support;     // indices n with lambda_n > 0
  Vector diag_ideal;            // 1 / lambda_n
  Vector diag_numeric;          // I_{n,n}
  Vector loss_difference;       // ideal (same quadrature) minus numeric
  Vector loss_pair;             // pair-sum expression
  Vector std_error;             // Monte Carlo only; zero for quadrature
  int x_max = 0;
  double tail_mass = 0.0;
  long long n_grid = 0;
  std::string method;           // "quadrature" or "monte_carlo"
};

struct FisherOptions {
  std::optional<int> x_max;      // default: smallest cap with lattice tail <= max_tail_mass / 10
  double max_tail_mass = 1e-10;
  double step_per_sigma = 40.0;  // quadrature points per noise standard deviation
  double half_width = 9.0;       // window half-width in noise standard deviations
  long long mc_draws = 1'000'000;
  std::uint64_t seed = 0;
  double lattice_guard = 2e6;
};

namespace detail {

/// Per-point sufficient sums over the lattice weights w_x = p(y|x) P(x|lambda),
/// scaled by a common factor exp(-shift).
struct WeightSums {
  double w = 0.0;
  Vector wx, wxx;  // sum w x_n, sum w x_n^2
  Vector pair;     // sum over unordered pairs of distinct x_n values W_a W_b (a - b)^2
};

inline int fisher_x_max(const Vector& rates, const FisherOptions& opt) {
  if (opt.x_max) return *opt.x_max;
  int x = 1;
  while (lattice_tail_mass(rates, x) > opt.max_tail_mass / 10.0) ++x;
  return x;
}

inline void accumulate_fisher_point(const std::vector<int>& support, const Vector& rates, const IntMatrix& lattice,
                                    const std::vector<double>& log_w, const std::vector<Eigen::Index>& idx,
                                    int x_max, WeightSums& s) {
  const auto k = static_cast<Eigen::Index>(support.size());
  s.w = 0.0;
  s.wx.setZero(k);
  s.wxx.setZero(k);
  s.pair.setZero(k);
  double mx = -kInf;
  for (auto j : idx) mx = std::max(mx, log_w[static_cast<std::size_t>(j)]);
  if (!std::isfinite(mx)) return;
  // weights grouped by the value of x_n, per support coordinate
  Matrix by_value = Matrix::Zero(x_max + 1, k);
  for (auto j : idx) {
    const double w = std::exp(log_w[static_cast<std::size_t>(j)] - mx);
    s.w += w;
    for (Eigen::Index t = 0; t < k; ++t) {
      const int v = lattice(support[static_cast<std::size_t>(t)], j);
      s.wx[t] += w * v;
      s.wxx[t] += w * v * static_cast<double>(v);
      by_value(v, t) += w;
    }
  }
  for (Eigen::Index t = 0; t < k; ++t)
    for (int a = 0; a <= x_max; ++a)
      for (int b = a + 1; b <= x_max; ++b) s.pair[t] += by_value(a, t) * by_value(b, t) * double(b - a) * (b - a);
  // undo the shift so sums are on the absolute scale
  const double scale = std::exp(mx);
  s.w *= scale;
  s.wx *= scale;
  s.wxx *= scale;
  s.pair *= scale * scale;
  (void)rates;
}

}  // namespace detail

/// Diagonal Fisher information of p(y | lambda) at `rates` for measurements
/// y = Phi x + N(0, noise_variance I). For M = 1 the integral over y is done by
/// trapezoid quadrature on windows around every lattice projection; for
/// M >= 2 by Monte Carlo over (x, y) draws.
inline FisherReport fisher_diag_numeric(const Vector& rates, const Matrix& phi, double noise_variance,
                                        const FisherOptions& opt = {}) {
  require(noise_variance > 0.0, "Fisher information needs a positive noise variance");
  require(phi.cols() == rates.size(), "Phi columns differ from rate length");
  for (Eigen::Index n = 0; n < rates.size(); ++n) require(rates[n] >= 0.0, "rates must be nonnegative");
  FisherReport rep;
  for (int n = 0; n < rates.size(); ++n)
    if (rates[n] > 0.0) rep.support.push_back(n);
  require(!rep.support.empty(), "rates must have a nonempty support");
  const auto k = static_cast<Eigen::Index>(rep.support.size());

  // signals live on the support; enumerate only those coordinates
  Vector sub_rates(k);
  Matrix sub_phi(phi.rows(), k);
  for (Eigen::Index t = 0; t < k; ++t) {
    sub_rates[t] = rates[rep.support[static_cast<std::size_t>(t)]];
    sub_phi.col(t) = phi.col(rep.support[static_cast<std::size_t>(t)]);
  }
  rep.x_max = detail::fisher_x_max(sub_rates, opt);
  rep.tail_mass = lattice_tail_mass(sub_rates, rep.x_max);
  if (rep.tail_mass > opt.max_tail_mass)
    throw std::runtime_error("Fisher lattice tail mass " + format_double(rep.tail_mass) + " exceeds " +
                             format_double(opt.max_tail_mass) + " at x_max " + std::to_string(rep.x_max));
  const IntMatrix lattice = enumerate_lattice(static_cast<int>(k), rep.x_max, opt.lattice_guard);
  const auto n_pts = lattice.cols();
  std::vector<double> log_prior(static_cast<std::size_t>(n_pts));
  for (Eigen::Index j = 0; j < n_pts; ++j) log_prior[static_cast<std::size_t>(j)] = poisson_log_pmf(lattice.col(j), sub_rates);
  const Matrix images = sub_phi * lattice.cast<double>();
  std::vector<int> sup_local(static_cast<std::size_t>(k));
  std::iota(sup_local.begin(), sup_local.end(), 0);

  rep.diag_ideal = sub_rates.cwiseInverse();
  rep.diag_numeric = Vector::Zero(k);
  rep.loss_difference = Vector::Zero(k);
  rep.loss_pair = Vector::Zero(k);
  rep.std_error = Vector::Zero(k);
  const double sd = std::sqrt(noise_variance);
  const double m = static_cast<double>(phi.rows());
  const double log_norm = -0.5 * m * (kLog2Pi + std::log(noise_variance));
  const Vector inv_rate = sub_rates.cwiseInverse();

  detail::WeightSums s;
  std::vector<double> log_w(static_cast<std::size_t>(n_pts));

  if (phi.rows() == 1) {
    rep.method = "quadrature";
    // sort projections; sweep merged windows [v - hw sd, v + hw sd]
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_pts));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return images(0, a) < images(0, b); });
    std::vector<double> sorted(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = images(0, order[i]);
    const double hw = opt.half_width * sd;
    const double h = sd / opt.step_per_sigma;

    Vector integ_gen = Vector::Zero(k), integ_ideal = Vector::Zero(k), integ_pair = Vector::Zero(k);
    std::vector<Eigen::Index> near;
    std::size_t i = 0;
    while (i < sorted.size()) {
      double lo = sorted[i] - hw, hi = sorted[i] + hw;
      std::size_t j = i + 1;
      while (j < sorted.size() && sorted[j] - hw <= hi) hi = sorted[j++] + hw;
      const auto steps = static_cast<long long>(std::ceil((hi - lo) / h));
      const double hh = (hi - lo) / static_cast<double>(steps);
      for (long long q = 0; q <= steps; ++q) {
        const double y = lo + hh * static_cast<double>(q);
        const double wq = (q == 0 || q == steps) ? 0.5 * hh : hh;
        // components within the window of y
        near.clear();
        auto first = std::lower_bound(sorted.begin() + static_cast<std::ptrdiff_t>(i),
                                      sorted.begin() + static_cast<std::ptrdiff_t>(j), y - hw);
        for (auto it = first; it != sorted.begin() + static_cast<std::ptrdiff_t>(j) && *it <= y + hw; ++it) {
          const auto pt = order[static_cast<std::size_t>(it - sorted.begin())];
          const double r = y - images(0, pt);
          log_w[static_cast<std::size_t>(pt)] = log_norm - r * r / (2.0 * noise_variance) + log_prior[static_cast<std::size_t>(pt)];
          near.push_back(pt);
        }
        if (near.empty()) continue;
        detail::accumulate_fisher_point(sup_local, sub_rates, lattice, log_w, near, static_cast<int>(rep.x_max), s);
        if (!(s.w > 0.0)) continue;
        ++rep.n_grid;
        for (Eigen::Index t = 0; t < k; ++t) {
          const double score = s.wx[t] / (s.w * sub_rates[t]) - 1.0;
          integ_gen[t] += wq * score * score * s.w;
          // sum_x w (x/lambda - 1)^2
          integ_ideal[t] += wq * (s.wxx[t] * inv_rate[t] * inv_rate[t] - 2.0 * s.wx[t] * inv_rate[t] + s.w);
          integ_pair[t] += wq * s.pair[t] / s.w;
        }
      }
      i = j;
    }
    rep.diag_numeric = integ_gen;
    rep.loss_difference = integ_ideal - integ_gen;
    rep.loss_pair = integ_pair.cwiseProduct(inv_rate.cwiseAbs2());
    return rep;
  }

  rep.method = "monte_carlo";
  require(opt.mc_draws >= 2, "Monte Carlo Fisher estimate needs at least two draws");
  Rng rng(opt.seed);
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n_pts));
  std::iota(all.begin(), all.end(), 0);
  Vector mean_sq = Vector::Zero(k), m2_sq = Vector::Zero(k);
  Vector mean_var = Vector::Zero(k);
  Vector exp_neg(k);
  for (Eigen::Index t = 0; t < k; ++t) exp_neg[t] = std::exp(-sub_rates[t]);
  Vector x(k), y(phi.rows());
  for (long long dr = 1; dr <= opt.mc_draws; ++dr) {
    for (Eigen::Index t = 0; t < k; ++t) x[t] = sample_poisson(sub_rates[t], exp_neg[t], rng);
    y = sub_phi * x;
    for (Eigen::Index r = 0; r < y.size(); ++r) y[r] += sd * standard_normal(rng);
    for (Eigen::Index j = 0; j < n_pts; ++j)
      log_w[static_cast<std::size_t>(j)] =
          log_norm - (y - images.col(j)).squaredNorm() / (2.0 * noise_variance) + log_prior[static_cast<std::size_t>(j)];
    detail::accumulate_fisher_point(sup_local, sub_rates, lattice, log_w, all, static_cast<int>(rep.x_max), s);
    for (Eigen::Index t = 0; t < k; ++t) {
      const double score = s.wx[t] / (s.w * sub_rates[t]) - 1.0;
      const double v = score * score;
      const double delta = v - mean_sq[t];
      mean_sq[t] += delta / static_cast<double>(dr);
      m2_sq[t] += delta * (v - mean_sq[t]);
      mean_var[t] += (s.pair[t] / (s.w * s.w) - mean_var[t]) / static_cast<double>(dr);
    }
  }
  rep.n_grid = opt.mc_draws;
  rep.diag_numeric = mean_sq;
  rep.std_error = (m2_sq / static_cast<double>(opt.mc_draws - 1) / static_cast<double>(opt.mc_draws)).cwiseSqrt();
  rep.loss_difference = rep.diag_ideal - mean_sq;
  rep.loss_pair = mean_var.cwiseProduct(inv_rate.cwiseAbs2());
  return rep;
}

// ---------------------------------------------------------------------------
// Jensen-bound analysis for small rates

/// (N+1) x (N+1) kernel exp(-|phi_n - phi_n'|^2 / (4 sigma^2)) with phi_0 = 0.
inline Matrix jensen_kernel(const Matrix& phi, double noise_variance) {
  require(noise_variance > 0.0, "kernel needs a positive noise variance");
  const Eigen::Index n = phi.cols();
  Matrix ext = Matrix::Zero(phi.rows(), n + 1);
  ext.rightCols(n) = phi;
  Matrix k(n + 1, n + 1);
  for (Eigen::Index a = 0; a <= n; ++a)
    for (Eigen::Index b = 0; b <= n; ++b)
      k(a, b) = a == b ? 1.0 : std::exp(-(ext.col(a) - ext.col(b)).squaredNorm() / (4.0 * noise_variance));
  return k;
}

struct KappaValues {
  double diag = 1.0;
  double zero_pair = 0.0;  // exactly one index is 0
  double off_pair = 0.0;   // two distinct nonzero indices
};

/// Expected kernel entries when every column is drawn N(0, I_M).
inline KappaValues tilde_kappa(int n_sensors, double noise_variance) {
  require(n_sensors >= 1 && noise_variance > 0.0, "need M >= 1 and a positive noise variance");
  const double half_m = 0.5 * n_sensors;
  return {1.0, std::pow(2.0 * noise_variance / (2.0 * noise_variance + 1.0), half_m),
          std::pow(noise_variance / (noise_variance + 1.0), half_m)};
}

inline Matrix tilde_kappa_kernel(int n_dims, int n_sensors, double noise_variance) {
  const KappaValues kv = tilde_kappa(n_sensors, noise_variance);
  Matrix k = Matrix::Constant(n_dims + 1, n_dims + 1, kv.off_pair);
  k.row(0).setConstant(kv.zero_pair);
  k.col(0).setConstant(kv.zero_pair);
  k.diagonal().setConstant(kv.diag);
  return k;
}

struct JensenSolution {
  Vector closed_form;        // length N+1, index 0 is the empty event
  bool interior = true;      // closed form has no negative entry
  Vector numeric;            // simplex maximizer, length N+1
  double condition_number = 0.0;
};

inline Vector extend_with_empty(const Vector& rates) {
  const double total = rates.sum();
  require((rates.array() >= 0.0).all(), "rates must be nonnegative");
  require(total <= 1.0 + 1e-12, "small-rate analysis needs sum(lambda) <= 1");
  Vector ext(rates.size() + 1);
  ext[0] = std::max(0.0, 1.0 - total);
  ext.tail(rates.size()) = rates;
  return ext;
}

/// Maximizes sum_j p_j log (K lambda)_j over the probability simplex by
/// projected gradient ascent with backtracking.
inline Vector jensen_numeric_maximizer(const Vector& p, const Matrix& k, double tol = 1e-13, int max_iters = 200000) {
  const Eigen::Index n = p.size();
  auto value = [&](const Vector& lam) {
    const Vector kl = k.transpose() * lam;
    double v = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (p[j] > 0.0) v += kl[j] > 0.0 ? p[j] * std::log(kl[j]) : -kInf;
    return v;
  };
  auto grad = [&](const Vector& lam) {
    const Vector kl = k.transpose() * lam;
    Vector w = Vector::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j)
      if (p[j] > 0.0) w[j] = p[j] / kl[j];
    return Vector(k * w);
  };
  Vector lam = Vector::Constant(n, 1.0 / static_cast<double>(n));
  double f = value(lam);
  double step = 1.0;
  for (int it = 0; it < max_iters; ++it) {
    const Vector g = grad(lam);
    if ((project_simplex(lam + g, 1.0) - lam).norm() <= tol) break;
    step = std::min(step * 2.0, 1e6);
    bool moved = false;
    while (step > 1e-16) {
      const Vector cand = project_simplex(lam + step * g, 1.0);
      const double fc = value(cand);
      if (fc >= f + 1e-4 * g.dot(cand - lam) && fc >= f) {
        moved = (cand - lam).norm() > 0.0;
        lam = cand;
        f = fc;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return lam;
}

/// Closed form (interior case) and numeric maximizer of the Jensen bound for
/// rates `rates` (sum <= 1) under kernel K of size N+1.
inline JensenSolution jensen_maximizer(const Vector& rates, const Matrix& k) {
  require(k.rows() == rates.size() + 1 && k.cols() == k.rows(), "kernel must be (N+1) x (N+1)");
  const Vector p = extend_with_empty(rates);
  JensenSolution sol;
  Eigen::JacobiSVD<Matrix> svd(k);
  const auto& sv = svd.singularValues();
  sol.condition_number = sv[sv.size() - 1] > 0.0 ? sv[0] / sv[sv.size() - 1] : kInf;
  if (!(sol.condition_number <= 1e12)) throw std::runtime_error("Jensen kernel is numerically singular");
  const auto lu = k.partialPivLu();
  const Vector a = lu.solve(Vector::Ones(k.rows()));
  const Vector raw = lu.solve(Vector(p.cwiseQuotient(a)));
  sol.closed_form = raw / raw.sum();
  sol.interior = (sol.closed_form.array() >= 0.0).all();
  sol.numeric = jensen_numeric_maximizer(p, k);
  return sol;
}

struct AffineRecovery {
  double kendall_tau = kNaN;  // NaN when undefined
  double c1 = kNaN, c2 = kNaN, r_squared = kNaN;
  bool degenerate = false;
};

/// Kendall tau-b rank correlation; NaN if either input is constant.
inline double kendall_tau_b(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), "Kendall tau needs equal lengths");
  double concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) ++ties_a;
      else if (db == 0.0) ++ties_b;
      else if ((da > 0) == (db > 0)) ++concordant;
      else ++discordant;
    }
  const double denom = std::sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b));
  return denom > 0.0 ? (concordant - discordant) / denom : kNaN;
}

/// Least-squares fit estimate = c1 * truth + c2 and Kendall tau between them.
inline AffineRecovery affine_fit(const Vector& truth, const Vector& estimate) {
  AffineRecovery r;
  r.degenerate = (truth.array() == truth[0]).all();
  r.kendall_tau = kendall_tau_b(estimate, truth);
  if (r.degenerate) return r;
  const double mt = truth.mean(), me = estimate.mean();
  const Vector dt = truth.array() - mt, de = estimate.array() - me;
  r.c1 = dt.dot(de) / dt.squaredNorm();
  r.c2 = me - r.c1 * mt;
  const double ss_tot = de.squaredNorm();
  const double ss_res = (de - r.c1 * dt).squaredNorm();
  r.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : kNaN);
  return r;
}

/// Averages the Jensen kernels of G groups of N(0, I) columns, maximizes the
/// bound numerically and compares entries 1..N of the maximizer with `rates`.
inline AffineRecovery affine_recovery_check(const Vector& rates, int n_sensors, double noise_variance, int n_groups,
                                            Rng& rng) {
  require(n_groups >= 1 && n_sensors >= 1, "need G >= 1 and M >= 1");
  const auto n = rates.size();
  Matrix k = Matrix::Zero(n + 1, n + 1);
  for (int g = 0; g < n_groups; ++g) {
    Matrix phi(n_sensors, n);
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n_sensors; ++i) phi(i, j) = standard_normal(rng);
    k += jensen_kernel(phi, noise_variance);
  }
  k /= n_groups;
  const Vector lam = jensen_numeric_maximizer(extend_with_empty(rates), k);
  return affine_fit(rates, lam.tail(n));
}

/// Same comparison with the expected kernel (G -> infinity).
inline AffineRecovery affine_recovery_limit(const Vector& rates, int n_sensors, double noise_variance) {
  const Matrix k = tilde_kappa_kernel(static_cast<int>(rates.size()), n_sensors, noise_variance);
  const Vector lam = jensen_numeric_maximizer(extend_with_empty(rates), k);
  return affine_fit(rates, lam.tail(rates.size()));
}

}  // namespace spore
