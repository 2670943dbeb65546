#pragma once

// Smooth convex minimization over scaled simplices {x >= 0, sum x = c} and
// {x >= 0, sum x <= c}: exact sort-based projection plus accelerated
// projected gradient with adaptive restart.

#include <functional>
#include <numeric>

#include "spore/common.hpp"

namespace spore {

enum class SimplexConstraint { Equal, AtMost };

/// Euclidean projection onto {x >= 0, sum x = total}.
inline Vector project_simplex(const Vector& v, double total) {
  require(total >= 0.0, "simplex total must be nonnegative");
  const Eigen::Index n = v.size();
  if (n == 0) return v;
  if (total == 0.0) return Vector::Zero(n);
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cum += u[i];
    const double t = (cum - total) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

inline Vector project_simplex(const Vector& v, double total, SimplexConstraint kind) {
  if (kind == SimplexConstraint::AtMost) {
    Vector clipped = v.cwiseMax(0.0);
    if (clipped.sum() <= total) return clipped;
  }
  return project_simplex(v, total);
}

struct SimplexSolveOptions {
  double tol = 1e-9;  // on the gradient-mapping norm, relative to max(1, |grad(x0)|)
  int max_iters = 50000;
};

struct SimplexSolveResult {
  Vector x;
  double objective = kNaN;
  double kkt_residual = kNaN;  // norm of the gradient mapping L (x - P(x - grad/L))
  int iters = 0;
  bool converged = false;
};

/// Objective: double(const Vector& x, Vector& grad), returns f(x) and fills
/// grad. `lipschitz` bounds the gradient's Lipschitz constant.
using SmoothObjective = std::function<double(const Vector&, Vector&)>;

inline SimplexSolveResult simplex_pg_solve(const SmoothObjective& f, double lipschitz, Vector x0, double total,
                                           SimplexConstraint kind = SimplexConstraint::Equal,
                                           const SimplexSolveOptions& opt = {}) {
  require(total >= 0.0 && std::isfinite(total), "constraint total must be finite and nonnegative");
  require(x0.size() > 0, "empty variable vector");
  const double L = std::max(lipschitz, 1e-12);

  SimplexSolveResult res;
  Vector x = project_simplex(x0, total, kind);
  Vector grad(x.size());
  double fx = f(x, grad);
  if (!std::isfinite(fx)) throw std::runtime_error("simplex_pg_solve: objective is not finite");
  const double scale = std::max(1.0, grad.cwiseAbs().maxCoeff());

  Vector z = x, gz(x.size());
  double t = 1.0;
  for (int it = 1; it <= opt.max_iters; ++it) {
    f(z, gz);
    Vector x_new = project_simplex(z - gz / L, total, kind);
    double f_new = f(x_new, grad);
    if (!std::isfinite(f_new)) throw std::runtime_error("simplex_pg_solve: objective is not finite");

    // restart momentum whenever the objective goes up
    if (f_new > fx) {
      t = 1.0;
      z = x;
      f(z, gz);
      x_new = project_simplex(z - gz / L, total, kind);
      f_new = f(x_new, grad);
    }
    const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    z = x_new + ((t - 1.0) / t_new) * (x_new - x);
    t = t_new;
    x = std::move(x_new);
    fx = f_new;
    res.iters = it;

    const double residual = L * (x - project_simplex(x - grad / L, total, kind)).norm();
    res.kkt_residual = residual;
    if (residual <= opt.tol * scale) {
      res.converged = true;
      break;
    }
  }
  res.x = std::move(x);
  res.objective = fx;
  return res;
}

/// Largest eigenvalue of A^T A.
inline double spectral_norm_sq(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  const Matrix gram = a.cols() <= a.rows() ? Matrix(a.transpose() * a) : Matrix(a * a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  return std::max(0.0, es.eigenvalues().maxCoeff());
}

/// min 0.5 ||A x - b||^2 over the scaled simplex, started from the uniform point.
inline SimplexSolveResult least_squares_on_simplex(const Matrix& a, const Vector& b, double total,
                                                   SimplexConstraint kind = SimplexConstraint::Equal,
                                                   const SimplexSolveOptions& opt = {}) {
  require(a.rows() == b.size(), "least squares shape mismatch");
  auto f = [&](const Vector& x, Vector& g) {
    const Vector r = a * x - b;
    g = a.transpose() * r;
    return 0.5 * r.squaredNorm();
  };
  const Vector x0 = Vector::Constant(a.cols(), total / static_cast<double>(a.cols()));
  return simplex_pg_solve(f, spectral_norm_sq(a), x0, total, kind, opt);
}

}  // namespace spore
