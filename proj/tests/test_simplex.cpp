#include <gtest/gtest.h>

#include "spore/simplex.hpp"
#include "test_support.hpp"

using namespace spore;
using namespace spore::testing;

namespace {

// Minimum of 0.5||Ax - b||^2 over {x >= 0, sum x = c} by trying every
// support: some optimum has a support on which the equality-constrained KKT
// system is nonsingular, and that solution is then feasible.
double active_set_oracle(const Matrix& a, const Vector& b, double c) {
  const int n = static_cast<int>(a.cols());
  double best = kInf;
  for (int mask = 1; mask < (1 << n); ++mask) {
    std::vector<int> s;
    for (int j = 0; j < n; ++j)
      if (mask >> j & 1) s.push_back(j);
    const int k = static_cast<int>(s.size());
    Matrix as(a.rows(), k);
    for (int i = 0; i < k; ++i) as.col(i) = a.col(s[i]);
    Matrix kkt = Matrix::Zero(k + 1, k + 1);
    kkt.topLeftCorner(k, k) = as.transpose() * as;
    kkt.topRightCorner(k, 1).setOnes();
    kkt.bottomLeftCorner(1, k).setOnes();
    Vector rhs(k + 1);
    rhs.head(k) = as.transpose() * b;
    rhs[k] = c;
    Eigen::FullPivLU<Matrix> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Vector sol = lu.solve(rhs);
    if (sol.head(k).minCoeff() < -1e-12) continue;
    best = std::min(best, 0.5 * (as * sol.head(k) - b).squaredNorm());
  }
  return best;
}

}  // namespace

TEST(Projection, FeasiblePointIsFixed) {
  const Vector a = vec({0.2, 0.0, 1.3, 0.5});
  EXPECT_NEAR((project_simplex(a, a.sum()) - a).norm(), 0.0, 1e-15);
}

TEST(Projection, KnownValues) {
  EXPECT_NEAR((project_simplex(vec({1.0, 1.0}), 1.0) - vec({0.5, 0.5})).norm(), 0.0, 1e-15);
  EXPECT_NEAR((project_simplex(vec({2.0, 0.0}), 1.0) - vec({1.0, 0.0})).norm(), 0.0, 1e-15);
  EXPECT_NEAR((project_simplex(vec({-1.0, -3.0}), 2.0) - vec({2.0, 0.0})).norm(), 0.0, 1e-15);
  EXPECT_TRUE(project_simplex(vec({3.0, 1.0}), 0.0).isZero());
  EXPECT_THROW(project_simplex(vec({1.0}), -1.0), ArgumentError);
}

TEST(Projection, AtMostKeepsInteriorPoints) {
  EXPECT_NEAR((project_simplex(vec({0.2, -0.1, 0.3}), 1.0, SimplexConstraint::AtMost) - vec({0.2, 0.0, 0.3})).norm(),
              0.0, 1e-15);
  EXPECT_NEAR(project_simplex(vec({2.0, 2.0}), 1.0, SimplexConstraint::AtMost).sum(), 1.0, 1e-15);
}

TEST(Projection, NoFeasiblePointIsCloser) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    Vector v(6);
    for (int i = 0; i < 6; ++i) v[i] = 4.0 * standard_normal(rng);
    const double c = 0.5 + 3.0 * uniform01(rng);
    const Vector p = project_simplex(v, c);
    ASSERT_GE(p.minCoeff(), 0.0);
    ASSERT_NEAR(p.sum(), c, 1e-12);
    for (int k = 0; k < 20; ++k) {
      Vector z(6);
      for (int i = 0; i < 6; ++i) z[i] = -std::log(1.0 - uniform01(rng));
      z *= c / z.sum();
      EXPECT_LE((v - p).norm(), (v - z).norm() + 1e-12);
    }
  }
}

TEST(LeastSquares, IdentityRecoversNonnegativeTarget) {
  const Vector y = vec({0.4, 1.1, 0.0, 2.5});
  const auto r = least_squares_on_simplex(Matrix::Identity(4, 4), y, y.sum());
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR((r.x - y).norm(), 0.0, 1e-8);
}

TEST(LeastSquares, MatchesActiveSetOracle) {
  Rng rng(2);
  for (int t = 0; t < 25; ++t) {
    const Matrix a = uniform_matrix(5, 8, rng, -1.0, 1.0);
    Vector b(5);
    for (int i = 0; i < 5; ++i) b[i] = 2.0 * standard_normal(rng);
    const double c = 0.5 + 2.0 * uniform01(rng);
    const auto r = least_squares_on_simplex(a, b, c);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.x.sum(), c, 1e-10);
    EXPECT_GE(r.x.minCoeff(), 0.0);
    EXPECT_NEAR(r.objective, active_set_oracle(a, b, c), 1e-6) << "trial " << t;
  }
}

TEST(LeastSquares, KktResidualBelowTolerance) {
  Rng rng(3);
  const Matrix a = uniform_matrix(6, 10, rng);
  const Vector b = uniform_matrix(6, 1, rng);
  SimplexSolveOptions opt;
  opt.tol = 1e-10;
  const auto r = least_squares_on_simplex(a, b, 1.5, SimplexConstraint::Equal, opt);
  ASSERT_TRUE(r.converged);
  const Vector g = a.transpose() * (a * r.x - b);
  const double L = spectral_norm_sq(a);
  const Vector g0 = a.transpose() * (a * Vector::Constant(10, 0.15) - b);
  EXPECT_LE(L * (r.x - project_simplex(r.x - g / L, 1.5)).norm(), 1e-10 * std::max(1.0, g0.cwiseAbs().maxCoeff()));
}

TEST(LeastSquares, ZeroTotalForcesZero) {
  const auto r = least_squares_on_simplex(Matrix::Identity(3, 3), vec({1, 2, 3}), 0.0);
  EXPECT_TRUE(r.x.isZero());
}

TEST(SpectralNorm, MatchesSingularValue) {
  Rng rng(4);
  const Matrix a = uniform_matrix(4, 7, rng);
  Eigen::JacobiSVD<Matrix> svd(a);
  EXPECT_NEAR(spectral_norm_sq(a), svd.singularValues()[0] * svd.singularValues()[0], 1e-10);
}

TEST(GenericSolve, QuadraticWithKnownMinimizerOnFace) {
  // min ||x - t||^2 on the simplex is the projection of t
  const Vector target = vec({0.9, -0.4, 0.7, 0.1});
  auto f = [&](const Vector& x, Vector& g) {
    g = 2.0 * (x - target);
    return (x - target).squaredNorm();
  };
  const auto r = simplex_pg_solve(f, 2.0, Vector::Constant(4, 0.25), 1.0);
  EXPECT_NEAR((r.x - project_simplex(target, 1.0)).norm(), 0.0, 1e-8);
}
