#include <gtest/gtest.h>

#include <set>

#include "spore/likelihood.hpp"
#include "spore/theory.hpp"
#include "test_support.hpp"

using namespace spore;
using namespace spore::testing;

namespace {

std::set<std::vector<int>> columns_as_set(const IntMatrix& m) {
  std::set<std::vector<int>> out;
  for (Eigen::Index j = 0; j < m.cols(); ++j) out.insert(std::vector<int>(m.col(j).data(), m.col(j).data() + m.rows()));
  return out;
}

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST(NullspaceCheck, IntegerExamples) {
  EXPECT_TRUE(nullspace_positive_check(row_matrix({1, 2, 3})));
  EXPECT_FALSE(nullspace_positive_check(row_matrix({1, -1})));
  EXPECT_FALSE(nullspace_positive_check(row_matrix({2, 0, -1})));  // e_2 is in the null space
  EXPECT_FALSE(nullspace_positive_check(rows({{1, -1, 0}, {0, 1, -1}})));
  EXPECT_TRUE(nullspace_positive_check(Matrix::Identity(3, 3)));
  EXPECT_FALSE(nullspace_positive_check(rows({{1, -1, 0}, {0, 0, 1}})));  // [1,1,0]
  EXPECT_TRUE(nullspace_positive_check(rows({{1, -1, 0}, {0, 1, 1}})));
}

TEST(NullspaceCheck, ContinuousExamples) {
  EXPECT_TRUE(nullspace_positive_check(row_matrix({0.5, 0.7, 1e-3})));
  EXPECT_FALSE(nullspace_positive_check(row_matrix({0.5, -0.7, 0.2})));
  Rng rng(1);
  for (int t = 0; t < 20; ++t) EXPECT_TRUE(nullspace_positive_check(uniform_matrix(1 + t % 3, 4, rng, 0.01, 1.0)));
}

TEST(DistinctColumns, DetectsRepeats) {
  EXPECT_FALSE(distinct_columns_check(rows({{1, 1}, {0, 0}})));
  EXPECT_TRUE(distinct_columns_check(rows({{1, 1}, {0, 1}})));
  EXPECT_FALSE(distinct_columns_check(row_matrix({0.3, 0.3 + 1e-12}), 1e-9));
}

TEST(CollisionSetTest, OneTwoThree) {
  const Matrix phi = row_matrix({1, 2, 3});
  IntVector e3(3);
  e3 << 0, 0, 1;
  const CollisionSet cs = collision_set(phi, e3, 5);
  EXPECT_TRUE(cs.complete);
  EXPECT_EQ(columns_as_set(cs.members), (std::set<std::vector<int>>{{0, 0, 1}, {1, 1, 0}, {3, 0, 0}}));
  const CollisionSet zero = collision_set(phi, IntVector::Zero(3), 5);
  EXPECT_EQ(zero.size(), 1);
  EXPECT_TRUE(zero.members.isZero());
}

TEST(CollisionSetTest, GenericContinuousMatrixHasSingletons) {
  Rng rng(2);
  const Matrix phi = uniform_matrix(1, 3, rng);
  IntVector u(3);
  u << 1, 0, 2;
  const CollisionSet cs = collision_set(phi, u, 6);
  ASSERT_EQ(cs.size(), 1);
  EXPECT_EQ(IntVector(cs.members.col(0)), u);
}

TEST(CollisionPartition, ClassesMatchPairwiseImages) {
  const Matrix phi = row_matrix({1, 2, 3});
  const int x_max = 3;
  const IntMatrix box = enumerate_lattice(3, x_max);
  const auto label = collision_partition(phi, x_max);
  ASSERT_EQ(label.size(), static_cast<std::size_t>(box.cols()));
  const Matrix img = phi * box.cast<double>();
  for (Eigen::Index a = 0; a < box.cols(); ++a)
    for (Eigen::Index b = 0; b < box.cols(); ++b)
      EXPECT_EQ(label[a] == label[b], img(0, a) == img(0, b));
}

TEST(OnehotSingleton, OneTwoThreePicksFirstColumn) {
  EXPECT_EQ(onehot_singleton_exists(row_matrix({1, 2, 3}), 10), 0);
}

TEST(OnehotSingleton, RandomMatricesHaveOne) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) EXPECT_TRUE(onehot_singleton_exists(uniform_matrix(1 + t % 2, 4, rng), 8).has_value());
}

TEST(OnehotSingleton, PreconditionsEnforced) {
  EXPECT_THROW(onehot_singleton_exists(rows({{1, 1}, {2, 2}}), 5), ArgumentError);
  EXPECT_THROW(onehot_singleton_exists(row_matrix({1, -1}), 5), ArgumentError);
}

TEST(EmptyEvent, ProbabilityIsExpOfMinusTotal) {
  const Vector lam = vec({0.2, 0.0, 1.3});
  EXPECT_NEAR(poisson_log_pmf(IntVector::Zero(3), lam), -1.5, 1e-15);
}

TEST(MixtureCurves, DifferentRatesDifferentDensities) {
  const Matrix phi = row_matrix({1, 2, 3});
  std::vector<double> grid;
  for (int i = 0; i <= 200; ++i) grid.push_back(-1.0 + 0.05 * i);
  const auto a = mixture_density_curve(grid, vec({0.5, 0.0, 0.5}), phi, 0.02, 12);
  const auto b = mixture_density_curve(grid, vec({0.4, 0.1, 0.5}), phi, 0.02, 12);
  double gap = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) gap = std::max(gap, std::abs(a[i] - b[i]));
  EXPECT_GT(gap, 1e-6);
}

TEST(Fisher, SingleComponentBelowIdealAndApproachesIt) {
  const Matrix phi = row_matrix({1.0});
  const Vector lam = vec({0.7});
  const FisherReport noisy = fisher_diag_numeric(lam, phi, 0.1);
  EXPECT_EQ(noisy.method, "quadrature");
  EXPECT_LT(noisy.diag_numeric[0], 1.0 / 0.7);
  EXPECT_GT(noisy.diag_numeric[0], 0.0);
  const FisherReport sharp = fisher_diag_numeric(lam, phi, 1e-6);
  EXPECT_NEAR(sharp.diag_numeric[0], 1.0 / 0.7, 0.01 / 0.7);
}

TEST(Fisher, MoreNoiseLessInformation) {
  const Matrix phi = row_matrix({1.0, 1.7});
  const Vector lam = vec({0.4, 0.9});
  const Vector lo = fisher_diag_numeric(lam, phi, 0.01).diag_numeric;
  const Vector hi = fisher_diag_numeric(lam, phi, 0.5).diag_numeric;
  EXPECT_GT(lo[0], hi[0]);
  EXPECT_GT(lo[1], hi[1]);
}

TEST(Fisher, ZeroRatesExcludedFromSupport) {
  const FisherReport r = fisher_diag_numeric(vec({0.5, 0.0}), row_matrix({1.0, 2.0}), 0.1);
  EXPECT_EQ(r.support, std::vector<int>{0});
  EXPECT_THROW(fisher_diag_numeric(vec({0.0, 0.0}), row_matrix({1.0, 2.0}), 0.1), ArgumentError);
}

TEST(JensenKernel, KnownEntries) {
  const Matrix k = jensen_kernel(row_matrix({1, 2}), 0.25);
  EXPECT_EQ(k.rows(), 3);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(k(i, i), 1.0);
  EXPECT_NEAR(k(1, 2), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(k(0, 2), std::exp(-4.0), 1e-15);
  EXPECT_EQ(k, k.transpose());
  EXPECT_GT(jensen_kernel(row_matrix({1, 2}), 1e8).minCoeff(), 1.0 - 1e-7);
}

TEST(TildeKappa, ClosedFormValues) {
  const KappaValues v = tilde_kappa(2, 1.0);
  EXPECT_EQ(v.diag, 1.0);
  EXPECT_NEAR(v.zero_pair, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(v.off_pair, 0.5, 1e-15);
  EXPECT_LT(tilde_kappa(4, 1.0).zero_pair, v.zero_pair);
  EXPECT_LT(tilde_kappa(4, 1.0).off_pair, v.off_pair);
}

TEST(TildeKappa, MatchesAverageOfGaussianKernels) {
  Rng rng(4);
  const int m = 2, n = 3, reps = 200000;
  const double s2 = 0.5;
  Matrix acc = Matrix::Zero(n + 1, n + 1);
  Matrix phi(m, n);
  for (int r = 0; r < reps; ++r) {
    for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = standard_normal(rng);
    acc += jensen_kernel(phi, s2);
  }
  acc /= reps;
  const Matrix expect = tilde_kappa_kernel(n, m, s2);
  EXPECT_LE(((acc - expect).array() / expect.array()).abs().maxCoeff(), 0.01);
}

TEST(JensenMaximizer, IdentityKernelReturnsPrior) {
  const Vector lam = vec({0.1, 0.25, 0.05});
  const JensenSolution s = jensen_maximizer(lam, Matrix::Identity(4, 4));
  EXPECT_TRUE(s.interior);
  EXPECT_NEAR((s.closed_form - extend_with_empty(lam)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((s.numeric - extend_with_empty(lam)).norm(), 0.0, 1e-8);
}

TEST(JensenMaximizer, ClosedFormIsStationaryOnSimplex) {
  const Vector lam = vec({0.15, 0.2, 0.1});
  const Matrix k = jensen_kernel(rows({{0.3, -1.1, 0.8}, {1.2, 0.4, -0.6}}), 0.1);
  const JensenSolution s = jensen_maximizer(lam, k);
  ASSERT_TRUE(s.interior);
  // gradient of sum p log (K l) is constant across coordinates at an interior optimum
  const Vector p = extend_with_empty(lam);
  const Vector g = k * p.cwiseQuotient(k.transpose() * s.closed_form);
  EXPECT_NEAR(g.maxCoeff() - g.minCoeff(), 0.0, 1e-12);
  EXPECT_LE((s.closed_form - s.numeric).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(JensenMaximizer, RejectsOversizedTotal) {
  EXPECT_THROW(extend_with_empty(vec({0.6, 0.6})), ArgumentError);
  EXPECT_THROW(jensen_maximizer(vec({0.1}), Matrix::Identity(3, 3)), ArgumentError);
}

TEST(KendallTau, HandValues) {
  EXPECT_NEAR(kendall_tau_b(vec({1, 2, 3}), vec({1, 3, 2})), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(kendall_tau_b(vec({1, 1, 2}), vec({1, 2, 3})), 2.0 / std::sqrt(6.0), 1e-15);
  EXPECT_NEAR(kendall_tau_b(vec({3, 2, 1}), vec({1, 2, 3})), -1.0, 1e-15);
  EXPECT_TRUE(std::isnan(kendall_tau_b(vec({1, 1, 1}), vec({1, 2, 3}))));
}

TEST(AffineFit, ExactLine) {
  const Vector t = vec({0.1, 0.4, 0.2, 0.3});
  const AffineRecovery r = affine_fit(t, Vector(2.0 * t.array() + 0.5));
  EXPECT_NEAR(r.c1, 2.0, 1e-12);
  EXPECT_NEAR(r.c2, 0.5, 1e-12);
  EXPECT_NEAR(r.r_squared, 1.0, 1e-12);
  EXPECT_EQ(r.kendall_tau, 1.0);
  EXPECT_TRUE(affine_fit(vec({0.2, 0.2}), vec({0.1, 0.3})).degenerate);
}

TEST(AffineRecovery, ClosedFormUnderLimitKernelIsAffine) {
  const Vector lam = vec({0.05, 0.2, 0.1, 0.15, 0.08});
  const JensenSolution s = jensen_maximizer(lam, tilde_kappa_kernel(5, 2, 0.5));
  const AffineRecovery r = affine_fit(lam, s.closed_form.tail(5));
  EXPECT_GE(r.r_squared, 1.0 - 1e-12);
  EXPECT_GE(r.c1, 0.0);
}

TEST(AffineRecovery, ConstrainedMaximizerCanCollapse) {
  // with weak kernels the simplex maximizer puts all mass on the empty event
  const AffineRecovery flat = affine_recovery_limit(vec({0.1, 0.25, 0.15, 0.2, 0.13}), 2, 0.5);
  EXPECT_TRUE(std::isnan(flat.kendall_tau));
  EXPECT_EQ(flat.c1, 0.0);
}

TEST(AffineRecovery, LimitKernelIsAffineAtLowNoise) {
  const AffineRecovery r = affine_recovery_limit(vec({0.1, 0.25, 0.15, 0.2, 0.13}), 2, 0.05);
  EXPECT_GE(r.r_squared, 0.999);
  EXPECT_GE(r.c1, 0.0);
  EXPECT_EQ(r.kendall_tau, 1.0);
}
