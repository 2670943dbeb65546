#include <gtest/gtest.h>

#include "spore/metrics.hpp"
#include "spore/spore.hpp"
#include "test_support.hpp"

using namespace spore;
using namespace spore::testing;

namespace {

MeasurementBatch one_column(const Matrix& phi, const Vector& y, double s2) {
  MeasurementBatch b;
  b.measurements = y;
  b.group_of = {0};
  b.noise_variance = s2;
  return b;
}

SensingEnsemble single(const Matrix& phi, int n_cols) {
  SensingEnsemble e;
  e.matrices = {phi};
  e.group_of.assign(n_cols, 0);
  return e;
}

SampleSet points(const IntMatrix& pts) {
  SampleSet s;
  s.points = pts;
  s.log_weights = Vector::Zero(pts.cols());
  s.log_normalizer = std::log(static_cast<double>(pts.cols()));
  return s;
}

}  // namespace

TEST(Gradient, SingleSampleAtItsOwnRateIsZero) {
  const Matrix phi = row_matrix({1, 2, 3});
  IntMatrix x(3, 1);
  x << 1, 2, 1;
  const Vector lam = x.col(0).cast<double>();
  const auto b = one_column(phi, phi * lam, 0.1);
  const std::vector<int> cols = {0};
  const auto g = spore_gradient(b, single(phi, 1), cols, lam, points(x), 1e-3);
  EXPECT_EQ(g.n_used, 1);
  EXPECT_NEAR(g.gradient.norm(), 0.0, 1e-15);
}

TEST(Gradient, OneDominantSampleCollapsesWeights) {
  const Matrix phi = row_matrix({1.0, 10.0});
  IntMatrix x(2, 2);
  x << 2, 0, 0, 3;  // images 2 and 30
  const Vector lam = vec({0.5, 1.5});
  const auto b = one_column(phi, vec({2.0}), 0.01);
  const std::vector<int> cols = {0};
  const auto g = spore_gradient(b, single(phi, 1), cols, lam, points(x), 1e-3);
  const Vector expect = vec({2.0 / 0.5 - 1.0, 0.0 / 1.5 - 1.0});
  EXPECT_NEAR((g.gradient - expect).norm(), 0.0, 1e-12);
}

TEST(Gradient, LatticeMatchesDerivativeOfExactLikelihood) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(seed);
    const Matrix phi = uniform_matrix(2, 2, rng, 0.2, 1.5);
    const Instance inst = fixed_instance(phi, vec({0.7, 0.4}), 25, 0.08, seed + 10);
    const Vector at = vec({0.5 + 0.3 * uniform01(rng), 0.3 + 0.5 * uniform01(rng)});
    const auto cols = all_columns(inst.batch);
    const int x_max = 5;
    const Vector g = spore_gradient(inst.batch, inst.ensemble, cols, at, lattice_samples(at, x_max), 0.0).gradient;
    // Richardson-extrapolated central differences
    Vector fd(2);
    auto f = [&](const Vector& l) { return exact_log_likelihood_small(inst.batch, inst.ensemble, l, x_max).value; };
    for (int n = 0; n < 2; ++n) {
      auto diff = [&](double h) {
        Vector up = at, dn = at;
        up[n] += h;
        dn[n] -= h;
        return (f(up) - f(dn)) / (2 * h);
      };
      fd[n] = (4.0 * diff(1e-3) - diff(2e-3)) / 3.0;
    }
    EXPECT_LE((g - fd).norm() / fd.norm(), 1e-10);
  }
}

TEST(Gradient, AllColumnsUnderflowingGivesFlaggedZeroStep) {
  const Matrix phi = row_matrix({1.0});
  const auto b = one_column(phi, vec({1e6}), 0.01);
  const std::vector<int> cols = {0};
  const auto g = spore_gradient(b, single(phi, 1), cols, vec({1.0}), lattice_samples(vec({1.0}), 4), 1e-3);
  EXPECT_TRUE(g.zero_step());
  EXPECT_EQ(g.n_skipped, 1);
  EXPECT_TRUE(g.gradient.isZero());
}

TEST(Gradient, RejectsRatesBelowFloor) {
  const Matrix phi = row_matrix({1.0});
  const auto b = one_column(phi, vec({1.0}), 0.01);
  const std::vector<int> cols = {0};
  EXPECT_THROW(spore_gradient(b, single(phi, 1), cols, vec({1e-4}), lattice_samples(vec({1.0}), 3), 1e-3),
               ArgumentError);
}

TEST(RescaleStep, UnderCapUnchanged) {
  const Vector d = vec({0.3, 0.4});  // norm 0.5
  EXPECT_EQ(rescale_step(d, vec({1, 1}), 1e-3, 1.0), d);
}

TEST(RescaleStep, ExactRescale) {
  const Vector out = rescale_step(vec({2.0, 0.0}), vec({5, 5}), 1e-3, 1.0);
  EXPECT_NEAR(out[0], 1.0, 1e-15);
  EXPECT_EQ(out[1], 0.0);
}

TEST(RescaleStep, ClippedIndicesDoNotCountTowardNorm) {
  // second entry would land below the floor, so only |delta_1| = 2 sets the scale
  const Vector out = rescale_step(vec({2.0, -50.0}), vec({1.0, 0.5}), 1e-3, 1.0);
  EXPECT_NEAR(out[0], 1.0, 1e-15);
  EXPECT_NEAR(out[1], -25.0, 1e-13);
}

TEST(ClipUpdate, FloorsAndAdds) {
  EXPECT_EQ(clip_update(vec({1e-3}), vec({-1.0}), 1e-3)[0], 1e-3);
  EXPECT_EQ(clip_update(vec({1.0}), vec({0.5}), 1e-3)[0], 1.5);
}

TEST(ClipUpdate, NeverBelowFloor) {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    Vector l(5), d(5);
    for (int i = 0; i < 5; ++i) {
      l[i] = 1e-3 + uniform01(rng);
      d[i] = 4.0 * (uniform01(rng) - 0.5);
    }
    EXPECT_GE(clip_update(l, d, 1e-3).minCoeff(), 1e-3);
  }
}

TEST(SporeConfigKv, DefaultsAndOverrides) {
  const SporeConfig d;
  EXPECT_EQ(d.n_samples, 1000);
  EXPECT_EQ(d.batch_size, 100);
  EXPECT_EQ(d.rate_floor, 1e-3);
  EXPECT_EQ(d.init_value, 0.1);
  auto kv = KeyValueFile::parse_string("spore.learning_rate = 0.1\nspore.patience = 7\nother = 1\n");
  SporeConfig c;
  c.apply_kv(kv, "spore.");
  EXPECT_EQ(c.learning_rate, 0.1);
  EXPECT_EQ(c.patience, 7);
  EXPECT_EQ(SporeConfig::from_kv(c.to_kv()), c);
  kv.set("spore.rate_floor", "0.5");
  EXPECT_THROW(c.apply_kv(kv, "spore."), ArgumentError);
}

TEST(RunSpore, RecoversFig2Instance) {
  Vector lam = vec({0.5, 0.0, 0.5});
  const Instance inst = fixed_instance(row_matrix({1, 2, 3}), lam, 1000, 0.02, 11);
  Rng rng(12);
  const SporeResult r = run_spore(inst.batch, inst.ensemble, SporeConfig{}, rng);
  EXPECT_GE(cosine_similarity(r.rates_hat.values(), lam), 0.97);
  EXPECT_GE(r.rates_hat.values().minCoeff(), 1e-3);
  EXPECT_EQ(static_cast<int>(r.trace.size()), r.n_iters);
}

TEST(RunSpore, PureNoiseShrinksToFloor) {
  Vector zero = Vector::Zero(3);
  SensingEnsemble e;
  e.matrices = {Matrix::Constant(2, 3, 0.0)};
  Rng prng(13);
  e.matrices[0] = uniform_matrix(2, 3, prng, 0.5, 1.0);
  GenerationConfig c;
  c.n_dims = 3;
  c.sparsity = 1;
  c.n_sensors = 2;
  c.n_observations = 200;
  c.noise_variance = 0.01;
  c.seed = 14;
  const Instance inst = generate_instance(c, PoissonRates(zero), e);
  Rng rng(15);
  SporeConfig cfg;
  const SporeResult r = run_spore(inst.batch, inst.ensemble, cfg, rng);
  EXPECT_LE(r.rates_hat.values().maxCoeff(), 10 * cfg.rate_floor);
  // the exact likelihood agrees that small rates beat the starting point
  EXPECT_GT(exact_log_likelihood_small(inst.batch, inst.ensemble, r.rates_hat.values(), 4).value,
            exact_log_likelihood_small(inst.batch, inst.ensemble, Vector::Constant(3, cfg.init_value), 4).value);
}

TEST(RunSpore, SameSeedSameTrace) {
  const Instance inst = fixed_instance(row_matrix({1, 2, 3}), vec({0.5, 0.0, 0.5}), 200, 0.02, 16);
  SporeConfig cfg;
  cfg.max_iters = 300;
  Rng a(1), b(1);
  const auto ra = run_spore(inst.batch, inst.ensemble, cfg, a);
  const auto rb = run_spore(inst.batch, inst.ensemble, cfg, b);
  EXPECT_EQ(ra.rates_hat.values(), rb.rates_hat.values());
  EXPECT_EQ(ra.n_iters, rb.n_iters);
}

TEST(RunSpore, StopsAfterAlphaCuts) {
  const Instance inst = fixed_instance(row_matrix({1, 2, 3}), vec({0.5, 0.0, 0.5}), 200, 0.02, 17);
  SporeConfig cfg;
  cfg.patience = 3;
  cfg.ma_tol = 0.0;
  Rng rng(2);
  const auto r = run_spore(inst.batch, inst.ensemble, cfg, rng);
  EXPECT_EQ(r.termination, Termination::AlphaExhausted);
  EXPECT_NEAR(r.trace.back().alpha, cfg.learning_rate * 0.25, 1e-15);  // two cuts before the stopping one
  EXPECT_STREQ(to_string(r.termination), "alpha_exhausted");
}

TEST(RunSpore, MaxItersHonored) {
  const Instance inst = fixed_instance(row_matrix({1, 2, 3}), vec({0.5, 0.0, 0.5}), 100, 0.02, 18);
  SporeConfig cfg;
  cfg.max_iters = 25;
  cfg.ma_window = 50;
  Rng rng(3);
  const auto r = run_spore(inst.batch, inst.ensemble, cfg, rng);
  EXPECT_EQ(r.n_iters, 25);
  EXPECT_EQ(r.termination, Termination::MaxIters);
}

TEST(RunSpore, RejectsNoiselessBatch) {
  const Instance inst = fixed_instance(row_matrix({1, 2, 3}), vec({0.5, 0.0, 0.5}), 10, 0.0, 19);
  Rng rng(4);
  EXPECT_THROW(run_spore(inst.batch, inst.ensemble, SporeConfig{}, rng), ArgumentError);
}

TEST(TraceCsv, HeaderAndRows) {
  std::ostringstream out;
  write_trace_csv(out, {{1, -2.5, 0.1, 0, 0.02}, {2, kNaN, 0.0, 3, 0.01}});
  EXPECT_EQ(out.str(), "iter,objective_estimate,step_norm,n_skipped,alpha\n1,-2.5,0.1,0,0.02\n2,nan,0,3,0.01\n");
}
