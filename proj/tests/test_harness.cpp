#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "spore/harness.hpp"
#include "test_support.hpp"

using namespace spore;
using namespace spore::testing;

namespace {

ExperimentConfig cheap_sweep() {
  auto kv = KeyValueFile::parse_string(
      "n_dims = 10\n"
      "sparsity = 2\n"
      "n_sensors = 1, 2, 4, 6, 10\n"
      "n_observations = 20\n"
      "algorithms = l1_smv, gm_smv, sumlam_oracle\n"
      "n_trials = 10\n"
      "seed = 5\n");
  return ExperimentConfig::from_kv(kv);
}

std::string without_wall_time(std::vector<TrialRecord> records) {
  for (auto& r : records) r.wall_time = 0.0;
  return records_to_csv(records);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("spore_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Csv, EscapeOnlyWhenNeeded) {
  EXPECT_EQ(csv_escape("plain"), "plain");
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_escape("two\nlines"), "\"two\nlines\"");
}

TEST(Csv, RoundTripsAwkwardFields) {
  const std::vector<std::vector<std::string>> rows = {
      {"a", "b,c", "\"q\""}, {"", "line1\nline2", "x"}, {"0.1;0.2", "", ""}};
  std::ostringstream out;
  for (const auto& r : rows) write_csv_row(out, r);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_csv(in), rows);
}

TEST(Csv, CrlfLineEndings) {
  std::istringstream in("a,b\r\n1,2\r\n");
  const auto rows = parse_csv(in);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1], (std::vector<std::string>{"1", "2"}));
}

TEST(Csv, AtomicWriteReplacesFile) {
  const auto p = temp_path("atomic.csv");
  write_file_atomic(p, "first\n");
  write_file_atomic(p, "second\n");
  std::ifstream in(p);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(s, "second\n");
  std::filesystem::remove(p);
}

TEST(VectorText, RoundTrip) {
  const Vector v = vec({0.1, 1e-300, 3.0, 0.0});
  EXPECT_EQ(parse_vector("v", join_vector(v)), v);
  EXPECT_EQ(parse_matrix("phi", "1,2,3;4,5,6"), (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished());
  EXPECT_THROW(parse_matrix("phi", "1,2;3"), ArgumentError);
  EXPECT_TRUE(std::isnan(parse_metric("m", format_metric(kNaN))));
}

TEST(ExperimentConfigTest, ListsBecomeAxes) {
  const ExperimentConfig c = cheap_sweep();
  EXPECT_EQ(c.axes.n_sensors, (std::vector<int>{1, 2, 4, 6, 10}));
  EXPECT_EQ(c.axes.n_dims, std::vector<int>{10});
  EXPECT_EQ(c.axes.n_groups, std::vector<int>{GenerationConfig{}.n_groups});
  const auto grid = c.grid();
  ASSERT_EQ(grid.size(), 5u);
  EXPECT_EQ(grid[3].n_sensors, 6);
}

TEST(ExperimentConfigTest, GridVariesLastAxisFastest) {
  auto kv = KeyValueFile::parse_string("sparsity = 1, 2\nnoise_variance = 0.1, 0.2, 0.3\n");
  const auto grid = ExperimentConfig::from_kv(kv).grid();
  ASSERT_EQ(grid.size(), 6u);
  EXPECT_EQ(grid[1].sparsity, 1);
  EXPECT_EQ(grid[1].noise_variance, 0.2);
  EXPECT_EQ(grid[3].sparsity, 2);
}

TEST(ExperimentConfigTest, Overrides) {
  auto kv = KeyValueFile::parse_string(
      "algorithms = spore\nspore.learning_rate = 0.05\nalternating.x_max = 7\nrates = 0.5,0,0.5\n"
      "phi = 1,2,3\nn_dims = 3\nsparsity = 2\nn_sensors = 1\n");
  const ExperimentConfig c = ExperimentConfig::from_kv(kv);
  EXPECT_EQ(c.settings.spore.learning_rate, 0.05);
  EXPECT_EQ(c.settings.alternating.x_max, 7);
  EXPECT_EQ(*c.fixed_rates, vec({0.5, 0.0, 0.5}));
  EXPECT_EQ(c.fixed_phi->cols(), 3);
}

TEST(ExperimentConfigTest, Errors) {
  EXPECT_THROW(ExperimentConfig::from_kv(KeyValueFile::parse_string("algorithms = omp\n")), ArgumentError);
  EXPECT_THROW(ExperimentConfig::from_kv(KeyValueFile::parse_string("phi = 1,2\nn_dims = 3\nn_sensors = 1\n")),
               ArgumentError);
  EXPECT_THROW(ExperimentConfig::from_kv(KeyValueFile::parse_string("rates = 1,2\nn_dims = 3\n")), ArgumentError);
}

TEST(Seeds, TrialSeedIgnoresAlgorithmsAndOtherGridPoints) {
  GenerationConfig p;
  p.n_sensors = 4;
  const auto s = trial_seed(9, p, 3);
  p.seed = 12345;  // the point's own seed is not an input
  EXPECT_EQ(trial_seed(9, p, 3), s);
  EXPECT_NE(trial_seed(9, p, 4), s);
  EXPECT_NE(trial_seed(10, p, 3), s);
  p.n_sensors = 5;
  EXPECT_NE(trial_seed(9, p, 3), s);
  EXPECT_NE(algorithm_seed(s, "spore"), algorithm_seed(s, "alt_spore"));

  ExperimentConfig a = cheap_sweep(), b = cheap_sweep();
  b.algorithms = {"gm_smv"};
  a.n_trials = b.n_trials = 2;
  const auto ra = run_experiment(a), rb = run_experiment(b);
  EXPECT_EQ(ra[1].seed, rb[0].seed);
  EXPECT_EQ(ra[1].cosine, rb[0].cosine);
}

TEST(RunExperiment, RecordCountAndOrder) {
  const auto recs = run_experiment(cheap_sweep());
  ASSERT_EQ(recs.size(), 150u);
  for (std::size_t i = 1; i < recs.size(); ++i)
    EXPECT_LE(std::tie(recs[i - 1].grid_index, recs[i - 1].trial, recs[i - 1].algorithm_index),
              std::tie(recs[i].grid_index, recs[i].trial, recs[i].algorithm_index));
  EXPECT_EQ(recs[0].algorithm, "l1_smv");
  EXPECT_EQ(recs[2].algorithm, "sumlam_oracle");
  for (const auto& r : recs) {
    EXPECT_EQ(r.rates_true.size(), 10);
    EXPECT_NEAR(r.rates_true.sum(), GenerationConfig{}.rate_total, 1e-12);
  }
}

TEST(RunExperiment, ZeroTrialsGivesHeaderOnly) {
  ExperimentConfig c = cheap_sweep();
  c.n_trials = 0;
  const auto recs = run_experiment(c);
  EXPECT_TRUE(recs.empty());
  std::string header;
  for (std::size_t i = 0; i < record_header().size(); ++i) header += (i ? "," : "") + record_header()[i];
  EXPECT_EQ(records_to_csv(recs), header + "\n");
}

TEST(RunExperiment, ReplayAndThreadInvariance) {
  ExperimentConfig c = cheap_sweep();
  c.n_trials = 3;
  const std::string one = without_wall_time(run_experiment(c, 1));
  EXPECT_EQ(without_wall_time(run_experiment(c, 1)), one);
  EXPECT_EQ(without_wall_time(run_experiment(c, 4)), one);
}

TEST(RunExperiment, FixedPhiAndRatesAreUsed) {
  auto kv = KeyValueFile::parse_string(
      "phi = 1,2,3\nrates = 0.5,0,0.5\nn_dims = 3\nsparsity = 2\nn_sensors = 1\nn_observations = 30\n"
      "algorithms = l1_smv\nn_trials = 2\n");
  const auto recs = run_experiment(ExperimentConfig::from_kv(kv));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].rates_true, vec({0.5, 0.0, 0.5}));
}

TEST(Records, CsvRoundTrip) {
  ExperimentConfig c = cheap_sweep();
  c.n_trials = 2;
  const auto recs = run_experiment(c);
  const std::string text = records_to_csv(recs);
  std::istringstream in(text);
  const auto back = records_from_csv(in);
  ASSERT_EQ(back.size(), recs.size());
  EXPECT_EQ(records_to_csv(back), text);
}

TEST(Records, HeaderMismatchRejected) {
  std::istringstream in("grid_index,trial\n0,0\n");
  EXPECT_THROW(records_from_csv(in), std::runtime_error);
  std::istringstream empty("");
  EXPECT_THROW(records_from_csv(empty), std::runtime_error);
}

TEST(Summary, MeanAndHalfStd) {
  std::vector<TrialRecord> recs(4);
  const double cos[] = {0.9, 0.7, 0.8, kNaN};
  for (int i = 0; i < 4; ++i) {
    recs[i].algorithm = i == 3 ? "b" : "a";
    recs[i].cosine = cos[i];
    recs[i].mse = 0.1 * (i + 1);
  }
  const auto rows = summarize(recs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].n, 3);
  EXPECT_NEAR(rows[0].cosine_mean, 0.8, 1e-15);
  EXPECT_NEAR(rows[0].cosine_half_std, 0.05, 1e-15);  // sample std of {0.9, 0.7, 0.8} is 0.1
  EXPECT_NEAR(rows[0].mse_mean, 0.2, 1e-15);
  EXPECT_EQ(rows[1].n, 0);
  EXPECT_TRUE(std::isnan(rows[1].cosine_mean));
  EXPECT_NE(summary_table(rows).find("nan"), std::string::npos);
  EXPECT_EQ(summary_to_csv(rows).substr(0, 10), "grid_index");
}

TEST(InstanceFile, RoundTrip) {
  GenerationConfig c;
  c.n_dims = 6;
  c.sparsity = 2;
  c.n_sensors = 2;
  c.n_groups = 3;
  c.n_observations = 9;
  c.seed = 77;
  const Instance inst = generate_instance(c);
  const auto p = temp_path("instance.txt");
  save_instance(p, inst);
  const Instance back = load_instance(p);
  std::filesystem::remove(p);
  EXPECT_EQ(back.config, inst.config);
  EXPECT_EQ(back.rates.values(), inst.rates.values());
  EXPECT_EQ(back.batch.group_of, inst.batch.group_of);
  EXPECT_EQ(back.batch.measurements, inst.batch.measurements);
  EXPECT_EQ(back.signals.counts, inst.signals.counts);
  for (int g = 0; g < 3; ++g) EXPECT_EQ(back.ensemble.matrices[g], inst.ensemble.matrices[g]);
  EXPECT_EQ(instance_to_string(back), instance_to_string(inst));
}

TEST(InstanceFile, BadHeaderRejected) {
  std::istringstream wrong_version("spore-instance 99\n");
  EXPECT_THROW(instance_from_stream(wrong_version), std::runtime_error);
  std::istringstream garbage("hello\n");
  EXPECT_THROW(instance_from_stream(garbage), std::runtime_error);
  EXPECT_THROW(load_instance(temp_path("does_not_exist")), std::runtime_error);
}

TEST(EfficiencyConfigTest, Validation) {
  EXPECT_THROW(EfficiencyConfig::from_kv(KeyValueFile::parse_string("n_trials = 1\n")), ArgumentError);
  EXPECT_THROW(EfficiencyConfig::from_kv(KeyValueFile::parse_string("rate_value = 0\n")), ArgumentError);
  const auto c = EfficiencyConfig::from_kv(KeyValueFile::parse_string("sparsity = 1, 3\nn_observations = 250\n"));
  EXPECT_EQ(c.sparsity, (std::vector<int>{1, 3}));
  EXPECT_EQ(c.n_observations, std::vector<int>{250});
  EXPECT_EQ(c.n_groups, 20);
}

TEST(EfficiencyStudy, SmallRunPoolsSupport) {
  EfficiencyConfig c;
  c.sparsity = {2};
  c.n_observations = {60};
  c.n_dims = 5;
  c.n_groups = 2;
  c.n_trials = 3;
  c.spore.max_iters = 200;
  const auto rows = efficiency_study(c);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].n_pooled, 6);
  EXPECT_GT(rows[0].variance, 0.0);
  EXPECT_DOUBLE_EQ(rows[0].cr_bound, 1.0 / 60);
  EXPECT_EQ(efficiency_to_csv(rows).substr(0, 8), "sparsity");
}
