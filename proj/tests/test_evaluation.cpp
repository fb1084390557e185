#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cateforge/evaluation.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cateforge;

namespace {

// Small pool and short training so that grid-level tests stay fast.
ExperimentConfig cheap_config() {
  ExperimentConfig c;
  c.pool_size = 700;
  c.nuisance_train.epochs = 3;
  c.second_stage_train.epochs = 3;
  c.lr_grid = {1e-2};
  c.config_digest = "test";
  return c;
}

ExperimentResult record(Learner l, Channel c, std::size_t n, std::uint64_t seed, double pehe_value) {
  ExperimentResult r;
  r.key = {l, c, n, seed};
  r.pehe = pehe_value;
  r.ok = std::isfinite(pehe_value);
  r.config_digest = "d";
  return r;
}

}  // namespace

TEST(Pehe, Examples) {
  const std::vector<double> a = {0.5, -1.0, 2.0};
  EXPECT_EQ(pehe(a, a), 0.0);
  const std::vector<double> shifted = {2.5, 1.0, 4.0};
  EXPECT_NEAR(pehe(shifted, a), 2.0, 1e-15);
  const std::vector<double> hat = {1.0, 3.0}, truth = {0.0, 1.0};
  EXPECT_NEAR(pehe(hat, truth), std::sqrt(2.5), 1e-12);
  EXPECT_NEAR(pehe(hat, truth), 1.58113883, 1e-8);
}

TEST(Pehe, Errors) {
  const std::vector<double> a = {1.0}, b = {1.0, 2.0}, empty;
  EXPECT_THROW(pehe(a, b), DimensionError);
  EXPECT_THROW(pehe(empty, empty), SizeError);
  const std::vector<double> nan = {std::nan("")};
  EXPECT_THROW(pehe(nan, a), ContractError);
}

TEST(Pehe, PermutationAndScaleInvariance) {
  auto a = testutil::random_vector(50, 1, -3.0, 3.0);
  auto b = testutil::random_vector(50, 2, -3.0, 3.0);
  const double base = pehe(a, b);
  std::vector<std::size_t> perm(50);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng::Stream(3).shuffle(std::span<std::size_t>(perm));
  const auto pa = select<double>(a, perm), pb = select<double>(b, perm);
  EXPECT_NEAR(pehe(pa, pb), base, 1e-12);
  for (double c : {-2.0, 0.5, 3.0}) {
    std::vector<double> ca(a), cb(b);
    for (auto& v : ca) v *= c;
    for (auto& v : cb) v *= c;
    EXPECT_NEAR(pehe(ca, cb), std::abs(c) * base, 1e-12);
  }
  EXPECT_GE(base, 0.0);
}

TEST(RunCell, Deterministic) {
  const auto cfg = cheap_config();
  for (auto l : {Learner::T, Learner::DR, Learner::R}) {
    const CellKey key{l, Channel::EntangledSim, 200, 4};
    const auto a = run_cell(cfg, key, 300);
    const auto b = run_cell(cfg, key, 300);
    ASSERT_TRUE(a.ok) << a.error;
    EXPECT_NEAR(a.pehe, b.pehe, 1e-12);
    EXPECT_EQ(a.tau_hat, b.tau_hat);
  }
}

TEST(RunCell, PerfectTLearnerBeatsZeroPredictor) {
  ExperimentConfig cfg;
  cfg.pool_size = 4000;
  const auto r = run_cell(cfg, {Learner::T, Channel::Perfect, 3000, 1}, 1000);
  ASSERT_TRUE(r.ok) << r.error;
  EXPECT_TRUE(std::isfinite(r.pehe));
  EXPECT_LT(r.pehe, r.baseline_pehe);
  std::vector<double> zeros(r.tau_true.size(), 0.0);
  EXPECT_NEAR(r.baseline_pehe, pehe(zeros, r.tau_true), 1e-15);
}

TEST(RunCell, FixedTestSetAcrossCells) {
  const auto cfg = cheap_config();
  const Learner learners[] = {Learner::T, Learner::RA};
  std::vector<std::int64_t> reference;
  for (auto setting : {Channel::Perfect, Channel::None})
    for (std::size_t n : {100, 300}) {
      for (const auto& r : run_learners(cfg, setting, n, 7, 200, learners)) {
        ASSERT_TRUE(r.ok) << r.error;
        if (reference.empty()) reference = r.test_ids;
        EXPECT_EQ(r.test_ids, reference);
      }
    }
  const auto other = run_cell(cfg, {Learner::T, Channel::Perfect, 100, 8}, 200);
  EXPECT_NE(other.test_ids, reference);
}

TEST(RunCell, SharedFirstStageMatchesSingleLearnerRun) {
  const auto cfg = cheap_config();
  const Learner learners[] = {Learner::T, Learner::RA, Learner::DR, Learner::R};
  const auto all = run_learners(cfg, Channel::Perfect, 200, 2, 200, learners);
  for (const auto& r : all) {
    const auto one = run_cell(cfg, r.key, 200);
    EXPECT_EQ(one.pehe, r.pehe) << learner_name(r.key.learner);
  }
}

TEST(RunCell, FailureIsRecordedWithCellIdentity) {
  auto cfg = cheap_config();
  const auto r = run_cell(cfg, {Learner::T, Channel::Perfect, 600, 1}, 200);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.error.find("[T/Perfect/n=600/seed=1]"), std::string::npos) << r.error;
}

TEST(Plan, GridCardinality) {
  const auto cfg = cheap_config();
  ExperimentPlan plan;
  plan.learners = {Learner::T};
  plan.settings = {Channel::Perfect, Channel::None};
  plan.train_sizes = {100, 200};
  plan.seeds = {1, 2, 3, 4, 5};
  plan.test_size = 200;
  const auto results = run_plan(plan, cfg, 1);
  ASSERT_EQ(results.size(), 20u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.ok) << r.error;
    EXPECT_GE(r.pehe, 0.0);
    EXPECT_EQ(r.config_digest, "test");
  }
  const auto parallel = run_plan(plan, cfg, 3);
  ASSERT_EQ(parallel.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(parallel[i].key, results[i].key);
    EXPECT_EQ(parallel[i].pehe, results[i].pehe);
  }
}

TEST(Plan, EmptyAxisRejectedBeforeWork) {
  ExperimentPlan plan;
  plan.settings.clear();
  try {
    run_plan(plan, cheap_config());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "plan.settings");
  }
  plan = ExperimentPlan{};
  plan.seeds = {1, 1};
  EXPECT_FALSE(check_plan(plan, ExperimentConfig{}).empty());
}

TEST(Plan, PoolMustHoldLargestCell) {
  ExperimentPlan plan;
  auto cfg = cheap_config();
  const auto v = check_plan(plan, cfg);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v.front().key, "plan.pool_size");
}

TEST(Summary, Quantiles) {
  const auto b = box_stats({5, 1, 4, 2, 3});
  EXPECT_EQ(b.min, 1);
  EXPECT_EQ(b.q1, 2);
  EXPECT_EQ(b.median, 3);
  EXPECT_EQ(b.q3, 4);
  EXPECT_EQ(b.max, 5);
  const auto c = box_stats({4, 1, 3, 2});
  EXPECT_DOUBLE_EQ(c.q1, 1.75);
  EXPECT_DOUBLE_EQ(c.median, 2.5);
  EXPECT_DOUBLE_EQ(c.q3, 3.25);
  EXPECT_EQ(c.median, oracle::median({4, 1, 3, 2}));
}

TEST(Summary, FailedCellsCountedNotSummarized) {
  std::vector<ExperimentResult> rs = {record(Learner::T, Channel::Perfect, 300, 1, 1.0),
                                      record(Learner::T, Channel::Perfect, 300, 2, std::nan("")),
                                      record(Learner::T, Channel::Perfect, 300, 3, 3.0)};
  const auto s = summarize(rs);
  const auto& b = s.groups.at({Learner::T, Channel::Perfect, 300});
  EXPECT_EQ(b.count, 2u);
  EXPECT_EQ(b.failed, 1u);
  EXPECT_EQ(b.median, 2.0);
  EXPECT_EQ(s.failed_cells, 1u);
}

TEST(Summary, TrendChecks) {
  std::vector<ExperimentResult> rs;
  auto add = [&](Channel c, std::size_t n, double v) {
    for (std::uint64_t s = 1; s <= 3; ++s) rs.push_back(record(Learner::T, c, n, s, v));
  };
  add(Channel::Perfect, 300, 1.0);
  add(Channel::None, 300, 1.1);
  add(Channel::EntangledSim, 300, 1.15);
  add(Channel::Perfect, 3000, 0.5);
  add(Channel::None, 3000, 1.0);
  add(Channel::EntangledSim, 3000, 0.7);
  const auto s = summarize(rs);
  ASSERT_EQ(s.trends.size(), 4u);
  for (const auto& t : s.trends) EXPECT_TRUE(t.applicable && t.passed) << t.name;

  rs.clear();
  add(Channel::Perfect, 300, 1.0);
  add(Channel::None, 300, 1.1);
  add(Channel::EntangledSim, 300, 1.2);  // above 1.05 x None
  add(Channel::Perfect, 3000, 0.5);
  add(Channel::None, 3000, 0.55);        // gap shrinks
  add(Channel::EntangledSim, 3000, 0.4); // below Perfect
  const auto f = summarize(rs);
  for (const auto& t : f.trends)
    if (t.name.find("Perfect < None") == std::string::npos) EXPECT_FALSE(t.passed) << t.name;
}

TEST(ResultsCsv, RoundTripAndNan) {
  std::vector<ExperimentResult> rs = {record(Learner::DR, Channel::EntangledSim, 1000, 3, 0.123456789012345),
                                      record(Learner::R, Channel::None, 300, 4, std::nan(""))};
  rs[0].wall_ms = 12.5;
  std::stringstream ss;
  write_results_csv(ss, rs);
  const std::string text = ss.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "learner,setting,train_size,seed,pehe,wall_ms,config_digest");
  EXPECT_NE(text.find("R,None,300,4,nan,"), std::string::npos);
  const auto back = read_results_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].key, rs[0].key);
  EXPECT_EQ(back[0].pehe, rs[0].pehe);
  EXPECT_EQ(back[0].wall_ms, 12.5);
  EXPECT_EQ(back[0].config_digest, "d");
  EXPECT_FALSE(back[1].ok);
}

TEST(ResultsCsv, BadHeader) {
  std::stringstream ss("a,b\n");
  EXPECT_THROW(read_results_csv(ss), FormatError);
}

TEST(Report, ListsTrendsAndFailures) {
  std::vector<ExperimentResult> rs = {record(Learner::T, Channel::Perfect, 300, 1, 1.0),
                                      record(Learner::T, Channel::None, 300, 1, std::nan(""))};
  rs[1].error = "boom";
  const auto s = summarize(rs);
  std::stringstream ss;
  write_report(ss, s, rs);
  EXPECT_NE(ss.str().find("Failed cells: 1"), std::string::npos);
  EXPECT_NE(ss.str().find("boom"), std::string::npos);
  std::stringstream sum;
  write_summary_csv(sum, s);
  EXPECT_EQ(sum.str().substr(0, sum.str().find('\n')), "learner,setting,train_size,count,failed,min,q1,median,q3,max");
}
