// Acceptance gate: one pass/fail line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cateforge/cateforge.hpp"
#include "oracles.hpp"

using namespace cateforge;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

Outcome unbiasedness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& e : enumerate_true_cate(default_generator_spec())) {
    worst = std::max(worst, std::abs(oracle::expected_ra(e) - e.tau));
    worst = std::max(worst, std::abs(oracle::expected_dr(e, e.mu0, e.mu1, e.pi) - e.tau));
  }
  const double s = seconds_since(t0);
  return {worst <= 1e-10 && s < 1.0, "max |E[tau~] - tau| = " + fmt(worst) + ", " + fmt(s) + " s"};
}

Outcome double_robustness() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& e : enumerate_true_cate(default_generator_spec())) {
    for (auto [d0, d1] : {std::pair{0.7, 0.7}, std::pair{-1.3, -1.3}, std::pair{0.7, -1.3}, std::pair{-1.3, 0.7}})
      worst = std::max(worst, std::abs(oracle::expected_dr(e, e.mu0 + d0, e.mu1 + d1, e.pi) - e.tau));
    for (double pi_hat : {0.1, 0.3, 0.7, 0.9})
      worst = std::max(worst, std::abs(oracle::expected_dr(e, e.mu0, e.mu1, pi_hat) - e.tau));
  }
  const double s = seconds_since(t0);
  return {worst <= 1e-10 && s < 1.0, "max bias = " + fmt(worst) + ", " + fmt(s) + " s"};
}

Outcome r_identity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& e : enumerate_true_cate(default_generator_spec()))
    worst = std::max(worst, std::abs(oracle::expected_r_ratio(e) - e.tau));
  const double s = seconds_since(t0);
  return {worst <= 1e-10 && s < 1.0, "max |ratio - tau| = " + fmt(worst) + ", " + fmt(s) + " s"};
}

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  const std::size_t rows[] = {0, 1, 2, 3, 4, 5, 6, 7};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    rng::Stream s(seed, 77);
    Matrix x(8, 6);
    for (double& v : x.data()) v = s.normal();
    std::vector<double> y_real(8), y_prob(8), w(8);
    for (std::size_t i = 0; i < 8; ++i) {
      y_real[i] = s.uniform(-3.0, 3.0);
      y_prob[i] = s.uniform();
      w[i] = s.uniform(0.05, 2.0);
    }
    const struct {
      LossKind kind;
      OutputActivation act;
      const std::vector<double>& y;
    } cases[] = {{LossKind::MSE, OutputActivation::Identity, y_real},
                 {LossKind::BCE, OutputActivation::Sigmoid, y_prob},
                 {LossKind::WeightedMSE, OutputActivation::Identity, y_real}};
    for (const auto& c : cases) {
      const auto m = MlpModel::initialized(6, 10, c.act, 1000 + seed);
      const auto r = oracle::finite_difference_check(m, x, c.y, w, rows, c.kind, 1e-4);
      worst = std::max(worst, r.max_rel_error);
      checked += r.checked;
    }
  }
  const double s = seconds_since(t0);
  return {worst <= 1e-5 && s < 5.0,
          std::to_string(checked) + " gradients, max relative error " + fmt(worst) + ", " + fmt(s) + " s"};
}

Outcome pehe_units() {
  const std::vector<double> a = {0.25, -1.5, 3.0, 7.0};
  std::vector<double> shifted(a);
  for (auto& v : shifted) v += 2.0;
  const std::vector<double> hat = {1.0, 3.0}, truth = {0.0, 1.0};
  const double e0 = pehe(a, a);
  const double e2 = pehe(shifted, a);
  const double e3 = pehe(hat, truth);
  const bool ok = e0 == 0.0 && e2 == 2.0 && std::abs(e3 - std::sqrt(2.5)) <= 1e-12;
  return {ok, "pehe = " + fmt(e0) + ", " + fmt(e2) + ", " + fmt(e3)};
}

std::size_t worker_count() {
  if (const char* env = std::getenv("CATEFORGE_WORKERS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct Trend {
  Outcome widening;
  Outcome ordering;
};

// T-learner, default spec, seeds 1-5, sizes 300 and 3000, three settings.
Trend trends() {
  const auto t0 = Clock::now();
  ExperimentPlan plan;
  plan.learners = {Learner::T};
  plan.settings = {Channel::Perfect, Channel::None, Channel::EntangledSim};
  plan.train_sizes = {300, 3000};
  plan.seeds = {1, 2, 3, 4, 5};
  plan.test_size = 1000;
  ExperimentConfig cfg;
  const auto results = run_plan(plan, cfg, worker_count());
  const double s = seconds_since(t0);

  std::vector<std::vector<double>> by(6);  // setting-major, then size
  bool all_ok = true;
  for (const auto& r : results) {
    all_ok = all_ok && r.ok;
    const std::size_t si = r.key.setting == Channel::Perfect ? 0 : r.key.setting == Channel::None ? 1 : 2;
    by[si * 2 + (r.key.train_size == 3000 ? 1 : 0)].push_back(r.pehe);
  }
  auto med = [&](std::size_t setting, bool large) { return oracle::median(by[setting * 2 + (large ? 1 : 0)]); };
  const double p300 = med(0, false), p3000 = med(0, true);
  const double n300 = med(1, false), n3000 = med(1, true);
  const double e300 = med(2, false), e3000 = med(2, true);

  Trend t;
  const double gap300 = n300 - p300, gap3000 = n3000 - p3000;
  t.widening.passed = all_ok && p3000 < n3000 && gap3000 > gap300 && s < 600.0;
  t.widening.detail = "median Perfect/None n=300: " + fmt(p300) + "/" + fmt(n300) + ", n=3000: " + fmt(p3000) + "/" +
                      fmt(n3000) + "; gap " + fmt(gap300) + " -> " + fmt(gap3000);
  t.ordering.passed = all_ok && p3000 <= e3000 && e3000 <= 1.02 * n3000 && e300 <= 1.05 * n300 && s < 900.0;
  t.ordering.detail = "n=3000: " + fmt(p3000) + " <= " + fmt(e3000) + " <= " + fmt(1.02 * n3000) +
                      "; n=300: " + fmt(e300) + " <= " + fmt(1.05 * n300) + "; " + fmt(s) + " s";
  return t;
}

Outcome determinism() {
  ExperimentConfig cfg;
  double worst = 0.0;
  bool ok = true;
  for (auto l : {Learner::T, Learner::RA, Learner::DR, Learner::R})
    for (auto c : {Channel::Perfect, Channel::EntangledSim}) {
      const CellKey key{l, c, 300, 3};
      const auto a = run_cell(cfg, key, 1000);
      const auto b = run_cell(cfg, key, 1000);
      ok = ok && a.ok && b.ok;
      worst = std::max(worst, std::abs(a.pehe - b.pehe));
    }
  return {ok && worst <= 1e-12, "8 cells rerun, max |delta pehe| = " + fmt(worst)};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"1 pseudo-outcome unbiasedness (RA, DR)", unbiasedness},
      {"2 DR double robustness", double_robustness},
      {"3 R-learner weighted identity", r_identity},
      {"4 gradient correctness", gradients},
      {"5 PEHE unit values", pehe_units},
  };
  int failures = 0;
  auto report = [&](const std::string& name, const Outcome& o) {
    std::printf("[%s] %s: %s\n", o.passed ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failures += o.passed ? 0 : 1;
  };
  for (auto& [name, fn] : criteria) {
    try {
      report(name, fn());
    } catch (const std::exception& e) {
      report(name, {false, std::string("exception: ") + e.what()});
    }
  }
  try {
    const auto t = trends();
    report("6 None-Perfect gap widens with n (T-learner)", t.widening);
    report("7 EntangledSim between Perfect and None (T-learner)", t.ordering);
  } catch (const std::exception& e) {
    report("6 None-Perfect gap widens with n (T-learner)", {false, e.what()});
    report("7 EntangledSim between Perfect and None (T-learner)", {false, e.what()});
  }
  try {
    report("8 run_cell determinism", determinism());
  } catch (const std::exception& e) {
    report("8 run_cell determinism", {false, e.what()});
  }
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
