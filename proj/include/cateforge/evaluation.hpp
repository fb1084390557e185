#pragma once

// PEHE and the experiment grid: learner x setting x training size x seed.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "cateforge/common.hpp"
#include "cateforge/datagen.hpp"
#include "cateforge/metalearners.hpp"
#include "cateforge/neuralcore.hpp"
#include "cateforge/nuisance.hpp"
#include "cateforge/representations.hpp"

namespace cateforge {

// Root mean squared difference between estimated and true effects.
inline double pehe(std::span<const double> tau_hat, std::span<const double> tau_true) {
  if (tau_hat.size() != tau_true.size()) throw DimensionError("pehe: length mismatch");
  if (tau_hat.empty()) throw SizeError("pehe: empty input");
  double ss = 0.0;
  for (std::size_t i = 0; i < tau_hat.size(); ++i) {
    if (!std::isfinite(tau_hat[i]) || !std::isfinite(tau_true[i])) throw ContractError("pehe: non-finite input");
    const double d = tau_hat[i] - tau_true[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(tau_hat.size()));
}

// Everything a cell needs besides its grid coordinates.
struct ExperimentConfig {
  GeneratorSpec generator = default_generator_spec();
  RepresentationConfig representation;  // EntangledSim parameters and embedding path
  TrainConfig nuisance_train;
  TrainConfig second_stage_train;
  std::vector<double> lr_grid = default_lr_grid();
  double clip_epsilon = kDefaultClipEpsilon;
  std::size_t pool_size = 10000;
  std::string dataset_path;  // when set, the pool is read from this CSV instead of generated
  std::string config_digest;
};

struct ExperimentPlan {
  std::vector<std::size_t> train_sizes = {300, 1000, 3000, 9000};
  std::size_t test_size = 1000;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<Channel> settings = {Channel::Perfect, Channel::None, Channel::EntangledSim};
  std::vector<Learner> learners = {Learner::T, Learner::RA, Learner::DR, Learner::R};
};

inline std::vector<Violation> check_plan(const ExperimentPlan& plan, const ExperimentConfig& cfg) {
  std::vector<Violation> out;
  if (plan.train_sizes.empty()) out.push_back({"plan.train_sizes", "must not be empty"});
  if (plan.seeds.empty()) out.push_back({"plan.seeds", "must not be empty"});
  if (plan.settings.empty()) out.push_back({"plan.settings", "must not be empty"});
  if (plan.learners.empty()) out.push_back({"plan.learners", "must not be empty"});
  if (plan.test_size == 0) out.push_back({"plan.test_size", "must be positive"});
  for (auto s : plan.train_sizes)
    if (s < 2) out.push_back({"plan.train_sizes", "training sizes must be at least 2"});
  auto seeds = plan.seeds;
  std::sort(seeds.begin(), seeds.end());
  if (std::adjacent_find(seeds.begin(), seeds.end()) != seeds.end())
    out.push_back({"plan.seeds", "seeds must be distinct"});
  std::size_t max_train = plan.train_sizes.empty() ? 0 : *std::max_element(plan.train_sizes.begin(), plan.train_sizes.end());
  if (cfg.dataset_path.empty() && max_train + plan.test_size > cfg.pool_size)
    out.push_back({"plan.pool_size", "pool_size must hold the largest training size plus the test size"});
  if (!(cfg.clip_epsilon > 0.0 && cfg.clip_epsilon < 0.5))
    out.push_back({"metalearner.clip_epsilon", "must lie in (0, 0.5)"});
  if (std::find(plan.settings.begin(), plan.settings.end(), Channel::ExternalEmbedding) != plan.settings.end() &&
      cfg.representation.embedding_path.empty())
    out.push_back({"representation.embedding_path", "required for the ExternalEmbedding setting"});
  return out;
}

struct CellKey {
  Learner learner = Learner::T;
  Channel setting = Channel::Perfect;
  std::size_t train_size = 0;
  std::uint64_t seed = 0;

  auto tie() const { return std::tuple(static_cast<int>(learner), static_cast<int>(setting), train_size, seed); }
  friend bool operator==(const CellKey& a, const CellKey& b) { return a.tie() == b.tie(); }
  friend bool operator<(const CellKey& a, const CellKey& b) { return a.tie() < b.tie(); }
};

struct ExperimentResult {
  CellKey key;
  double pehe = std::numeric_limits<double>::quiet_NaN();
  double baseline_pehe = std::numeric_limits<double>::quiet_NaN();  // tau_hat == 0
  double wall_ms = 0.0;
  std::string config_digest;
  bool ok = false;
  std::string error;
  std::vector<std::int64_t> test_ids;
  std::vector<double> tau_hat;
  std::vector<double> tau_true;
};

inline Dataset make_pool(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.dataset_path.empty()) {
    std::ifstream in(cfg.dataset_path);
    if (!in) throw Error("cannot open dataset '" + cfg.dataset_path + "'");
    return read_dataset_csv(in);
  }
  GeneratorSpec g = cfg.generator;
  g.seed = rng::hash_key(cfg.generator.seed, seed);
  return sample_dataset(g, cfg.pool_size);
}

inline std::uint64_t split_seed(std::uint64_t seed) { return rng::derive_seed(seed, "split"); }

struct CellOutputs {
  NuisanceModels nuisance;
  NuisanceEstimates test_estimates;
  std::vector<CateModel> models;
};

// Runs every requested learner for one (setting, size, seed). The first stage is
// shared: it depends only on the data and the seed, not on the learner.
inline std::vector<ExperimentResult> run_learners(const ExperimentConfig& cfg, Channel setting, std::size_t train_size,
                                                  std::uint64_t seed, std::size_t test_size,
                                                  std::span<const Learner> learners,
                                                  const EmbeddingMatrix* external = nullptr,
                                                  CellOutputs* outputs = nullptr) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::vector<ExperimentResult> results;
  for (auto l : learners) {
    ExperimentResult r;
    r.key = {l, setting, train_size, seed};
    r.config_digest = cfg.config_digest;
    results.push_back(std::move(r));
  }

  try {
    const Dataset pool = make_pool(cfg, seed);
    const auto split = split_indices(pool.size(), train_size, test_size, split_seed(seed));

    RepresentationConfig rc = cfg.representation;
    rc.channel = setting;
    const auto rep = build_representation(pool, rc, split.train, external);
    const Matrix phi_train = select_rows(rep.phi, split.train);
    const Matrix phi_test = select_rows(rep.phi, split.test);
    const Dataset train = subset(pool, split.train);
    const Dataset test = subset(pool, split.test);

    NuisanceConfig nc{cfg.nuisance_train, cfg.lr_grid};
    nc.train.seed = rng::derive_seed(seed, "nuisance");
    auto nuisance = fit_nuisance(phi_train, train.t, train.y_obs, nc);
    auto eta_train = predict_nuisance(nuisance, phi_train);
    const auto shared_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();

    std::vector<double> zeros(test.size(), 0.0);
    const double baseline = pehe(zeros, test.tau_true);
    for (auto& r : results) {
      const auto t0 = clock::now();
      try {
        std::optional<PseudoOutcomeSet> pseudo;
        if (r.key.learner != Learner::T)
          pseudo = build_pseudo_outcomes(r.key.learner, train.t, train.y_obs, eta_train, cfg.clip_epsilon);
        SecondStageConfig sc{cfg.second_stage_train, cfg.lr_grid};
        sc.train.seed = rng::derive_seed(seed, std::string("second-stage/") + learner_name(r.key.learner));
        auto model = fit_cate(r.key.learner, phi_train, nuisance, pseudo ? &*pseudo : nullptr, sc);
        r.tau_hat = predict_cate(model, phi_test);
        r.tau_true = test.tau_true;
        r.test_ids = test.ids;
        r.pehe = pehe(r.tau_hat, r.tau_true);
        r.baseline_pehe = baseline;
        r.ok = true;
        if (outputs) outputs->models.push_back(std::move(model));
      } catch (const std::exception& e) {
        r.error = std::string("[") + learner_name(r.key.learner) + "/" + channel_name(setting) + "/n=" +
                  std::to_string(train_size) + "/seed=" + std::to_string(seed) + "] " + e.what();
      }
      r.wall_ms = shared_ms + std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    }
    if (outputs) {
      outputs->test_estimates = predict_nuisance(nuisance, phi_test);
      outputs->test_estimates.seed = seed;
      outputs->test_estimates.config_digest = cfg.config_digest;
      outputs->nuisance = std::move(nuisance);
    }
  } catch (const std::exception& e) {
    for (auto& r : results)
      r.error = std::string("[") + learner_name(r.key.learner) + "/" + channel_name(setting) + "/n=" +
                std::to_string(train_size) + "/seed=" + std::to_string(seed) + "] " + e.what();
  }
  return results;
}

inline ExperimentResult run_cell(const ExperimentConfig& cfg, const CellKey& key, std::size_t test_size,
                                 const EmbeddingMatrix* external = nullptr) {
  const Learner one[] = {key.learner};
  return std::move(run_learners(cfg, key.setting, key.train_size, key.seed, test_size, one, external).front());
}

// ---------------------------------------------------------------------------
// Summaries

struct BoxStats {
  std::size_t count = 0;
  std::size_t failed = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline BoxStats box_stats(std::vector<double> values, std::size_t failed = 0) {
  BoxStats b;
  b.failed = failed;
  b.count = values.size();
  if (values.empty()) {
    b.min = b.q1 = b.median = b.q3 = b.max = std::numeric_limits<double>::quiet_NaN();
    return b;
  }
  std::sort(values.begin(), values.end());
  b.min = values.front();
  b.max = values.back();
  b.q1 = quantile_sorted(values, 0.25);
  b.median = quantile_sorted(values, 0.5);
  b.q3 = quantile_sorted(values, 0.75);
  return b;
}

struct GroupKey {
  Learner learner;
  Channel setting;
  std::size_t train_size;
  auto tie() const { return std::tuple(static_cast<int>(learner), static_cast<int>(setting), train_size); }
  friend bool operator<(const GroupKey& a, const GroupKey& b) { return a.tie() < b.tie(); }
};

struct TrendCheck {
  std::string name;
  bool applicable = false;
  bool passed = false;
  std::string detail;
};

struct Summary {
  std::map<GroupKey, BoxStats> groups;
  std::vector<TrendCheck> trends;
  std::size_t failed_cells = 0;
};

inline double median_of(const Summary& s, Learner l, Channel c, std::size_t n) {
  auto it = s.groups.find({l, c, n});
  return it == s.groups.end() || it->second.count == 0 ? std::numeric_limits<double>::quiet_NaN() : it->second.median;
}

// Trend checks per learner, on medians over seeds:
//  - gap widens: median(None) - median(Perfect) grows from the smallest to the largest size
//  - perfect beats none at the largest size
//  - EntangledSim between Perfect and None (x1.02) at sizes >= 3000, and
//    EntangledSim <= None x1.05 at smaller sizes
inline std::vector<TrendCheck> trend_checks(const Summary& s) {
  std::vector<TrendCheck> out;
  std::map<Learner, std::vector<std::size_t>> sizes;
  for (const auto& [k, v] : s.groups) {
    auto& vec = sizes[k.learner];
    if (std::find(vec.begin(), vec.end(), k.train_size) == vec.end()) vec.push_back(k.train_size);
  }
  auto fmt = [](double v) {
    std::ostringstream o;
    o << std::setprecision(6) << v;
    return o.str();
  };
  for (auto& [l, ns] : sizes) {
    std::sort(ns.begin(), ns.end());
    const std::string ln = learner_name(l);
    const std::size_t lo = ns.front(), hi = ns.back();
    double p_lo = median_of(s, l, Channel::Perfect, lo), p_hi = median_of(s, l, Channel::Perfect, hi);
    double n_lo = median_of(s, l, Channel::None, lo), n_hi = median_of(s, l, Channel::None, hi);
    {
      TrendCheck c;
      c.name = ln + ": Perfect < None at n=" + std::to_string(hi);
      c.applicable = std::isfinite(p_hi) && std::isfinite(n_hi);
      c.passed = c.applicable && p_hi < n_hi;
      c.detail = "Perfect=" + fmt(p_hi) + " None=" + fmt(n_hi);
      out.push_back(c);
    }
    if (ns.size() >= 2) {
      TrendCheck c;
      c.name = ln + ": gap(None-Perfect) widens from n=" + std::to_string(lo) + " to n=" + std::to_string(hi);
      c.applicable = std::isfinite(p_lo) && std::isfinite(n_lo) && std::isfinite(p_hi) && std::isfinite(n_hi);
      c.passed = c.applicable && (n_hi - p_hi) > (n_lo - p_lo);
      c.detail = "gap(" + std::to_string(lo) + ")=" + fmt(n_lo - p_lo) + " gap(" + std::to_string(hi) +
                 ")=" + fmt(n_hi - p_hi);
      out.push_back(c);
    }
    for (auto n : ns) {
      double p = median_of(s, l, Channel::Perfect, n);
      double e = median_of(s, l, Channel::EntangledSim, n);
      double z = median_of(s, l, Channel::None, n);
      if (!std::isfinite(e) || !std::isfinite(z)) continue;
      TrendCheck c;
      if (n >= 3000) {
        c.name = ln + ": Perfect <= EntangledSim <= None*1.02 at n=" + std::to_string(n);
        c.applicable = std::isfinite(p);
        c.passed = c.applicable && p <= e && e <= z * 1.02;
      } else {
        c.name = ln + ": EntangledSim <= None*1.05 at n=" + std::to_string(n);
        c.applicable = true;
        c.passed = e <= z * 1.05;
      }
      c.detail = "Perfect=" + fmt(p) + " EntangledSim=" + fmt(e) + " None=" + fmt(z);
      out.push_back(c);
    }
  }
  return out;
}

inline Summary summarize(std::span<const ExperimentResult> results) {
  std::map<GroupKey, std::vector<double>> values;
  std::map<GroupKey, std::size_t> failed;
  Summary s;
  for (const auto& r : results) {
    GroupKey k{r.key.learner, r.key.setting, r.key.train_size};
    values[k];
    if (r.ok && std::isfinite(r.pehe))
      values[k].push_back(r.pehe);
    else {
      ++failed[k];
      ++s.failed_cells;
    }
  }
  for (auto& [k, v] : values) s.groups[k] = box_stats(std::move(v), failed[k]);
  s.trends = trend_checks(s);
  return s;
}

// ---------------------------------------------------------------------------
// Output formats

inline void write_results_csv(std::ostream& os, std::span<const ExperimentResult> results) {
  os << "learner,setting,train_size,seed,pehe,wall_ms,config_digest\n";
  for (const auto& r : results) {
    os << learner_name(r.key.learner) << ',' << channel_name(r.key.setting) << ',' << r.key.train_size << ','
       << r.key.seed << ',';
    if (r.ok)
      os << std::setprecision(17) << r.pehe;
    else
      os << "nan";
    os << ',' << std::fixed << std::setprecision(3) << r.wall_ms << std::defaultfloat << ',' << r.config_digest
       << '\n';
  }
}

inline std::vector<ExperimentResult> read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("results CSV: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "learner,setting,train_size,seed,pehe,wall_ms,config_digest")
    throw FormatError("results CSV: unexpected header '" + line + "'");
  std::vector<ExperimentResult> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 7) throw FormatError("results CSV: line " + std::to_string(lineno) + " needs 7 fields");
    ExperimentResult r;
    auto l = parse_learner(f[0]);
    auto c = parse_channel(f[1]);
    if (!l || !c) throw FormatError("results CSV: line " + std::to_string(lineno) + ": unknown learner or setting");
    r.key.learner = *l;
    r.key.setting = *c;
    r.key.train_size = static_cast<std::size_t>(detail::parse_real(f[2], lineno, "train_size"));
    r.key.seed = std::stoull(f[3]);
    if (f[4] == "nan" || f[4].empty()) {
      r.ok = false;
      r.error = "failed";
    } else {
      r.pehe = detail::parse_real(f[4], lineno, "pehe");
      r.ok = std::isfinite(r.pehe);
    }
    r.wall_ms = detail::parse_real(f[5], lineno, "wall_ms");
    r.config_digest = f[6];
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, const Summary& s) {
  os << "learner,setting,train_size,count,failed,min,q1,median,q3,max\n";
  os << std::setprecision(17);
  for (const auto& [k, b] : s.groups)
    os << learner_name(k.learner) << ',' << channel_name(k.setting) << ',' << k.train_size << ',' << b.count << ','
       << b.failed << ',' << b.min << ',' << b.q1 << ',' << b.median << ',' << b.q3 << ',' << b.max << '\n';
}

inline void write_report(std::ostream& os, const Summary& s, std::span<const ExperimentResult> results) {
  os << "CATE experiment report\n";
  os << "======================\n\n";
  os << "PEHE over seeds (min / q1 / median / q3 / max)\n\n";
  os << std::left << std::setw(8) << "learner" << std::setw(20) << "setting" << std::setw(8) << "n" << std::setw(7)
     << "seeds" << "min        q1         median     q3         max\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& [k, b] : s.groups) {
    os << std::setw(8) << learner_name(k.learner) << std::setw(20) << channel_name(k.setting) << std::setw(8)
       << k.train_size << std::setw(7) << b.count;
    for (double v : {b.min, b.q1, b.median, b.q3, b.max}) os << std::setw(11) << v;
    if (b.failed) os << "  (" << b.failed << " failed)";
    os << '\n';
  }
  os << std::defaultfloat << std::right << "\nTrend checks\n\n";
  for (const auto& t : s.trends)
    os << (t.applicable ? (t.passed ? "[pass] " : "[FAIL] ") : "[n/a]  ") << t.name << "  (" << t.detail << ")\n";
  if (s.failed_cells) {
    os << "\nFailed cells: " << s.failed_cells << '\n';
    for (const auto& r : results)
      if (!r.ok) os << "  " << (r.error.empty() ? std::string("failed") : r.error) << '\n';
  }
}

// ---------------------------------------------------------------------------

inline std::vector<ExperimentResult> run_plan(const ExperimentPlan& plan, const ExperimentConfig& cfg,
                                              std::size_t workers = 1) {
  auto v = check_plan(plan, cfg);
  if (!v.empty()) throw ConfigError(v.front().key, v.front().message);

  std::optional<EmbeddingMatrix> external;
  if (std::find(plan.settings.begin(), plan.settings.end(), Channel::ExternalEmbedding) != plan.settings.end())
    external = load_embeddings(cfg.representation.embedding_path);

  struct Job {
    Channel setting;
    std::size_t size;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto c : plan.settings)
    for (auto n : plan.train_sizes)
      for (auto s : plan.seeds) jobs.push_back({c, n, s});

  std::vector<std::vector<ExperimentResult>> job_results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      const auto& job = jobs[j];
      job_results[j] = run_learners(cfg, job.setting, job.size, job.seed, plan.test_size, plan.learners,
                                    external ? &*external : nullptr);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Deterministic order: learner, setting, size, seed as listed in the plan.
  std::map<CellKey, ExperimentResult> by_key;
  for (auto& jr : job_results)
    for (auto& r : jr) by_key.emplace(r.key, std::move(r));
  std::vector<ExperimentResult> out;
  for (auto l : plan.learners)
    for (auto c : plan.settings)
      for (auto n : plan.train_sizes)
        for (auto s : plan.seeds) {
          auto it = by_key.find(CellKey{l, c, n, s});
          if (it != by_key.end()) out.push_back(std::move(it->second));
        }
  return out;
}

}  // namespace cateforge
