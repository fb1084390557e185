#pragma once

// Synthetic respiratory-care population with known ground truth.
//
// Background variables are drawn from conditional probability tables, the five
// symptoms from logistic models on the background, antibiotics from a logistic
// propensity on the symptoms, and days at home from one Poisson log-link model
// per treatment arm on the symptoms. The symptoms are the only confounders.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cateforge/common.hpp"
#include "cateforge/random.hpp"

namespace cateforge {

inline constexpr std::size_t kNumSymptoms = 5;
inline constexpr std::size_t kNumPatterns = std::size_t{1} << kNumSymptoms;
inline constexpr std::array<const char*, kNumSymptoms> kSymptomNames = {"dyspnea", "cough", "pain",
                                                                       "fever", "nasal"};

using SymptomVector = std::array<double, kNumSymptoms>;

inline double logistic(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

enum class CpdKind { Bernoulli, Categorical };

// One background variable. Bernoulli variables may condition on earlier binary
// variables: probs[config] = P(value = 1 | parents), where config has bit j set
// when parents[j] == 1. Categorical variables are unconditional and take the
// level index as their value.
struct BackgroundCpd {
  std::string name;
  CpdKind kind = CpdKind::Bernoulli;
  std::vector<std::size_t> parents;
  std::vector<double> probs;
};

// P(symptom = 1 | background) = logistic(intercept + weights . background).
struct SymptomCpd {
  std::string name;
  double intercept = 0.0;
  std::vector<double> weights;
};

struct PropensityModel {
  double intercept = 0.0;
  SymptomVector weights{};
};

// E[Y(t) | symptoms] = exp(intercept + coefs . symptoms).
struct OutcomeArm {
  double intercept = 0.0;
  SymptomVector coefs{};
};

struct GeneratorSpec {
  std::vector<BackgroundCpd> background;
  std::array<SymptomCpd, kNumSymptoms> symptoms;
  PropensityModel propensity;
  std::array<OutcomeArm, 2> outcome;
  // Positivity margin c: every symptom pattern must have pi in [c, 1 - c].
  double min_propensity = 0.05;
  std::uint64_t seed = 0;
};

struct Violation {
  std::string key;
  std::string message;
};

struct Dataset {
  std::vector<std::string> background_names;
  std::vector<std::int64_t> ids;
  Matrix x_background;
  Matrix x_symptoms;
  std::vector<double> t;
  std::vector<double> y_obs;
  std::vector<double> mu0_true;
  std::vector<double> mu1_true;
  std::vector<double> tau_true;
  std::vector<double> pi_true;

  std::size_t size() const noexcept { return ids.size(); }
};

struct PatternEffect {
  std::size_t pattern = 0;
  SymptomVector symptoms{};
  double mu0 = 0.0;
  double mu1 = 0.0;
  double tau = 0.0;
  double pi = 0.0;
};

// Bit j of `pattern` is symptom j.
inline SymptomVector pattern_symptoms(std::size_t pattern) noexcept {
  SymptomVector s{};
  for (std::size_t j = 0; j < kNumSymptoms; ++j) s[j] = static_cast<double>((pattern >> j) & 1u);
  return s;
}

inline std::size_t pattern_index(std::span<const double> symptoms) noexcept {
  std::size_t p = 0;
  for (std::size_t j = 0; j < kNumSymptoms; ++j)
    if (symptoms[j] != 0.0) p |= std::size_t{1} << j;
  return p;
}

inline double propensity(const GeneratorSpec& spec, std::span<const double> symptoms) noexcept {
  double z = spec.propensity.intercept;
  for (std::size_t j = 0; j < kNumSymptoms; ++j) z += spec.propensity.weights[j] * symptoms[j];
  return logistic(z);
}

inline double outcome_mean(const GeneratorSpec& spec, int arm, std::span<const double> symptoms) noexcept {
  const auto& a = spec.outcome[static_cast<std::size_t>(arm)];
  double z = a.intercept;
  for (std::size_t j = 0; j < kNumSymptoms; ++j) z += a.coefs[j] * symptoms[j];
  return std::exp(z);
}

// Exhaustive min/max of the propensity over all symptom patterns.
inline std::pair<double, double> propensity_range(const GeneratorSpec& spec) {
  double lo = 1.0, hi = 0.0;
  for (std::size_t p = 0; p < kNumPatterns; ++p) {
    auto s = pattern_symptoms(p);
    double pi = propensity(spec, s);
    lo = std::min(lo, pi);
    hi = std::max(hi, pi);
  }
  return {lo, hi};
}

inline bool is_binary_background(const BackgroundCpd& cpd) {
  return cpd.kind == CpdKind::Bernoulli || (cpd.kind == CpdKind::Categorical && cpd.probs.size() == 2);
}

inline std::vector<Violation> check_spec(const GeneratorSpec& spec) {
  std::vector<Violation> out;
  auto add = [&](std::string key, std::string msg) { out.push_back({std::move(key), std::move(msg)}); };
  auto finite = [](double v) { return std::isfinite(v); };

  const std::size_t pb = spec.background.size();
  if (pb == 0) add("generator.background", "at least one background variable is required");
  for (std::size_t j = 0; j < pb; ++j) {
    const auto& cpd = spec.background[j];
    const std::string key = "generator.background[" + std::to_string(j) + "]";
    if (cpd.name.empty()) add(key + ".name", "empty name");
    if (cpd.kind == CpdKind::Bernoulli) {
      for (std::size_t q = 0; q < cpd.parents.size(); ++q) {
        auto par = cpd.parents[q];
        if (par >= j)
          add(key + ".parents", "parent index must refer to an earlier variable");
        else if (!is_binary_background(spec.background[par]))
          add(key + ".parents", "parents must be binary variables");
      }
      std::size_t expected = std::size_t{1} << cpd.parents.size();
      if (cpd.probs.size() != expected)
        add(key + ".probs", "expected " + std::to_string(expected) + " entries");
      for (std::size_t q = 0; q < cpd.probs.size(); ++q)
        if (!(cpd.probs[q] > 0.0 && cpd.probs[q] < 1.0))
          add(key + ".probs[" + std::to_string(q) + "]", "probability must lie in (0,1)");
    } else {
      if (!cpd.parents.empty()) add(key + ".parents", "categorical variables take no parents");
      if (cpd.probs.size() < 2) add(key + ".probs", "categorical needs at least two levels");
      double sum = 0.0;
      for (std::size_t q = 0; q < cpd.probs.size(); ++q) {
        if (!(cpd.probs[q] > 0.0 && cpd.probs[q] < 1.0))
          add(key + ".probs[" + std::to_string(q) + "]", "probability must lie in (0,1)");
        sum += cpd.probs[q];
      }
      if (std::abs(sum - 1.0) > 1e-9) add(key + ".probs", "categorical probabilities must sum to 1");
    }
  }

  for (std::size_t s = 0; s < kNumSymptoms; ++s) {
    const auto& cpd = spec.symptoms[s];
    const std::string key = "generator.symptoms[" + std::to_string(s) + "]";
    if (cpd.weights.size() != pb)
      add(key + ".weights", "expected one weight per background variable");
    if (!finite(cpd.intercept)) add(key + ".intercept", "must be finite");
    for (double w : cpd.weights)
      if (!finite(w)) add(key + ".weights", "must be finite");
  }

  if (!finite(spec.propensity.intercept)) add("generator.propensity.intercept", "must be finite");
  for (double w : spec.propensity.weights)
    if (!finite(w)) add("generator.propensity.weights", "must be finite");
  if (!(spec.min_propensity > 0.0 && spec.min_propensity < 0.5))
    add("generator.min_propensity", "must lie in (0, 0.5)");
  else if (out.empty()) {
    auto [lo, hi] = propensity_range(spec);
    if (lo < spec.min_propensity || hi > 1.0 - spec.min_propensity) {
      std::ostringstream msg;
      msg << "positivity violated: propensity over symptom patterns spans [" << lo << ", " << hi
          << "], required within [" << spec.min_propensity << ", " << 1.0 - spec.min_propensity << "]";
      add("generator.propensity", msg.str());
    }
  }

  bool same = spec.outcome[0].intercept == spec.outcome[1].intercept &&
              spec.outcome[0].coefs == spec.outcome[1].coefs;
  if (same) add("generator.outcome", "treatment arms are identical (no treatment effect)");
  for (std::size_t a = 0; a < 2; ++a) {
    const std::string key = "generator.outcome[" + std::to_string(a) + "]";
    if (!finite(spec.outcome[a].intercept)) add(key + ".intercept", "must be finite");
    for (double c : spec.outcome[a].coefs)
      if (!finite(c)) add(key + ".coefs", "must be finite");
  }
  return out;
}

inline void validate_spec(const GeneratorSpec& spec) {
  auto v = check_spec(spec);
  if (!v.empty()) throw ConfigError(v.front().key, v.front().message);
}

// Default population: six background variables (asthma, smoking, copd,
// hay_fever, season, self_employed) and coefficients giving days-at-home means
// in roughly [0.8, 12] and treatment effects in roughly [-4.2, 0.1].
inline GeneratorSpec default_generator_spec() {
  GeneratorSpec g;
  g.background = {
      {"asthma", CpdKind::Bernoulli, {}, {0.15}},
      {"smoking", CpdKind::Bernoulli, {}, {0.25}},
      {"copd", CpdKind::Bernoulli, {1}, {0.03, 0.20}},
      {"hay_fever", CpdKind::Bernoulli, {}, {0.20}},
      {"season", CpdKind::Categorical, {}, {0.5, 0.5}},
      {"self_employed", CpdKind::Bernoulli, {}, {0.10}},
  };
  //                                  asthma smoking copd  hay   season self_emp
  g.symptoms = {{
      {"dyspnea", -1.6, {1.5, 0.5, 1.8, 0.0, 0.0, 0.0}},
      {"cough", -0.6, {0.0, 0.9, 1.0, 0.0, 0.8, 0.0}},
      {"pain", -1.2, {0.4, 0.0, 0.6, 0.0, 0.3, 0.0}},
      {"fever", -1.4, {0.0, 0.0, 0.4, 0.0, 0.9, 0.0}},
      {"nasal", -1.0, {0.0, 0.0, 0.0, 1.8, 0.7, 0.0}},
  }};
  g.propensity = {-1.6, {1.5, 0.6, 0.7, 1.6, -0.4}};
  g.outcome[0] = {-0.22, {0.8, 0.3, 0.4, 0.9, 0.3}};
  g.outcome[1] = {-0.15, {0.65, 0.3, 0.4, 0.6, 0.25}};
  g.min_propensity = 0.05;
  g.seed = 0;
  return g;
}

namespace detail {
enum Stream : std::uint64_t { kBackground = 1, kSymptom = 2, kTreatment = 3, kOutcome = 4 };
}

// Draws n rows. Row i depends only on (spec, i), so a smaller n yields a prefix
// of a larger draw.
inline Dataset sample_dataset(const GeneratorSpec& spec, std::size_t n) {
  if (n == 0) throw SizeError("sample_dataset: n must be positive");
  validate_spec(spec);

  const std::size_t pb = spec.background.size();
  Dataset d;
  for (const auto& cpd : spec.background) d.background_names.push_back(cpd.name);
  d.ids.resize(n);
  d.x_background = Matrix(n, pb);
  d.x_symptoms = Matrix(n, kNumSymptoms);
  d.t.resize(n);
  d.y_obs.resize(n);
  d.mu0_true.resize(n);
  d.mu1_true.resize(n);
  d.tau_true.resize(n);
  d.pi_true.resize(n);

  const std::uint64_t seed = spec.seed;
  for (std::size_t i = 0; i < n; ++i) {
    d.ids[i] = static_cast<std::int64_t>(i);
    auto bg = d.x_background.row(i);
    for (std::size_t j = 0; j < pb; ++j) {
      const auto& cpd = spec.background[j];
      double u = rng::uniform_at(seed, detail::kBackground, i, j);
      if (cpd.kind == CpdKind::Bernoulli) {
        std::size_t config = 0;
        for (std::size_t q = 0; q < cpd.parents.size(); ++q)
          if (bg[cpd.parents[q]] != 0.0) config |= std::size_t{1} << q;
        bg[j] = u < cpd.probs[config] ? 1.0 : 0.0;
      } else {
        double cdf = 0.0;
        std::size_t level = cpd.probs.size() - 1;
        for (std::size_t q = 0; q < cpd.probs.size(); ++q) {
          cdf += cpd.probs[q];
          if (u < cdf) {
            level = q;
            break;
          }
        }
        bg[j] = static_cast<double>(level);
      }
    }

    auto sym = d.x_symptoms.row(i);
    for (std::size_t s = 0; s < kNumSymptoms; ++s) {
      const auto& cpd = spec.symptoms[s];
      double z = cpd.intercept;
      for (std::size_t j = 0; j < pb; ++j) z += cpd.weights[j] * bg[j];
      sym[s] = rng::uniform_at(seed, detail::kSymptom, i, s) < logistic(z) ? 1.0 : 0.0;
    }

    double pi = propensity(spec, sym);
    double mu0 = outcome_mean(spec, 0, sym);
    double mu1 = outcome_mean(spec, 1, sym);
    int t = rng::uniform_at(seed, detail::kTreatment, i) < pi ? 1 : 0;
    auto y0 = rng::poisson_inverse(mu0, rng::uniform_at(seed, detail::kOutcome, i, 0));
    auto y1 = rng::poisson_inverse(mu1, rng::uniform_at(seed, detail::kOutcome, i, 1));

    d.t[i] = t;
    d.y_obs[i] = static_cast<double>(t == 1 ? y1 : y0);
    d.mu0_true[i] = mu0;
    d.mu1_true[i] = mu1;
    d.tau_true[i] = mu1 - mu0;
    d.pi_true[i] = pi;
  }
  return d;
}

inline std::vector<PatternEffect> enumerate_true_cate(const GeneratorSpec& spec) {
  std::vector<PatternEffect> out;
  out.reserve(kNumPatterns);
  for (std::size_t p = 0; p < kNumPatterns; ++p) {
    PatternEffect e;
    e.pattern = p;
    e.symptoms = pattern_symptoms(p);
    e.mu0 = outcome_mean(spec, 0, e.symptoms);
    e.mu1 = outcome_mean(spec, 1, e.symptoms);
    e.tau = e.mu1 - e.mu0;
    e.pi = propensity(spec, e.symptoms);
    out.push_back(e);
  }
  return out;
}

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// One seeded permutation of all rows; the test block is taken from its front so
// the test rows do not depend on train_n.
inline SplitIndices split_indices(std::size_t rows, std::size_t train_n, std::size_t test_n,
                                  std::uint64_t seed) {
  if (train_n + test_n > rows)
    throw SizeError("split_dataset: requested " + std::to_string(train_n) + " train + " +
                    std::to_string(test_n) + " test rows but only " + std::to_string(rows) +
                    " are available");
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng::Stream stream(seed, 0x5b1e7);
  stream.shuffle(std::span<std::size_t>(perm));
  SplitIndices s;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(test_n));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(test_n),
                 perm.begin() + static_cast<std::ptrdiff_t>(test_n + train_n));
  return s;
}

inline Dataset subset(const Dataset& d, std::span<const std::size_t> rows) {
  Dataset out;
  out.background_names = d.background_names;
  out.ids = select<std::int64_t>(d.ids, rows);
  out.x_background = select_rows(d.x_background, rows);
  out.x_symptoms = select_rows(d.x_symptoms, rows);
  out.t = select<double>(d.t, rows);
  out.y_obs = select<double>(d.y_obs, rows);
  out.mu0_true = select<double>(d.mu0_true, rows);
  out.mu1_true = select<double>(d.mu1_true, rows);
  out.tau_true = select<double>(d.tau_true, rows);
  out.pi_true = select<double>(d.pi_true, rows);
  return out;
}

inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, std::size_t train_n, std::size_t test_n,
                                                 std::uint64_t seed) {
  auto idx = split_indices(d.size(), train_n, test_n, seed);
  return {subset(d, idx.train), subset(d, idx.test)};
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline void write_int_or_real(std::ostream& os, double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15)
    os << static_cast<std::int64_t>(v);
  else
    os << v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    auto b = f.find_first_not_of(' ');
    auto e = f.find_last_not_of(' ');
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_real(const std::string& s, std::size_t line, const std::string& column) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw FormatError("line " + std::to_string(line) + ", column '" + column + "': cannot parse '" + s + "'");
  return v;
}

}  // namespace detail

inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
  os << "id";
  for (const auto& n : d.background_names) os << ',' << n;
  for (auto n : kSymptomNames) os << ',' << n;
  os << ",antibiotics,days_at_home,mu0_true,mu1_true,tau_true,pi_true\n";
  const auto old_prec = os.precision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << d.ids[i];
    for (double v : d.x_background.row(i)) {
      os << ',';
      detail::write_int_or_real(os, v);
    }
    for (double v : d.x_symptoms.row(i)) os << ',' << static_cast<int>(v);
    os << ',' << static_cast<int>(d.t[i]) << ',' << static_cast<std::int64_t>(d.y_obs[i]) << ','
       << d.mu0_true[i] << ',' << d.mu1_true[i] << ',' << d.tau_true[i] << ',' << d.pi_true[i] << '\n';
  }
  os.precision(old_prec);
}

inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dataset CSV: missing header");
  auto header = detail::split_csv_line(line);
  const std::vector<std::string> tail = {"antibiotics", "days_at_home", "mu0_true", "mu1_true",
                                         "tau_true", "pi_true"};
  const std::size_t fixed = 1 + kNumSymptoms + tail.size();
  if (header.size() <= fixed || header[0] != "id")
    throw FormatError("dataset CSV: header must start with 'id' and contain background columns");
  const std::size_t pb = header.size() - fixed;
  for (std::size_t s = 0; s < kNumSymptoms; ++s)
    if (header[1 + pb + s] != kSymptomNames[s])
      throw FormatError(std::string("dataset CSV: expected column '") + kSymptomNames[s] + "'");
  for (std::size_t k = 0; k < tail.size(); ++k)
    if (header[1 + pb + kNumSymptoms + k] != tail[k])
      throw FormatError("dataset CSV: expected column '" + tail[k] + "'");

  Dataset d;
  d.background_names.assign(header.begin() + 1, header.begin() + 1 + static_cast<std::ptrdiff_t>(pb));
  std::vector<double> bg, sym;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw FormatError("dataset CSV: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                        " fields, expected " + std::to_string(header.size()));
    std::vector<double> v(f.size());
    for (std::size_t k = 0; k < f.size(); ++k) v[k] = detail::parse_real(f[k], lineno, header[k]);
    d.ids.push_back(static_cast<std::int64_t>(v[0]));
    bg.insert(bg.end(), v.begin() + 1, v.begin() + 1 + static_cast<std::ptrdiff_t>(pb));
    sym.insert(sym.end(), v.begin() + 1 + static_cast<std::ptrdiff_t>(pb),
               v.begin() + 1 + static_cast<std::ptrdiff_t>(pb + kNumSymptoms));
    std::size_t o = 1 + pb + kNumSymptoms;
    d.t.push_back(v[o]);
    d.y_obs.push_back(v[o + 1]);
    d.mu0_true.push_back(v[o + 2]);
    d.mu1_true.push_back(v[o + 3]);
    d.tau_true.push_back(v[o + 4]);
    d.pi_true.push_back(v[o + 5]);
  }
  const std::size_t n = d.ids.size();
  d.x_background = Matrix(n, pb, std::move(bg));
  d.x_symptoms = Matrix(n, kNumSymptoms, std::move(sym));
  return d;
}

}  // namespace cateforge
