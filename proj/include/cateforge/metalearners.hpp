#pragma once

// Pseudo-outcomes and second-stage CATE models.
//
//   RA: T (Y - mu0) + (1 - T)(mu1 - Y)
//   DR: (T/pi - (1-T)/(1-pi)) Y + (1 - T/pi) mu1 - (1 - (1-T)/(1-pi)) mu0
//   R:  (Y - mu) / (T - pi), regressed with weights (T - pi)^2
//
// The T-learner takes mu1 - mu0 from the first stage directly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cateforge/common.hpp"
#include "cateforge/neuralcore.hpp"
#include "cateforge/nuisance.hpp"

namespace cateforge {

enum class Learner { T, RA, DR, R };

inline const char* learner_name(Learner l) noexcept {
  switch (l) {
    case Learner::T: return "T";
    case Learner::RA: return "RA";
    case Learner::DR: return "DR";
    case Learner::R: return "R";
  }
  return "?";
}

inline std::optional<Learner> parse_learner(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  if (s == "T") return Learner::T;
  if (s == "RA") return Learner::RA;
  if (s == "DR") return Learner::DR;
  if (s == "R") return Learner::R;
  return std::nullopt;
}

inline constexpr double kDefaultClipEpsilon = 0.025;

inline double clip_propensity(double pi, double epsilon) noexcept { return std::clamp(pi, epsilon, 1.0 - epsilon); }

inline double ra_pseudo_outcome(double t, double y, double mu0, double mu1) noexcept {
  return t * (y - mu0) + (1.0 - t) * (mu1 - y);
}

// `pi` must already be clipped.
inline double dr_pseudo_outcome(double t, double y, double mu0, double mu1, double pi) noexcept {
  const double a = t / pi;
  const double b = (1.0 - t) / (1.0 - pi);
  return (a - b) * y + (1.0 - a) * mu1 - (1.0 - b) * mu0;
}

struct WeightedTarget {
  double value;
  double weight;
};

// `pi` must already be clipped.
inline WeightedTarget r_pseudo_outcome(double t, double y, double mu, double pi) noexcept {
  const double resid = t - pi;
  return {(y - mu) / resid, resid * resid};
}

struct PseudoOutcomeSet {
  Learner learner = Learner::RA;
  std::vector<double> tau_tilde;
  std::vector<double> weights;
  double clip_epsilon = kDefaultClipEpsilon;
};

namespace detail {

inline void check_pseudo_inputs(std::span<const double> t, std::span<const double> y, const NuisanceEstimates& eta) {
  const std::size_t n = t.size();
  if (y.size() != n || eta.mu0_hat.size() != n || eta.mu1_hat.size() != n || eta.mu_hat.size() != n ||
      eta.pi_hat.size() != n)
    throw DimensionError("pseudo-outcomes: input lengths disagree");
}

inline void check_epsilon(double eps) {
  if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("metalearner.clip_epsilon", "must lie in (0, 0.5)");
}

}  // namespace detail

inline PseudoOutcomeSet pseudo_ra(std::span<const double> t, std::span<const double> y, const NuisanceEstimates& eta) {
  detail::check_pseudo_inputs(t, y, eta);
  PseudoOutcomeSet p;
  p.learner = Learner::RA;
  p.tau_tilde.resize(t.size());
  p.weights.assign(t.size(), 1.0);
  for (std::size_t i = 0; i < t.size(); ++i)
    p.tau_tilde[i] = ra_pseudo_outcome(t[i], y[i], eta.mu0_hat[i], eta.mu1_hat[i]);
  return p;
}

inline PseudoOutcomeSet pseudo_dr(std::span<const double> t, std::span<const double> y, const NuisanceEstimates& eta,
                                  double clip_epsilon = kDefaultClipEpsilon) {
  detail::check_pseudo_inputs(t, y, eta);
  detail::check_epsilon(clip_epsilon);
  PseudoOutcomeSet p;
  p.learner = Learner::DR;
  p.clip_epsilon = clip_epsilon;
  p.tau_tilde.resize(t.size());
  p.weights.assign(t.size(), 1.0);
  for (std::size_t i = 0; i < t.size(); ++i)
    p.tau_tilde[i] = dr_pseudo_outcome(t[i], y[i], eta.mu0_hat[i], eta.mu1_hat[i],
                                       clip_propensity(eta.pi_hat[i], clip_epsilon));
  return p;
}

inline PseudoOutcomeSet pseudo_r(std::span<const double> t, std::span<const double> y, const NuisanceEstimates& eta,
                                 double clip_epsilon = kDefaultClipEpsilon) {
  detail::check_pseudo_inputs(t, y, eta);
  detail::check_epsilon(clip_epsilon);
  PseudoOutcomeSet p;
  p.learner = Learner::R;
  p.clip_epsilon = clip_epsilon;
  p.tau_tilde.resize(t.size());
  p.weights.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto r = r_pseudo_outcome(t[i], y[i], eta.mu_hat[i], clip_propensity(eta.pi_hat[i], clip_epsilon));
    p.tau_tilde[i] = r.value;
    p.weights[i] = r.weight;
  }
  return p;
}

inline PseudoOutcomeSet build_pseudo_outcomes(Learner learner, std::span<const double> t, std::span<const double> y,
                                              const NuisanceEstimates& eta, double clip_epsilon) {
  switch (learner) {
    case Learner::RA: return pseudo_ra(t, y, eta);
    case Learner::DR: return pseudo_dr(t, y, eta, clip_epsilon);
    case Learner::R: return pseudo_r(t, y, eta, clip_epsilon);
    case Learner::T: break;
  }
  throw ContractError("build_pseudo_outcomes: the T-learner has no pseudo-outcome");
}

// ---------------------------------------------------------------------------

struct SecondStageConfig {
  TrainConfig train;
  std::vector<double> lr_grid = default_lr_grid();
};

struct CateModel {
  Learner learner = Learner::T;
  // T-learner
  MlpModel mu0;
  MlpModel mu1;
  // RA / DR / R
  MlpModel regressor;
  double initial_lr = 0.0;
  double final_val_loss = 0.0;
};

inline CateModel make_t_learner(const MlpModel& mu0, const MlpModel& mu1) {
  if (mu0.input_dim() != mu1.input_dim()) throw DimensionError("T-learner: outcome models disagree on input width");
  CateModel m;
  m.learner = Learner::T;
  m.mu0 = mu0;
  m.mu1 = mu1;
  return m;
}

// Trains the second-stage regressor on the pseudo-outcomes of the rows of phi.
// The R-learner uses its weights through a weighted squared error.
inline CateModel fit_second_stage(const Matrix& phi, const PseudoOutcomeSet& pseudo, const SecondStageConfig& cfg) {
  if (pseudo.learner == Learner::T) throw ContractError("fit_second_stage: the T-learner has no second stage");
  if (pseudo.tau_tilde.size() != phi.rows())
    throw DimensionError("fit_second_stage: pseudo-outcome length does not match the training rows");
  const bool weighted = pseudo.learner == Learner::R;
  if (weighted && pseudo.weights.size() != phi.rows())
    throw ContractError("fit_second_stage: the R-learner requires one weight per pseudo-outcome");
  for (double v : pseudo.tau_tilde)
    if (!std::isfinite(v)) throw ContractError("fit_second_stage: non-finite pseudo-outcome");

  auto r = fit_with_lr_grid(phi.cols(), phi, pseudo.tau_tilde, cfg.train,
                            weighted ? LossKind::WeightedMSE : LossKind::MSE, cfg.lr_grid,
                            weighted ? std::span<const double>(pseudo.weights) : std::span<const double>{});
  CateModel m;
  m.learner = pseudo.learner;
  m.regressor = std::move(r.model);
  m.initial_lr = r.initial_lr;
  m.final_val_loss = r.final_val_loss;
  return m;
}

// T: differences the first-stage outcome models; otherwise fits the second stage.
inline CateModel fit_cate(Learner learner, const Matrix& phi, const NuisanceModels& nuisance,
                          const PseudoOutcomeSet* pseudo, const SecondStageConfig& cfg) {
  if (learner == Learner::T) return make_t_learner(nuisance.mu0(), nuisance.mu1());
  if (pseudo == nullptr) throw ContractError("fit_cate: pseudo-outcomes are required for this learner");
  if (pseudo->learner != learner) throw ContractError("fit_cate: pseudo-outcomes belong to another learner");
  return fit_second_stage(phi, *pseudo, cfg);
}

inline std::vector<double> predict_cate(const CateModel& model, const Matrix& phi) {
  std::vector<double> out(phi.rows());
  if (model.learner == Learner::T) {
    for (std::size_t i = 0; i < phi.rows(); ++i) out[i] = model.mu1.forward(phi.row(i)) - model.mu0.forward(phi.row(i));
  } else {
    for (std::size_t i = 0; i < phi.rows(); ++i) out[i] = model.regressor.forward(phi.row(i));
  }
  return out;
}

inline void write_predictions_csv(std::ostream& os, std::span<const std::int64_t> ids, std::span<const double> tau_hat,
                                  std::span<const double> tau_true) {
  if (ids.size() != tau_hat.size() || ids.size() != tau_true.size())
    throw DimensionError("write_predictions_csv: length mismatch");
  const auto old = os.precision(17);
  os << "id,tau_hat,tau_true\n";
  for (std::size_t i = 0; i < ids.size(); ++i) os << ids[i] << ',' << tau_hat[i] << ',' << tau_true[i] << '\n';
  os.precision(old);
}

}  // namespace cateforge
