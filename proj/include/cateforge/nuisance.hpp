#pragma once

// First-stage models: mu0, mu1 (outcome per treatment group), mu (outcome on
// all rows) and pi (propensity). Four separate networks, each with its own
// optimizer, scheduler and batch stream, stepped round-robin in that order on
// every global batch. An epoch is ceil(|fit rows| / batch_size) global steps.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cateforge/common.hpp"
#include "cateforge/neuralcore.hpp"
#include "cateforge/random.hpp"

namespace cateforge {

enum NuisanceHead : std::size_t { kMu0 = 0, kMu1 = 1, kMu = 2, kPi = 3 };
inline constexpr std::array<const char*, 4> kNuisanceHeadNames = {"mu0", "mu1", "mu", "pi"};

struct NuisanceConfig {
  TrainConfig train;
  std::vector<double> lr_grid = default_lr_grid();
};

struct NuisanceModels {
  std::array<MlpModel, 4> heads;
  std::array<double, 4> initial_lr{};
  std::array<double, 4> final_val_loss{};
  std::array<std::vector<EpochRecord>, 4> history;
  std::array<std::uint64_t, 4> updates{};
  std::vector<std::string> warnings;

  const MlpModel& mu0() const noexcept { return heads[kMu0]; }
  const MlpModel& mu1() const noexcept { return heads[kMu1]; }
  const MlpModel& mu() const noexcept { return heads[kMu]; }
  const MlpModel& pi() const noexcept { return heads[kPi]; }
};

struct NuisanceEstimates {
  std::vector<double> mu0_hat;
  std::vector<double> mu1_hat;
  std::vector<double> mu_hat;
  std::vector<double> pi_hat;
  std::uint64_t seed = 0;
  std::string config_digest;

  std::size_t size() const noexcept { return mu0_hat.size(); }
};

namespace detail {

struct HeadRun {
  std::array<std::optional<ModelTrainer>, 4> trainers;
};

}  // namespace detail

// Trains all four heads on the rows of `phi` with the given treatment and
// observed outcome. One validation split (drawn from train.seed) is shared by
// every head; the group heads use its rows from their own group.
inline NuisanceModels fit_nuisance(const Matrix& phi, std::span<const double> t, std::span<const double> y,
                                   const NuisanceConfig& cfg) {
  validate_train_config(cfg.train);
  if (cfg.lr_grid.empty()) throw ConfigError("training.lr_grid", "must not be empty");
  const std::size_t n = phi.rows();
  if (n == 0) throw SizeError("fit_nuisance: empty training data");
  if (t.size() != n || y.size() != n) throw DimensionError("fit_nuisance: t/y length mismatch");

  std::size_t treated = 0;
  for (double v : t) {
    if (v != 0.0 && v != 1.0) throw ContractError("fit_nuisance: treatment must be 0 or 1");
    treated += v == 1.0;
  }
  if (treated == 0 || treated == n)
    throw SizeError(std::string("fit_nuisance: the ") + (treated == 0 ? "treated" : "control") +
                    " group is empty in the training rows; use a larger training sample or another seed");

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto split = validation_split(all, cfg.train.val_fraction, cfg.train.seed);
  if (split.fit.size() < 2) throw SizeError("fit_nuisance: fewer than two rows remain after the validation split");

  auto group = [&](const std::vector<std::size_t>& rows, double arm) {
    std::vector<std::size_t> out;
    for (auto r : rows)
      if (t[r] == arm) out.push_back(r);
    return out;
  };
  std::array<std::vector<std::size_t>, 4> fit_rows = {group(split.fit, 0.0), group(split.fit, 1.0), split.fit,
                                                      split.fit};
  std::array<std::vector<std::size_t>, 4> val_rows = {group(split.validation, 0.0), group(split.validation, 1.0),
                                                      split.validation, split.validation};
  for (std::size_t h : {kMu0, kMu1})
    if (fit_rows[h].empty()) std::swap(fit_rows[h], val_rows[h]);

  const std::array<LossKind, 4> kinds = {LossKind::MSE, LossKind::MSE, LossKind::MSE, LossKind::BCE};
  const std::array<std::span<const double>, 4> targets = {y, y, y, t};

  NuisanceModels out;
  {
    bool any0 = false, any1 = false;
    for (auto r : split.fit) (t[r] == 1.0 ? any1 : any0) = true;
    if (!(any0 && any1)) out.warnings.push_back("propensity: fit rows contain a single class");
  }

  std::array<MlpModel, 4> init;
  for (std::size_t h = 0; h < 4; ++h)
    init[h] = MlpModel::initialized(phi.cols(), cfg.train.hidden_dim, activation_for(kinds[h]),
                                    rng::derive_seed(cfg.train.seed, std::string("init/") + kNuisanceHeadNames[h]));

  const std::size_t steps_per_epoch = (split.fit.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
  std::array<bool, 4> have{};

  for (double lr : cfg.lr_grid) {
    TrainConfig tc = cfg.train;
    tc.initial_lr = lr;
    detail::HeadRun run;
    for (std::size_t h = 0; h < 4; ++h)
      run.trainers[h].emplace(init[h], phi, targets[h], std::span<const double>{}, fit_rows[h], val_rows[h],
                              kinds[h], tc,
                              rng::derive_seed(cfg.train.seed, std::string("batches/") + kNuisanceHeadNames[h]));

    std::array<double, 4> val{};
    for (std::size_t e = 0; e < tc.epochs; ++e) {
      for (std::size_t s = 0; s < steps_per_epoch; ++s)
        for (std::size_t h = 0; h < 4; ++h) run.trainers[h]->step();
      for (std::size_t h = 0; h < 4; ++h) val[h] = run.trainers[h]->end_epoch();
    }

    for (std::size_t h = 0; h < 4; ++h) {
      if (have[h] && !(val[h] < out.final_val_loss[h])) continue;
      have[h] = true;
      out.final_val_loss[h] = val[h];
      out.initial_lr[h] = lr;
      out.history[h] = run.trainers[h]->history();
      out.updates[h] = run.trainers[h]->updates();
      out.heads[h] = std::move(*run.trainers[h]).take_model();
    }
  }
  return out;
}

inline NuisanceEstimates predict_nuisance(const NuisanceModels& models, const Matrix& phi) {
  for (const auto& m : models.heads)
    if (m.input_dim() != phi.cols())
      throw DimensionError("predict_nuisance: feature dimension " + std::to_string(phi.cols()) +
                           " does not match the trained models (" + std::to_string(m.input_dim()) + ")");
  NuisanceEstimates e;
  e.mu0_hat = predict(models.mu0(), phi);
  e.mu1_hat = predict(models.mu1(), phi);
  e.mu_hat = predict(models.mu(), phi);
  e.pi_hat = predict(models.pi(), phi);
  return e;
}

inline void write_nuisance_csv(std::ostream& os, std::span<const std::int64_t> ids, const NuisanceEstimates& e) {
  if (ids.size() != e.size()) throw DimensionError("write_nuisance_csv: id count mismatch");
  const auto old = os.precision(17);
  os << "id,mu0_hat,mu1_hat,mu_hat,pi_hat\n";
  for (std::size_t i = 0; i < e.size(); ++i)
    os << ids[i] << ',' << e.mu0_hat[i] << ',' << e.mu1_hat[i] << ',' << e.mu_hat[i] << ',' << e.pi_hat[i] << '\n';
  os.precision(old);
}

}  // namespace cateforge
