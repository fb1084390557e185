#pragma once

// Single-hidden-layer perceptrons with Adam and a plateau learning-rate
// scheduler. Parameters live in one flat vector:
//   [ W1 (hidden x input, row-major) | b1 (hidden) | W2 (hidden) | b2 ]
// Weight decay applies to W1 and W2 only.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cateforge/common.hpp"
#include "cateforge/datagen.hpp"
#include "cateforge/random.hpp"

namespace cateforge {

enum class OutputActivation { Identity, Sigmoid };
enum class LossKind { MSE, BCE, WeightedMSE };

inline constexpr double kProbabilityFloor = 0x1.0p-53;

class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(std::size_t input_dim, std::size_t hidden_dim = 10,
           OutputActivation activation = OutputActivation::Identity)
      : input_dim_(input_dim), hidden_dim_(hidden_dim), activation_(activation),
        params_(hidden_dim * input_dim + 2 * hidden_dim + 1, 0.0) {
    if (input_dim == 0 || hidden_dim == 0) throw DimensionError("MlpModel: dimensions must be positive");
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer, weights and biases.
  static MlpModel initialized(std::size_t input_dim, std::size_t hidden_dim, OutputActivation activation,
                              std::uint64_t seed) {
    MlpModel m(input_dim, hidden_dim, activation);
    rng::Stream s(seed, 0x1417);
    const double a1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    for (std::size_t i = 0; i < m.w2_offset(); ++i) m.params_[i] = s.uniform(-a1, a1);
    for (std::size_t i = m.w2_offset(); i < m.params_.size(); ++i) m.params_[i] = s.uniform(-a2, a2);
    return m;
  }

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t hidden_dim() const noexcept { return hidden_dim_; }
  OutputActivation activation() const noexcept { return activation_; }

  std::size_t param_count() const noexcept { return params_.size(); }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }

  std::size_t b1_offset() const noexcept { return hidden_dim_ * input_dim_; }
  std::size_t w2_offset() const noexcept { return b1_offset() + hidden_dim_; }
  std::size_t b2_offset() const noexcept { return w2_offset() + hidden_dim_; }
  bool is_weight(std::size_t i) const noexcept {
    return i < b1_offset() || (i >= w2_offset() && i < b2_offset());
  }

  double w1(std::size_t h, std::size_t j) const noexcept { return params_[h * input_dim_ + j]; }
  double b1(std::size_t h) const noexcept { return params_[b1_offset() + h]; }
  double w2(std::size_t h) const noexcept { return params_[w2_offset() + h]; }
  double b2() const noexcept { return params_[b2_offset()]; }

  // Output pre-activation; `hidden` receives the hidden pre-activations when non-empty.
  double logit(std::span<const double> x, std::span<double> hidden = {}) const {
    if (x.size() != input_dim_)
      throw DimensionError("MlpModel: input has " + std::to_string(x.size()) + " features, model expects " +
                           std::to_string(input_dim_));
    const double* w = params_.data();
    const double* bias1 = w + b1_offset();
    const double* out_w = w + w2_offset();
    double z = params_[b2_offset()];
    for (std::size_t h = 0; h < hidden_dim_; ++h) {
      const double* row = w + h * input_dim_;
      double a = bias1[h];
      for (std::size_t j = 0; j < input_dim_; ++j) a += row[j] * x[j];
      if (!hidden.empty()) hidden[h] = a;
      if (a > 0.0) z += out_w[h] * a;
    }
    return z;
  }

  double forward(std::span<const double> x) const {
    double z = logit(x);
    if (activation_ == OutputActivation::Identity) return z;
    return std::clamp(logistic(z), kProbabilityFloor, 1.0 - kProbabilityFloor);
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  OutputActivation activation_ = OutputActivation::Identity;
  std::vector<double> params_;
};

inline double forward(const MlpModel& model, std::span<const double> x) { return model.forward(x); }

inline std::vector<double> predict(const MlpModel& model, const Matrix& x) {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = model.forward(x.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Losses and gradients

namespace detail {

inline void check_loss_inputs(const MlpModel& model, const Matrix& x, std::span<const double> y,
                              std::span<const double> w, std::span<const std::size_t> rows, LossKind kind) {
  if (x.cols() != model.input_dim()) throw DimensionError("loss: feature dimension mismatch");
  if (y.size() != x.rows()) throw DimensionError("loss: target length mismatch");
  if (kind == LossKind::WeightedMSE && w.size() != x.rows())
    throw ContractError("loss: WeightedMSE requires one weight per row");
  if (kind == LossKind::BCE && model.activation() != OutputActivation::Sigmoid)
    throw ContractError("loss: BCE requires a sigmoid output");
  for (auto r : rows) {
    if (r >= x.rows()) throw DimensionError("loss: row index out of range");
    if (kind == LossKind::BCE && !(y[r] >= 0.0 && y[r] <= 1.0))
      throw ContractError("loss: BCE target outside [0,1] at row " + std::to_string(r));
    if (kind == LossKind::WeightedMSE && !(w[r] >= 0.0))
      throw ContractError("loss: negative sample weight at row " + std::to_string(r));
  }
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) noexcept { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

// Mean data loss over `rows` (weighted mean for WeightedMSE). No regularization.
inline double data_loss(const MlpModel& model, const Matrix& x, std::span<const double> y,
                        std::span<const double> w, std::span<const std::size_t> rows, LossKind kind) {
  detail::check_loss_inputs(model, x, y, w, rows, kind);
  if (rows.empty()) return 0.0;
  double total = 0.0, norm = 0.0;
  for (auto r : rows) {
    double z = model.logit(x.row(r));
    switch (kind) {
      case LossKind::BCE:
        total += detail::softplus(z) - y[r] * z;
        norm += 1.0;
        break;
      case LossKind::MSE:
      case LossKind::WeightedMSE: {
        double out = model.activation() == OutputActivation::Sigmoid ? logistic(z) : z;
        double wr = kind == LossKind::WeightedMSE ? w[r] : 1.0;
        total += wr * (out - y[r]) * (out - y[r]);
        norm += wr;
        break;
      }
    }
  }
  return norm > 0.0 ? total / norm : 0.0;
}

inline double l2_penalty(const MlpModel& model, double weight_decay) {
  double s = 0.0;
  auto p = model.params();
  for (std::size_t i = 0; i < p.size(); ++i)
    if (model.is_weight(i)) s += p[i] * p[i];
  return 0.5 * weight_decay * s;
}

// Training objective: data loss + (weight_decay / 2) * ||weights||^2.
inline double objective(const MlpModel& model, const Matrix& x, std::span<const double> y,
                        std::span<const double> w, std::span<const std::size_t> rows, LossKind kind,
                        double weight_decay) {
  return data_loss(model, x, y, w, rows, kind) + l2_penalty(model, weight_decay);
}

struct Gradient {
  double loss = 0.0;  // data loss of the batch
  std::vector<double> values;
};

// Analytic gradient of objective() over the batch `rows`.
inline Gradient backward(const MlpModel& model, const Matrix& x, std::span<const double> y,
                         std::span<const double> w, std::span<const std::size_t> rows, LossKind kind,
                         double weight_decay) {
  detail::check_loss_inputs(model, x, y, w, rows, kind);
  Gradient g;
  g.values.assign(model.param_count(), 0.0);
  const std::size_t m = model.input_dim();
  const std::size_t hd = model.hidden_dim();

  double norm = 0.0;
  for (auto r : rows) norm += kind == LossKind::WeightedMSE ? w[r] : 1.0;

  if (norm > 0.0) {
    std::vector<double> pre(hd);
    double* gw1 = g.values.data();
    double* gb1 = gw1 + model.b1_offset();
    double* gw2 = gw1 + model.w2_offset();
    double& gb2 = g.values[model.b2_offset()];
    double total = 0.0;
    for (auto r : rows) {
      auto xr = x.row(r);
      double z = model.logit(xr, pre);
      double dz = 0.0;
      if (kind == LossKind::BCE) {
        total += detail::softplus(z) - y[r] * z;
        dz = (logistic(z) - y[r]) / norm;
      } else {
        double wr = kind == LossKind::WeightedMSE ? w[r] : 1.0;
        if (wr == 0.0) continue;
        bool sig = model.activation() == OutputActivation::Sigmoid;
        double out = sig ? logistic(z) : z;
        double diff = out - y[r];
        total += wr * diff * diff;
        dz = 2.0 * wr * diff / norm;
        if (sig) dz *= out * (1.0 - out);
      }
      gb2 += dz;
      for (std::size_t h = 0; h < hd; ++h) {
        if (pre[h] <= 0.0) continue;
        gw2[h] += dz * pre[h];
        double da = dz * model.w2(h);
        gb1[h] += da;
        double* gw1_row = gw1 + h * m;
        for (std::size_t j = 0; j < m; ++j) gw1_row[j] += da * xr[j];
      }
    }
    g.loss = total / norm;
  }

  if (weight_decay != 0.0) {
    auto p = model.params();
    for (std::size_t i = 0; i < p.size(); ++i)
      if (model.is_weight(i)) g.values[i] += weight_decay * p[i];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Optimizer and scheduler

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

inline void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size())
    throw DimensionError("adam_step: parameter/gradient/state size mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    params[i] -= lr * (m / c1) / (std::sqrt(v / c2) + state.epsilon);
  }
}

// Multiplies the rate by `factor` once the monitored loss has gone `patience`
// epochs without a strict improvement on the best value seen. The counter
// resets on improvement and on every reduction.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor, std::size_t patience)
      : lr_(initial_lr), factor_(factor), patience_(patience) {}

  // Returns true when the rate was reduced.
  bool observe(double loss) {
    if (loss < best_) {
      best_ = loss;
      bad_epochs_ = 0;
      return false;
    }
    if (++bad_epochs_ >= patience_) {
      lr_ *= factor_;
      bad_epochs_ = 0;
      ++reductions_;
      return true;
    }
    return false;
  }

  double lr() const noexcept { return lr_; }
  double best() const noexcept { return best_; }
  std::size_t reductions() const noexcept { return reductions_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs_ = 0;
  std::size_t reductions_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 75;
  std::size_t batch_size = 32;
  double weight_decay = 1e-4;
  double initial_lr = 1e-3;
  double scheduler_factor = 0.1;
  std::size_t scheduler_patience = 5;
  double val_fraction = 0.2;
  std::size_t hidden_dim = 10;
  std::uint64_t seed = 0;
};

inline const std::vector<double>& default_lr_grid() {
  static const std::vector<double> grid = {1e-2, 3e-3, 1e-3, 3e-4};
  return grid;
}

inline std::vector<Violation> check_train_config(const TrainConfig& c, const std::string& prefix = "training") {
  std::vector<Violation> out;
  if (c.epochs == 0) out.push_back({prefix + ".epochs", "must be positive"});
  if (c.batch_size == 0) out.push_back({prefix + ".batch_size", "must be positive"});
  if (c.hidden_dim == 0) out.push_back({prefix + ".hidden_dim", "must be positive"});
  if (!(c.weight_decay >= 0.0)) out.push_back({prefix + ".weight_decay", "must be non-negative"});
  if (!(c.initial_lr > 0.0)) out.push_back({prefix + ".initial_lr", "must be positive"});
  if (!(c.scheduler_factor > 0.0 && c.scheduler_factor < 1.0))
    out.push_back({prefix + ".scheduler_factor", "must lie in (0,1)"});
  if (c.scheduler_patience == 0) out.push_back({prefix + ".scheduler_patience", "must be positive"});
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0))
    out.push_back({prefix + ".val_fraction", "must lie in (0,1)"});
  return out;
}

inline void validate_train_config(const TrainConfig& c) {
  auto v = check_train_config(c);
  if (!v.empty()) throw ConfigError(v.front().key, v.front().message);
}

struct ValidationSplit {
  std::vector<std::size_t> fit;
  std::vector<std::size_t> validation;
};

// Random val_fraction of `rows` (rounded down, at least one row when possible)
// goes to validation.
inline ValidationSplit validation_split(std::span<const std::size_t> rows, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> perm(rows.begin(), rows.end());
  rng::Stream s(rng::derive_seed(seed, "validation"));
  s.shuffle(std::span<std::size_t>(perm));
  std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(perm.size())));
  if (n_val == 0 && perm.size() > 2) n_val = 1;
  ValidationSplit out;
  out.validation.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  out.fit.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  return out;
}

struct EpochRecord {
  double train_loss = 0.0;  // mean batch data loss over the epoch
  double val_loss = 0.0;
  double lr = 0.0;  // rate used during the epoch
};

// Training state of one model: its own optimizer, scheduler and shuffled batch
// stream over `fit_rows`. Batches wrap to a fresh shuffle at the end of a pass.
class ModelTrainer {
 public:
  ModelTrainer(MlpModel model, const Matrix& x, std::span<const double> y, std::span<const double> w,
               std::vector<std::size_t> fit_rows, std::vector<std::size_t> val_rows, LossKind kind,
               const TrainConfig& cfg, std::uint64_t stream_seed)
      : model_(std::move(model)), x_(&x), y_(y), w_(w), fit_rows_(std::move(fit_rows)),
        val_rows_(std::move(val_rows)), kind_(kind), cfg_(cfg),
        scheduler_(cfg.initial_lr, cfg.scheduler_factor, cfg.scheduler_patience),
        adam_(model_.param_count()), order_(fit_rows_), stream_(stream_seed, 0xba7c4) {
    if (fit_rows_.empty()) throw SizeError("training: no training rows");
    stream_.shuffle(std::span<std::size_t>(order_));
  }

  std::size_t fit_rows() const noexcept { return fit_rows_.size(); }
  std::size_t steps_per_pass() const noexcept { return (fit_rows_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }

  void step() {
    if (pos_ >= order_.size()) {
      stream_.shuffle(std::span<std::size_t>(order_));
      pos_ = 0;
    }
    std::size_t end = std::min(order_.size(), pos_ + cfg_.batch_size);
    std::span<const std::size_t> batch(order_.data() + pos_, end - pos_);
    pos_ = end;
    auto g = backward(model_, *x_, y_, w_, batch, kind_, cfg_.weight_decay);
    adam_step(adam_, model_.params(), g.values, scheduler_.lr());
    epoch_loss_ += g.loss;
    ++epoch_steps_;
    ++updates_;
  }

  // Closes an epoch: evaluates the validation loss and updates the scheduler.
  double end_epoch() {
    std::span<const std::size_t> rows = val_rows_.empty() ? std::span<const std::size_t>(fit_rows_)
                                                          : std::span<const std::size_t>(val_rows_);
    double val = data_loss(model_, *x_, y_, w_, rows, kind_);
    history_.push_back({epoch_steps_ ? epoch_loss_ / static_cast<double>(epoch_steps_) : 0.0, val, scheduler_.lr()});
    scheduler_.observe(val);
    epoch_loss_ = 0.0;
    epoch_steps_ = 0;
    return val;
  }

  const MlpModel& model() const noexcept { return model_; }
  MlpModel take_model() && { return std::move(model_); }
  double lr() const noexcept { return scheduler_.lr(); }
  const std::vector<EpochRecord>& history() const noexcept { return history_; }
  std::uint64_t updates() const noexcept { return updates_; }
  const AdamState& adam() const noexcept { return adam_; }

 private:
  MlpModel model_;
  const Matrix* x_;
  std::span<const double> y_;
  std::span<const double> w_;
  std::vector<std::size_t> fit_rows_;
  std::vector<std::size_t> val_rows_;
  LossKind kind_;
  TrainConfig cfg_;
  PlateauScheduler scheduler_;
  AdamState adam_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  rng::Stream stream_;
  double epoch_loss_ = 0.0;
  std::size_t epoch_steps_ = 0;
  std::uint64_t updates_ = 0;
  std::vector<EpochRecord> history_;
};

struct FitResult {
  MlpModel model;
  std::vector<EpochRecord> history;
  double final_val_loss = 0.0;
  double initial_lr = 0.0;
  std::vector<std::string> warnings;
};

inline OutputActivation activation_for(LossKind kind) {
  return kind == LossKind::BCE ? OutputActivation::Sigmoid : OutputActivation::Identity;
}

namespace detail {
inline void check_bce_classes(std::span<const double> y, std::span<const std::size_t> rows,
                              std::vector<std::string>& warnings) {
  bool any0 = false, any1 = false;
  for (auto r : rows) (y[r] >= 0.5 ? any1 : any0) = true;
  if (!(any0 && any1)) warnings.push_back("BCE target contains a single class");
}
}  // namespace detail

// Trains `model` for exactly cfg.epochs epochs (one pass over the fit rows per
// epoch) and returns the final-epoch parameters.
inline FitResult fit(MlpModel model, const Matrix& features, std::span<const double> targets, const TrainConfig& cfg,
                     LossKind kind, std::span<const double> sample_weights = {}) {
  validate_train_config(cfg);
  if (features.rows() == 0) throw SizeError("fit: empty training data");
  if (targets.size() != features.rows()) throw DimensionError("fit: target length mismatch");
  if (kind == LossKind::WeightedMSE && sample_weights.size() != features.rows())
    throw ContractError("fit: WeightedMSE requires one weight per row");

  std::vector<std::size_t> all(features.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto split = validation_split(all, cfg.val_fraction, cfg.seed);
  if (split.fit.size() < 2) throw SizeError("fit: fewer than two rows remain after the validation split");

  FitResult result;
  if (kind == LossKind::BCE) detail::check_bce_classes(targets, all, result.warnings);

  ModelTrainer trainer(std::move(model), features, targets, sample_weights, std::move(split.fit),
                       std::move(split.validation), kind, cfg, rng::derive_seed(cfg.seed, "batches"));
  const std::size_t steps = trainer.steps_per_pass();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t s = 0; s < steps; ++s) trainer.step();
    result.final_val_loss = trainer.end_epoch();
  }
  result.history = trainer.history();
  result.initial_lr = cfg.initial_lr;
  result.model = std::move(trainer).take_model();
  return result;
}

// Fits one freshly initialized model per learning rate (same initialization)
// and keeps the one with the lowest final validation loss.
inline FitResult fit_with_lr_grid(std::size_t input_dim, const Matrix& features, std::span<const double> targets,
                                  TrainConfig cfg, LossKind kind, std::span<const double> lr_grid,
                                  std::span<const double> sample_weights = {}) {
  if (lr_grid.empty()) throw ConfigError("training.lr_grid", "must not be empty");
  const auto init = MlpModel::initialized(input_dim, cfg.hidden_dim, activation_for(kind),
                                          rng::derive_seed(cfg.seed, "init"));
  FitResult best;
  bool have = false;
  for (double lr : lr_grid) {
    cfg.initial_lr = lr;
    auto r = fit(init, features, targets, cfg, kind, sample_weights);
    if (!have || r.final_val_loss < best.final_val_loss) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Serialization: plain text, 17 significant digits.

inline void write_model(std::ostream& os, const MlpModel& m) {
  const auto old = os.precision(17);
  os << "mlp 1\n";
  os << "input_dim " << m.input_dim() << "\n";
  os << "hidden_dim " << m.hidden_dim() << "\n";
  os << "activation " << (m.activation() == OutputActivation::Sigmoid ? "sigmoid" : "identity") << "\n";
  auto p = m.params();
  auto section = [&](const char* name, std::size_t from, std::size_t to) {
    os << name;
    for (std::size_t i = from; i < to; ++i) os << ' ' << p[i];
    os << '\n';
  };
  section("w1", 0, m.b1_offset());
  section("b1", m.b1_offset(), m.w2_offset());
  section("w2", m.w2_offset(), m.b2_offset());
  section("b2", m.b2_offset(), m.param_count());
  os.precision(old);
}

inline MlpModel read_model(std::istream& is) {
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "mlp" || version != 1) throw FormatError("model: bad header");
  std::size_t in = 0, hid = 0;
  std::string act;
  if (!(is >> tag >> in) || tag != "input_dim") throw FormatError("model: expected input_dim");
  if (!(is >> tag >> hid) || tag != "hidden_dim") throw FormatError("model: expected hidden_dim");
  if (!(is >> tag >> act) || tag != "activation" || (act != "sigmoid" && act != "identity"))
    throw FormatError("model: expected activation");
  MlpModel m(in, hid, act == "sigmoid" ? OutputActivation::Sigmoid : OutputActivation::Identity);
  auto p = m.params();
  auto section = [&](const char* name, std::size_t from, std::size_t to) {
    if (!(is >> tag) || tag != name) throw FormatError(std::string("model: expected ") + name);
    for (std::size_t i = from; i < to; ++i)
      if (!(is >> p[i])) throw FormatError(std::string("model: truncated ") + name);
  };
  section("w1", 0, m.b1_offset());
  section("b1", m.b1_offset(), m.w2_offset());
  section("w2", m.w2_offset(), m.b2_offset());
  section("b2", m.b2_offset(), m.param_count());
  return m;
}

}  // namespace cateforge
