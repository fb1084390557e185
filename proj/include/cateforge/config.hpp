#pragma once

// Run configuration: one JSON document with a `version` field. Sections are
// optional and fall back to the built-in defaults; unknown keys are rejected.
//
// {
//   "version": 1,
//   "generator": { "seed", "min_propensity", "background": [...], "symptoms": [...],
//                  "propensity": {...}, "outcome": {"control": {...}, "treated": {...}} },
//   "representation": { "embed_dim", "noise_sigma", "distractor_count", "mixing_seed", "embedding_path" },
//   "training": { "epochs", "batch_size", "weight_decay", "scheduler_factor", "scheduler_patience",
//                 "val_fraction", "hidden_dim", "lr_grid" },
//   "metalearner": { "clip_epsilon" },
//   "plan": { "train_sizes", "test_size", "pool_size", "seeds", "settings", "learners", "dataset_path" },
//   "output_dir": "...",
//   "workers": N
// }

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cateforge/common.hpp"
#include "cateforge/datagen.hpp"
#include "cateforge/evaluation.hpp"
#include "cateforge/representations.hpp"

namespace cateforge {

using Json = nlohmann::json;

inline constexpr int kConfigVersion = 1;

struct RunConfig {
  ExperimentConfig experiment;
  ExperimentPlan plan;
  std::string output_dir = "results";
  std::optional<std::size_t> workers;  // unset: CATEFORGE_WORKERS or 1
};

namespace detail {

inline void reject_unknown(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
}

template <typename T>
void read_field(const Json& obj, const std::string& path, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.empty() ? std::string(key) : path + "." + key, std::string("wrong type: ") + e.what());
  }
}

inline SymptomVector read_symptom_vector(const Json& obj, const std::string& path, const char* key,
                                         SymptomVector fallback) {
  std::vector<double> v(fallback.begin(), fallback.end());
  read_field(obj, path, key, v);
  if (v.size() != kNumSymptoms) throw ConfigError(path + "." + key, "expected 5 entries");
  SymptomVector out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generator spec <-> JSON

inline Json generator_to_json(const GeneratorSpec& g) {
  Json j;
  j["seed"] = g.seed;
  j["min_propensity"] = g.min_propensity;
  j["background"] = Json::array();
  for (const auto& b : g.background)
    j["background"].push_back({{"name", b.name},
                               {"kind", b.kind == CpdKind::Bernoulli ? "bernoulli" : "categorical"},
                               {"parents", b.parents},
                               {"probs", b.probs}});
  j["symptoms"] = Json::array();
  for (const auto& s : g.symptoms)
    j["symptoms"].push_back({{"name", s.name}, {"intercept", s.intercept}, {"weights", s.weights}});
  j["propensity"] = {{"intercept", g.propensity.intercept}, {"weights", g.propensity.weights}};
  j["outcome"] = {{"control", {{"intercept", g.outcome[0].intercept}, {"coefs", g.outcome[0].coefs}}},
                  {"treated", {{"intercept", g.outcome[1].intercept}, {"coefs", g.outcome[1].coefs}}}};
  return j;
}

inline GeneratorSpec generator_from_json(const Json& j, const std::string& path = "generator") {
  detail::reject_unknown(j, path, {"seed", "min_propensity", "background", "symptoms", "propensity", "outcome"});
  GeneratorSpec g = default_generator_spec();
  detail::read_field(j, path, "seed", g.seed);
  detail::read_field(j, path, "min_propensity", g.min_propensity);

  if (auto it = j.find("background"); it != j.end()) {
    if (!it->is_array()) throw ConfigError(path + ".background", "expected an array");
    g.background.clear();
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& e = (*it)[i];
      const std::string p = path + ".background[" + std::to_string(i) + "]";
      detail::reject_unknown(e, p, {"name", "kind", "parents", "probs"});
      BackgroundCpd b;
      std::string kind = "bernoulli";
      detail::read_field(e, p, "name", b.name);
      detail::read_field(e, p, "kind", kind);
      detail::read_field(e, p, "parents", b.parents);
      detail::read_field(e, p, "probs", b.probs);
      if (kind == "bernoulli")
        b.kind = CpdKind::Bernoulli;
      else if (kind == "categorical")
        b.kind = CpdKind::Categorical;
      else
        throw ConfigError(p + ".kind", "expected 'bernoulli' or 'categorical'");
      g.background.push_back(std::move(b));
    }
  }
  if (auto it = j.find("symptoms"); it != j.end()) {
    if (!it->is_array() || it->size() != kNumSymptoms)
      throw ConfigError(path + ".symptoms", "expected an array of 5 symptom models");
    for (std::size_t i = 0; i < kNumSymptoms; ++i) {
      const auto& e = (*it)[i];
      const std::string p = path + ".symptoms[" + std::to_string(i) + "]";
      detail::reject_unknown(e, p, {"name", "intercept", "weights"});
      SymptomCpd s;
      s.name = kSymptomNames[i];
      detail::read_field(e, p, "name", s.name);
      detail::read_field(e, p, "intercept", s.intercept);
      detail::read_field(e, p, "weights", s.weights);
      if (s.name != kSymptomNames[i])
        throw ConfigError(p + ".name", std::string("expected '") + kSymptomNames[i] + "'");
      g.symptoms[i] = std::move(s);
    }
  }
  if (auto it = j.find("propensity"); it != j.end()) {
    detail::reject_unknown(*it, path + ".propensity", {"intercept", "weights"});
    detail::read_field(*it, path + ".propensity", "intercept", g.propensity.intercept);
    g.propensity.weights = detail::read_symptom_vector(*it, path + ".propensity", "weights", g.propensity.weights);
  }
  if (auto it = j.find("outcome"); it != j.end()) {
    detail::reject_unknown(*it, path + ".outcome", {"control", "treated"});
    const char* names[2] = {"control", "treated"};
    for (std::size_t a = 0; a < 2; ++a) {
      auto arm = it->find(names[a]);
      if (arm == it->end()) continue;
      const std::string p = path + ".outcome." + names[a];
      detail::reject_unknown(*arm, p, {"intercept", "coefs"});
      detail::read_field(*arm, p, "intercept", g.outcome[a].intercept);
      g.outcome[a].coefs = detail::read_symptom_vector(*arm, p, "coefs", g.outcome[a].coefs);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Whole document

inline Json run_config_to_json(const RunConfig& rc) {
  const auto& e = rc.experiment;
  Json j;
  j["version"] = kConfigVersion;
  j["generator"] = generator_to_json(e.generator);
  j["representation"] = {{"embed_dim", e.representation.embed_dim},
                         {"noise_sigma", e.representation.noise_sigma},
                         {"distractor_count", e.representation.distractor_count},
                         {"mixing_seed", e.representation.mixing_seed},
                         {"embedding_path", e.representation.embedding_path}};
  const auto& t = e.nuisance_train;
  j["training"] = {{"epochs", t.epochs},
                   {"batch_size", t.batch_size},
                   {"weight_decay", t.weight_decay},
                   {"scheduler_factor", t.scheduler_factor},
                   {"scheduler_patience", t.scheduler_patience},
                   {"val_fraction", t.val_fraction},
                   {"hidden_dim", t.hidden_dim},
                   {"lr_grid", e.lr_grid}};
  j["metalearner"] = {{"clip_epsilon", e.clip_epsilon}};
  Json settings = Json::array(), learners = Json::array();
  for (auto c : rc.plan.settings) settings.push_back(channel_name(c));
  for (auto l : rc.plan.learners) learners.push_back(learner_name(l));
  j["plan"] = {{"train_sizes", rc.plan.train_sizes}, {"test_size", rc.plan.test_size},
               {"pool_size", e.pool_size},           {"seeds", rc.plan.seeds},
               {"settings", settings},               {"learners", learners},
               {"dataset_path", e.dataset_path}};
  j["output_dir"] = rc.output_dir;
  if (rc.workers) j["workers"] = *rc.workers;
  return j;
}

// Digest over everything that affects results (output location and worker
// count excluded).
inline std::string config_digest(const RunConfig& rc) {
  Json j = run_config_to_json(rc);
  j.erase("output_dir");
  j.erase("workers");
  return hex_digest(j.dump());
}

inline RunConfig run_config_from_json(const Json& j) {
  detail::reject_unknown(j, "", {"version", "generator", "representation", "training", "metalearner", "plan",
                                 "output_dir", "workers"});
  auto v = j.find("version");
  if (v == j.end()) throw ConfigError("version", "missing");
  if (!v->is_number_integer() || v->get<int>() != kConfigVersion)
    throw ConfigError("version", "unsupported version (expected " + std::to_string(kConfigVersion) + ")");

  RunConfig rc;
  auto& e = rc.experiment;
  if (auto it = j.find("generator"); it != j.end()) e.generator = generator_from_json(*it);
  if (auto it = j.find("representation"); it != j.end()) {
    const std::string p = "representation";
    detail::reject_unknown(*it, p, {"embed_dim", "noise_sigma", "distractor_count", "mixing_seed", "embedding_path"});
    detail::read_field(*it, p, "embed_dim", e.representation.embed_dim);
    detail::read_field(*it, p, "noise_sigma", e.representation.noise_sigma);
    detail::read_field(*it, p, "distractor_count", e.representation.distractor_count);
    detail::read_field(*it, p, "mixing_seed", e.representation.mixing_seed);
    detail::read_field(*it, p, "embedding_path", e.representation.embedding_path);
  }
  if (auto it = j.find("training"); it != j.end()) {
    const std::string p = "training";
    detail::reject_unknown(*it, p, {"epochs", "batch_size", "weight_decay", "scheduler_factor", "scheduler_patience",
                                    "val_fraction", "hidden_dim", "lr_grid"});
    auto& t = e.nuisance_train;
    detail::read_field(*it, p, "epochs", t.epochs);
    detail::read_field(*it, p, "batch_size", t.batch_size);
    detail::read_field(*it, p, "weight_decay", t.weight_decay);
    detail::read_field(*it, p, "scheduler_factor", t.scheduler_factor);
    detail::read_field(*it, p, "scheduler_patience", t.scheduler_patience);
    detail::read_field(*it, p, "val_fraction", t.val_fraction);
    detail::read_field(*it, p, "hidden_dim", t.hidden_dim);
    detail::read_field(*it, p, "lr_grid", e.lr_grid);
  }
  e.second_stage_train = e.nuisance_train;
  if (auto it = j.find("metalearner"); it != j.end()) {
    detail::reject_unknown(*it, "metalearner", {"clip_epsilon"});
    detail::read_field(*it, "metalearner", "clip_epsilon", e.clip_epsilon);
  }
  if (auto it = j.find("plan"); it != j.end()) {
    const std::string p = "plan";
    detail::reject_unknown(*it, p,
                           {"train_sizes", "test_size", "pool_size", "seeds", "settings", "learners", "dataset_path"});
    detail::read_field(*it, p, "train_sizes", rc.plan.train_sizes);
    detail::read_field(*it, p, "test_size", rc.plan.test_size);
    detail::read_field(*it, p, "pool_size", e.pool_size);
    detail::read_field(*it, p, "seeds", rc.plan.seeds);
    detail::read_field(*it, p, "dataset_path", e.dataset_path);
    if (auto s = it->find("settings"); s != it->end()) {
      std::vector<std::string> names;
      detail::read_field(*it, p, "settings", names);
      rc.plan.settings.clear();
      for (const auto& n : names) {
        auto c = parse_channel(n);
        if (!c) throw ConfigError("plan.settings", "unknown setting '" + n + "'");
        rc.plan.settings.push_back(*c);
      }
    }
    if (auto s = it->find("learners"); s != it->end()) {
      std::vector<std::string> names;
      detail::read_field(*it, p, "learners", names);
      rc.plan.learners.clear();
      for (const auto& n : names) {
        auto l = parse_learner(n);
        if (!l) throw ConfigError("plan.learners", "unknown learner '" + n + "'");
        rc.plan.learners.push_back(*l);
      }
    }
  }
  detail::read_field(j, "", "output_dir", rc.output_dir);
  if (j.contains("workers")) {
    std::size_t w = 0;
    detail::read_field(j, "", "workers", w);
    rc.workers = w;
  }

  namespace fs = std::filesystem;
  if (!e.representation.embedding_path.empty() && !fs::exists(e.representation.embedding_path))
    throw ConfigError("representation.embedding_path", "file '" + e.representation.embedding_path + "' does not exist");
  if (!e.dataset_path.empty() && !fs::exists(e.dataset_path))
    throw ConfigError("plan.dataset_path", "file '" + e.dataset_path + "' does not exist");

  e.config_digest = config_digest(rc);
  return rc;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config", std::string("parse error: ") + e.what());
  }
}

// Every statically checkable invariant of a parsed configuration.
inline std::vector<Violation> check_run_config(const RunConfig& rc) {
  std::vector<Violation> out;
  auto append = [&](std::vector<Violation> v) { out.insert(out.end(), v.begin(), v.end()); };
  append(check_spec(rc.experiment.generator));
  append(check_representation(rc.experiment.representation));
  append(check_train_config(rc.experiment.nuisance_train));
  if (rc.experiment.lr_grid.empty()) out.push_back({"training.lr_grid", "must not be empty"});
  for (double lr : rc.experiment.lr_grid)
    if (!(lr > 0.0)) out.push_back({"training.lr_grid", "learning rates must be positive"});
  append(check_plan(rc.plan, rc.experiment));
  if (rc.workers && *rc.workers == 0) out.push_back({"workers", "must be positive"});
  return out;
}

// Parse errors come back as a single violation.
inline std::vector<Violation> validate_config(const std::string& path) {
  try {
    return check_run_config(run_config_from_json(read_json_file(path)));
  } catch (const ConfigError& e) {
    return {{e.key(), e.what()}};
  }
}

inline std::size_t resolve_workers(const RunConfig& rc) {
  if (rc.workers) return *rc.workers;
  if (const char* env = std::getenv("CATEFORGE_WORKERS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

}  // namespace cateforge
