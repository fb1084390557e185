// cateforge: command-line driver for the CATE experiment library.
//
//   cateforge generate   [--config F] [--seed S] [--rows N] [--out DIR]
//   cateforge represent  [--config F] [--setting X] [--seed S] [--size N] [--out DIR]
//                        [--check-embeddings FILE]
//   cateforge run-cell   [--config F] --setting X --learner L --size N --seed S [--out DIR]
//   cateforge experiment [--config F] [overrides...] [--workers W] [--out DIR]
//   cateforge report     [--results CSV] [--allow-mixed] [--out DIR]
//   cateforge validate   --config F
//
// Exit status: 0 success, 1 runtime failure, 2 configuration error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cateforge/cateforge.hpp"

namespace fs = std::filesystem;
using namespace cateforge;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> size;
  std::optional<std::string> setting;
  std::optional<std::string> learner;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "Run configuration (JSON)");
  cmd->add_option("--seed", o.seed, "Run seed (replaces plan.seeds)");
  cmd->add_option("--out", o.out, "Output directory (replaces output_dir)");
  cmd->add_option("--workers", o.workers, "Worker threads");
  cmd->add_option("--size", o.size, "Training size (replaces plan.train_sizes)");
  cmd->add_option("--setting", o.setting, "Perfect | None | EntangledSim | ExternalEmbedding");
  cmd->add_option("--learner", o.learner, "T | RA | DR | R");
}

RunConfig load_config(const Overrides& o) {
  Json doc = o.config_path.empty() ? Json{{"version", kConfigVersion}} : read_json_file(o.config_path);
  if (!doc.is_object()) throw ConfigError("config", "document must be an object");
  auto& plan = doc["plan"];
  if (plan.is_null()) plan = Json::object();
  if (o.seed) plan["seeds"] = Json::array({*o.seed});
  if (o.size) plan["train_sizes"] = Json::array({*o.size});
  if (o.setting) plan["settings"] = Json::array({*o.setting});
  if (o.learner) plan["learners"] = Json::array({*o.learner});
  if (o.workers) doc["workers"] = *o.workers;
  if (o.out) doc["output_dir"] = *o.out;
  auto rc = run_config_from_json(doc);
  auto v = check_run_config(rc);
  if (!v.empty()) throw ConfigError(v.front().key, v.front().message);
  return rc;
}

fs::path prepare_out(const RunConfig& rc) {
  fs::path out(rc.output_dir);
  fs::create_directories(out);
  return out;
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(p, mode);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  return f;
}

void write_manifest(const fs::path& path, const std::string& digest, const Json& extra) {
  Json j = extra;
  j["config_digest"] = digest;
  auto f = open_out(path);
  f << j.dump(2) << '\n';
}

int cmd_generate(const Overrides& o, std::optional<std::size_t> rows) {
  auto rc = load_config(o);
  auto& e = rc.experiment;
  if (rows) e.pool_size = *rows;
  const auto seed = rc.plan.seeds.front();
  auto pool = make_pool(e, seed);
  auto out = prepare_out(rc);
  {
    auto f = open_out(out / "dataset.csv");
    write_dataset_csv(f, pool);
  }
  GeneratorSpec g = e.generator;
  g.seed = rng::hash_key(e.generator.seed, seed);
  write_manifest(out / "dataset.meta.json", e.config_digest,
                 {{"run_seed", seed}, {"rows", pool.size()}, {"generator", generator_to_json(g)}});
  std::cout << "wrote " << pool.size() << " rows to " << (out / "dataset.csv").string() << '\n';
  return 0;
}

int cmd_represent(const Overrides& o, const std::string& check_path) {
  if (!check_path.empty()) {
    auto m = load_embeddings(check_path);
    std::cout << "ok: " << m.rows << " rows x " << m.cols << " columns\n";
    return 0;
  }
  auto rc = load_config(o);
  const auto& e = rc.experiment;
  const auto seed = rc.plan.seeds.front();
  const auto size = rc.plan.train_sizes.front();
  auto pool = make_pool(e, seed);
  auto split = split_indices(pool.size(), size, rc.plan.test_size, split_seed(seed));
  std::vector<char> role(pool.size(), 'u');
  for (auto r : split.train) role[r] = 'r';
  for (auto r : split.test) role[r] = 't';
  auto out = prepare_out(rc);
  for (auto c : rc.plan.settings) {
    RepresentationConfig cfg = e.representation;
    cfg.channel = c;
    auto rep = build_representation(pool, cfg, split.train);
    const auto path = out / (std::string("phi_") + channel_name(c) + ".csv");
    auto f = open_out(path);
    f << "id,split";
    for (const auto& n : rep.feature_names) f << ',' << n;
    f << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      f << pool.ids[i] << ',' << (role[i] == 'r' ? "train" : role[i] == 't' ? "test" : "unused");
      for (double v : rep.phi.row(i)) f << ',' << v;
      f << '\n';
    }
    std::cout << "wrote " << rep.phi.rows() << " x " << rep.phi.cols() << " to " << path.string() << '\n';
  }
  write_manifest(out / "phi.meta.json", e.config_digest, {{"run_seed", seed}, {"train_size", size}});
  return 0;
}

template <typename T>
const T& single(const std::vector<T>& v, const char* key) {
  if (v.size() != 1) throw ConfigError(key, "run-cell needs exactly one value");
  return v.front();
}

int cmd_run_cell(const Overrides& o) {
  auto rc = load_config(o);
  const auto& e = rc.experiment;
  CellKey key{single(rc.plan.learners, "plan.learners"), single(rc.plan.settings, "plan.settings"),
              single(rc.plan.train_sizes, "plan.train_sizes"), single(rc.plan.seeds, "plan.seeds")};
  std::optional<EmbeddingMatrix> external;
  if (key.setting == Channel::ExternalEmbedding) external = load_embeddings(e.representation.embedding_path);

  CellOutputs outputs;
  const Learner one[] = {key.learner};
  auto results = run_learners(e, key.setting, key.train_size, key.seed, rc.plan.test_size, one,
                              external ? &*external : nullptr, &outputs);
  const auto& r = results.front();
  auto out = prepare_out(rc);
  {
    auto f = open_out(out / "cell.csv");
    write_results_csv(f, results);
  }
  if (!r.ok) {
    std::cerr << "error: " << r.error << '\n';
    return 1;
  }
  {
    auto f = open_out(out / "predictions.csv");
    write_predictions_csv(f, r.test_ids, r.tau_hat, r.tau_true);
  }
  {
    auto f = open_out(out / "nuisance.csv");
    write_nuisance_csv(f, r.test_ids, outputs.test_estimates);
  }
  for (std::size_t h = 0; h < 4; ++h) {
    auto f = open_out(out / (std::string("model_") + kNuisanceHeadNames[h] + ".txt"));
    write_model(f, outputs.nuisance.heads[h]);
  }
  if (key.learner != Learner::T && !outputs.models.empty()) {
    auto f = open_out(out / "model_cate.txt");
    write_model(f, outputs.models.front().regressor);
  }
  write_manifest(out / "cell.meta.json", e.config_digest,
                 {{"learner", learner_name(key.learner)},
                  {"setting", channel_name(key.setting)},
                  {"train_size", key.train_size},
                  {"seed", key.seed},
                  {"pehe", r.pehe},
                  {"baseline_pehe", r.baseline_pehe}});
  std::cout << std::setprecision(10) << "PEHE " << r.pehe << " (zero-predictor baseline " << r.baseline_pehe
            << ")\n";
  return 0;
}

void emit_summary(const fs::path& out, const std::vector<ExperimentResult>& results, const std::string& digest) {
  auto summary = summarize(results);
  {
    auto f = open_out(out / "summary.csv");
    write_summary_csv(f, summary);
  }
  {
    auto f = open_out(out / "report.txt");
    f << "config_digest: " << digest << "\n\n";
    write_report(f, summary, results);
  }
  write_report(std::cout, summary, results);
}

int cmd_experiment(const Overrides& o) {
  auto rc = load_config(o);
  auto out = prepare_out(rc);
  const auto workers = resolve_workers(rc);
  auto results = run_plan(rc.plan, rc.experiment, workers);
  {
    auto f = open_out(out / "results.csv");
    write_results_csv(f, results);
  }
  {
    auto f = open_out(out / "config.json");
    f << run_config_to_json(rc).dump(2) << '\n';
  }
  emit_summary(out, results, rc.experiment.config_digest);
  for (const auto& r : results)
    if (!r.ok) return 1;
  return 0;
}

int cmd_report(const Overrides& o, std::string results_path, bool allow_mixed) {
  fs::path out(o.out.value_or("results"));
  if (results_path.empty()) results_path = (out / "results.csv").string();
  std::ifstream in(results_path);
  if (!in) throw Error("cannot read '" + results_path + "'");
  auto results = read_results_csv(in);
  std::set<std::string> digests;
  for (const auto& r : results) digests.insert(r.config_digest);
  if (digests.size() > 1 && !allow_mixed) {
    std::cerr << "error: results come from " << digests.size()
              << " different configurations; pass --allow-mixed to summarize anyway\n";
    return 1;
  }
  fs::create_directories(out);
  std::string digest;
  for (const auto& d : digests) digest += (digest.empty() ? "" : ",") + d;
  emit_summary(out, results, digest);
  for (const auto& r : results)
    if (!r.ok) return 1;
  return 0;
}

int cmd_validate(const Overrides& o) {
  if (o.config_path.empty()) throw ConfigError("config", "validate needs --config");
  auto violations = validate_config(o.config_path);
  if (violations.empty()) {
    std::cout << "ok\n";
    return 0;
  }
  for (const auto& v : violations) std::cout << v.key << ": " << v.message << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learner CATE experiments on a synthetic clinical population"};
  app.require_subcommand(1);

  Overrides o;
  std::optional<std::size_t> rows;
  std::string check_path, results_path;
  bool allow_mixed = false;

  auto* gen = app.add_subcommand("generate", "Write a sampled dataset CSV");
  add_common(gen, o);
  gen->add_option("--rows", rows, "Number of rows (default: plan.pool_size)");

  auto* rep = app.add_subcommand("represent", "Write model-input matrices or check an embedding file");
  add_common(rep, o);
  rep->add_option("--check-embeddings", check_path, "Validate a CEMB or CSV embedding file");

  auto* cell = app.add_subcommand("run-cell", "Run one grid cell");
  add_common(cell, o);

  auto* exp = app.add_subcommand("experiment", "Run the full experiment plan");
  add_common(exp, o);

  auto* rpt = app.add_subcommand("report", "Recompute summaries from a results CSV");
  add_common(rpt, o);
  rpt->add_option("--results", results_path, "Results CSV (default: <out>/results.csv)");
  rpt->add_flag("--allow-mixed", allow_mixed, "Accept results from several configurations");

  auto* val = app.add_subcommand("validate", "Check a configuration file");
  add_common(val, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(o, rows);
    if (rep->parsed()) return cmd_represent(o, check_path);
    if (cell->parsed()) return cmd_run_cell(o);
    if (exp->parsed()) return cmd_experiment(o);
    if (rpt->parsed()) return cmd_report(o, results_path, allow_mixed);
    if (val->parsed()) return cmd_validate(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
