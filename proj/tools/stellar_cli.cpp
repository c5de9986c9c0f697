// stellar: experiment lifecycle CLI.
//
// Exit codes: 0 success, 2 validation/config error, 3 runtime abort.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "stellar/config.hpp"
#include "stellar/continual_engine.hpp"
#include "stellar/knowledge_space.hpp"
#include "stellar/logging.hpp"
#include "stellar/metrics_report.hpp"
#include "stellar/serialize.hpp"
#include "stellar/synthetic_suite.hpp"

namespace fs = std::filesystem;
using namespace stellar;

namespace {

constexpr const char* kVersion = "stellar 0.1.0";
constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct CliError {
  int code;
  std::string message;
};

Json load_checkpoint_body(const fs::path& ckpt) {
  if (!fs::exists(ckpt)) throw CliError{kExitValidation, "checkpoint not found: " + ckpt.string()};
  try {
    return from_versioned_cbor(read_bytes_file(ckpt), ContinualEngine::kCheckpointVersion,
                               "checkpoint");
  } catch (const std::exception& e) {
    throw CliError{kExitValidation, std::string("bad checkpoint: ") + e.what()};
  }
}

// Rebuilds the engine-side models for a checkpoint, given the run config that
// lives next to it.
struct LoadedRun {
  RunConfig cfg;
  std::unique_ptr<LatentModel> latent;
  std::unique_ptr<KnowledgeSpace> ks;
  std::vector<TaskSpec> tasks;
};

LoadedRun load_run(const fs::path& ckpt) {
  const Json body = load_checkpoint_body(ckpt);
  const fs::path cfg_path = ckpt.parent_path() / "config.json";
  if (!fs::exists(cfg_path))
    throw CliError{kExitValidation, "config.json not found next to checkpoint"};
  LoadedRun run;
  try {
    run.cfg = RunConfig::from_json(Json::parse(read_text_file(cfg_path)));
  } catch (const std::exception& e) {
    throw CliError{kExitValidation, std::string("bad config.json: ") + e.what()};
  }

  LatentModel::Config lm;
  lm.mode = run.cfg.mode();
  lm.latent_dim = run.cfg.model.latent_dim;
  lm.token_embed_dim = run.cfg.model.token_embed_dim;
  lm.hidden_dim = run.cfg.model.hidden_dim;
  lm.beta = run.cfg.train.beta;
  lm.beta_warmup_steps = run.cfg.train.beta_warmup_steps;
  lm.lr = run.cfg.train.lr_latent;
  run.latent = std::make_unique<LatentModel>(lm, run.cfg.seed);
  try {
    run.latent->restore_state(body.at("latent"));
    run.ks = std::make_unique<KnowledgeSpace>(KnowledgeSpace::deserialize(body.at("ks").get_binary()));
  } catch (const std::exception& e) {
    throw CliError{kExitValidation, std::string("bad checkpoint payload: ") + e.what()};
  }
  TaskSetOptions opts;
  opts.min_primitives = run.cfg.tasks.min_primitives;
  opts.max_primitives = run.cfg.tasks.max_primitives;
  run.tasks = generate_task_set(run.cfg.seed, run.cfg.tasks.n_tasks, run.cfg.tasks.pool_size, opts);
  return run;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, std::int64_t seed,
              const std::string& resume, int stop_after) {
  RunConfig cfg = load_config_file(config_path);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (stop_after >= 0) cfg.stop_after_task = stop_after;

  fs::path dir = out_dir;
  if (!resume.empty()) {
    if (!fs::exists(resume)) throw CliError{kExitValidation, "resume checkpoint not found: " + resume};
    const Json body = load_checkpoint_body(resume);
    if (body.at("next_task").get<int>() >= cfg.tasks.n_tasks) {
      std::cout << "already complete\n";
      return kExitOk;
    }
    dir = fs::path(resume).parent_path();
  }

  ContinualEngine engine(cfg, dir);
  EngineResult result = engine.run();
  if (result.complete)
    std::cout << "run complete: " << dir.string() << "\n";
  else
    std::cout << "run stopped after task " << result.R.task_count()
              << " (checkpoint saved): " << dir.string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, int episodes, bool as_json) {
  LoadedRun run = load_run(ckpt_path);
  RunConfig cfg = run.cfg;
  if (episodes > 0) cfg.eval.episodes = episodes;
  // Re-evaluate through the engine on the checkpointed state.
  ContinualEngine engine(cfg, fs::path(ckpt_path).parent_path());
  EngineResult res = engine.run();  // resumes; no-op when complete
  Json out;
  out["complete"] = res.complete;
  Json rows = Json::array();
  for (const auto& row : res.R.rows) rows.push_back(row);
  out["r_rows"] = rows;
  if (res.metrics) {
    out["fwt"] = res.metrics->fwt;
    out["nbt"] = res.metrics->nbt;
    out["auc"] = res.metrics->auc;
    out["final_sr"] = res.metrics->final_sr;
  }
  std::cout << (as_json ? out.dump(2) : out.dump(2)) << "\n";
  return kExitOk;
}

int cmd_metrics(const std::string& r_csv, const std::string& out_path) {
  if (!fs::exists(r_csv)) throw CliError{kExitValidation, "R matrix CSV not found: " + r_csv};
  SuccessMatrix R;
  try {
    R = success_matrix_from_csv(read_text_file(r_csv));
  } catch (const std::exception& e) {
    throw CliError{kExitValidation, std::string("bad R matrix: ") + e.what()};
  }
  const MetricsReport m = compute_metrics(R);
  Json out{{"fwt", m.fwt}, {"nbt", m.nbt}, {"auc", m.auc}, {"final_sr", m.final_sr}};
  if (out_path.empty())
    std::cout << out.dump(2) << "\n";
  else
    write_text_file(out_path, out.dump(2) + "\n");
  return kExitOk;
}

int cmd_inspect_knowledge(const std::string& ckpt_path, bool as_json) {
  LoadedRun run = load_run(ckpt_path);
  const KnowledgeSpace& ks = *run.ks;

  Json out;
  out["mode"] = ks.mode() == KnowledgeMode::TaskOnly ? "task_only" : "task_skill";
  out["cluster_count"] = ks.active_cluster_count();
  Json clusters = Json::array();
  for (const auto& c : ks.clusters())
    clusters.push_back({{"id", c.id},
                        {"weight", c.weight},
                        {"count", c.suff_stats.count},
                        {"mean", c.dist.mean},
                        {"var", c.dist.var}});
  out["clusters"] = std::move(clusters);
  if (ks.mode() == KnowledgeMode::TaskSkill) {
    Json tables = Json::object();
    for (int tid : ks.known_task_ids()) {
      Json row = Json::object();
      for (const auto& [cid, w] : ks.task_table_row(tid)) row[std::to_string(cid)] = w;
      tables[std::to_string(tid)] = std::move(row);
    }
    out["task_tables"] = std::move(tables);
  }

  // Recent latent -> cluster assignments over a fresh demo probe.
  Json assignments = Json::array();
  for (const auto& spec : run.tasks) {
    auto demos = generate_demos(spec, 1, derive_seed(run.cfg.seed, "inspect",
                                                     static_cast<std::uint64_t>(spec.task_id)));
    const auto& demo = demos.front();
    const auto& obs = demo.transitions[demo.transitions.size() / 2].obs;
    const LatentBundle b = ks.empty() ? run.latent->encode_prior(spec.lang, obs)
                                      : run.latent->encode_mean(spec.lang, obs, ks);
    int top1 = -1;
    double prob = 0.0;
    for (std::size_t k = 0; k < b.resp_task.cluster_ids.size(); ++k)
      if (b.resp_task.probs[k] > prob) {
        prob = b.resp_task.probs[k];
        top1 = b.resp_task.cluster_ids[k];
      }
    assignments.push_back({{"task_id", spec.task_id}, {"top1", top1}, {"prob", prob}});
  }
  out["recent_assignments"] = std::move(assignments);

  if (as_json) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "knowledge space (" << out["mode"].get<std::string>() << "): "
              << ks.active_cluster_count() << " clusters\n";
    for (const auto& c : ks.clusters()) {
      std::cout << "  cluster " << c.id << " weight " << format_double(c.weight) << " count "
                << format_double(c.suff_stats.count) << " mean [";
      for (std::size_t d = 0; d < c.dist.mean.size(); ++d)
        std::cout << (d ? " " : "") << format_double(c.dist.mean[d]);
      std::cout << "]\n";
    }
    if (ks.mode() == KnowledgeMode::TaskSkill)
      for (int tid : ks.known_task_ids()) {
        std::cout << "  task " << tid << " table:";
        for (const auto& [cid, w] : ks.task_table_row(tid))
          std::cout << " " << cid << ":" << format_double(w);
        std::cout << "\n";
      }
    for (const auto& a : out["recent_assignments"])
      std::cout << "  task " << a["task_id"] << " -> cluster " << a["top1"] << " (p="
                << format_double(a["prob"].get<double>()) << ")\n";
  }
  return kExitOk;
}

int cmd_export_latents(const std::string& ckpt_path, const std::string& demos_path,
                       const std::string& out_csv) {
  LoadedRun run = load_run(ckpt_path);
  if (!fs::exists(demos_path))
    throw CliError{kExitValidation, "demo file not found: " + demos_path};
  std::vector<Demo> demos;
  try {
    demos = demos_from_bytes(read_bytes_file(demos_path));
  } catch (const std::exception& e) {
    throw CliError{kExitValidation, std::string("bad demo file: ") + e.what()};
  }
  for (const auto& d : demos)
    if (d.task_id < 0 || d.task_id >= static_cast<int>(run.tasks.size()))
      throw CliError{kExitValidation,
                     "demo task id " + std::to_string(d.task_id) + " not in the run's task set"};
  write_text_file(out_csv, latents_to_csv(*run.latent, *run.ks, run.tasks, demos, 1));
  std::cout << "wrote " << out_csv << "\n";
  return kExitOk;
}

int cmd_gen_tasks(std::uint64_t seed, int n_tasks, int pool, const std::string& out_path,
                  int demos_per_task, const std::string& demos_out) {
  const auto tasks = generate_task_set(seed, n_tasks, pool);
  Json out = task_set_to_json(tasks);
  out["seed"] = seed;
  if (out_path.empty())
    std::cout << out.dump(2) << "\n";
  else
    write_text_file(out_path, out.dump(2) + "\n");
  if (!demos_out.empty()) {
    std::vector<Demo> demos;
    for (const auto& spec : tasks) {
      auto d = generate_demos(spec, demos_per_task,
                              derive_seed(seed, "demos", static_cast<std::uint64_t>(spec.task_id)));
      for (auto& demo : d) demos.push_back(std::move(demo));
    }
    write_bytes_file(demos_out, demos_to_bytes(demos));
    std::cout << "wrote " << demos_out << " (" << demos.size() << " demos)\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stellar: continual imitation learning experiments"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir = "run", resume, ckpt_path, demos_path, out_csv, r_csv,
              out_path, demos_out;
  std::int64_t seed_flag = -1;
  std::uint64_t gen_seed = 0;
  int episodes = 0, stop_after = -1, n_tasks = 10, pool = 6, demos_per_task = 5;
  bool as_json = false;

  auto* train = app.add_subcommand("train", "run a continual-learning sequence");
  train->add_option("--config", config_path, "run config (JSON)")->required();
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--seed", seed_flag, "override the config seed");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--stop-after-task", stop_after, "stop (with checkpoint) after N tasks");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpointed run");
  eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval->add_option("--episodes", episodes, "episodes per task override");
  eval->add_flag("--json", as_json, "machine-readable output");

  auto* metrics = app.add_subcommand("metrics", "compute metrics from an R matrix CSV");
  metrics->add_option("--r-matrix", r_csv, "R_matrix.csv path")->required();
  metrics->add_option("--out", out_path, "write metrics JSON here (stdout otherwise)");

  auto* inspect = app.add_subcommand("inspect-knowledge", "summarize a checkpoint's knowledge space");
  inspect->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  inspect->add_flag("--json", as_json, "machine-readable output");

  auto* exp = app.add_subcommand("export-latents", "encode demos and dump latents as CSV");
  exp->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  exp->add_option("--data", demos_path, "demo record file")->required();
  exp->add_option("--out", out_csv, "output CSV")->required();

  auto* gen = app.add_subcommand("gen-tasks", "generate a task set (and optionally demos)");
  gen->add_option("--seed", gen_seed, "task set seed");
  gen->add_option("--n-tasks", n_tasks, "number of tasks");
  gen->add_option("--pool-size", pool, "shared primitive pool size");
  gen->add_option("--out", out_path, "write task set JSON here (stdout otherwise)");
  gen->add_option("--demos-per-task", demos_per_task, "expert demos per task for --demos-out");
  gen->add_option("--demos-out", demos_out, "also write expert demos to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, out_dir, seed_flag, resume, stop_after);
    if (eval->parsed()) return cmd_eval(ckpt_path, episodes, as_json);
    if (metrics->parsed()) return cmd_metrics(r_csv, out_path);
    if (inspect->parsed()) return cmd_inspect_knowledge(ckpt_path, as_json);
    if (exp->parsed()) return cmd_export_latents(ckpt_path, demos_path, out_csv);
    if (gen->parsed()) return cmd_gen_tasks(gen_seed, n_tasks, pool, out_path, demos_per_task,
                                            demos_out);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
