#include "stellar/config.hpp"

#include <set>
#include <stdexcept>

namespace stellar {

namespace {

// Reads known keys and rejects everything else.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw std::invalid_argument("config: " + where_ + " must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        out = j_.at(key).get<T>();
      } catch (const Json::exception&) {
        throw std::invalid_argument("config: bad value for " + where_ + "." + key);
      }
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key))
        throw std::invalid_argument("config: unknown key '" + where_ + "." + key + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  if (variant != "t_stellar" && variant != "ts_stellar")
    throw std::invalid_argument("config: variant must be t_stellar or ts_stellar");
  if (tasks.n_tasks < 1) throw std::invalid_argument("config: tasks.n_tasks must be >= 1");
  if (tasks.pool_size < 2) throw std::invalid_argument("config: tasks.pool_size must be >= 2");
  if (tasks.demos_per_task < 1)
    throw std::invalid_argument("config: tasks.demos_per_task must be >= 1");
  if (train.steps_per_task < 0)
    throw std::invalid_argument("config: train.steps_per_task must be >= 0");
  if (train.batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
  if (train.knowledge_update_every < 1)
    throw std::invalid_argument("config: train.knowledge_update_every must be >= 1");
  if (train.latent_window < 1 || train.window_slots < 1)
    throw std::invalid_argument("config: train.latent_window and window_slots must be >= 1");
  if (!(replay.q > 0.0 && replay.q <= 1.0))
    throw std::invalid_argument("config: replay.q must lie in (0, 1]");
  if (eval.episodes < 0) throw std::invalid_argument("config: eval.episodes must be >= 0");
  if (model.top_k_experts < 1 || model.top_k_experts > model.n_experts)
    throw std::invalid_argument("config: model.top_k_experts must lie in [1, n_experts]");
  if (stop_after_task < 0) throw std::invalid_argument("config: stop_after_task must be >= 0");
  if (ablations.no_vae && !ablations.no_ks) {
    // Without latents there is nothing to cluster; no_vae implies the space
    // is inert. This is handled by the engine, not an error.
  }
}

RunConfig RunConfig::from_json(const Json& j) {
  RunConfig cfg;
  StrictObject root(j, "");
  root.read("variant", cfg.variant);
  root.read("seed", cfg.seed);
  root.read("stop_after_task", cfg.stop_after_task);

  if (const Json* a = root.child("ablations")) {
    StrictObject o(*a, "ablations");
    o.read("no_vae", cfg.ablations.no_vae);
    o.read("no_ks", cfg.ablations.no_ks);
    o.read("no_kroute", cfg.ablations.no_kroute);
    o.finish();
  }
  if (const Json* t = root.child("tasks")) {
    StrictObject o(*t, "tasks");
    o.read("n_tasks", cfg.tasks.n_tasks);
    o.read("pool_size", cfg.tasks.pool_size);
    o.read("min_primitives", cfg.tasks.min_primitives);
    o.read("max_primitives", cfg.tasks.max_primitives);
    o.read("demos_per_task", cfg.tasks.demos_per_task);
    o.finish();
  }
  if (const Json* t = root.child("train")) {
    StrictObject o(*t, "train");
    o.read("steps_per_task", cfg.train.steps_per_task);
    o.read("batch_size", cfg.train.batch_size);
    o.read("lr_latent", cfg.train.lr_latent);
    o.read("lr_policy", cfg.train.lr_policy);
    o.read("beta", cfg.train.beta);
    o.read("beta_warmup_steps", cfg.train.beta_warmup_steps);
    o.read("knowledge_update_every", cfg.train.knowledge_update_every);
    o.read("latent_window", cfg.train.latent_window);
    o.read("window_slots", cfg.train.window_slots);
    o.finish();
  }
  if (const Json* m = root.child("model")) {
    StrictObject o(*m, "model");
    o.read("latent_dim", cfg.model.latent_dim);
    o.read("token_embed_dim", cfg.model.token_embed_dim);
    o.read("hidden_dim", cfg.model.hidden_dim);
    o.read("model_dim", cfg.model.model_dim);
    o.read("n_experts", cfg.model.n_experts);
    o.read("top_k_experts", cfg.model.top_k_experts);
    o.read("n_blocks", cfg.model.n_blocks);
    o.read("ff_dim", cfg.model.ff_dim);
    o.read("k_top_semantic", cfg.model.k_top_semantic);
    o.read("semantic_dim", cfg.model.semantic_dim);
    o.read("n_sigmas", cfg.model.n_sigmas);
    o.read("sigma_min", cfg.model.sigma_min);
    o.read("sigma_max", cfg.model.sigma_max);
    o.finish();
  }
  if (const Json* k = root.child("knowledge")) {
    StrictObject o(*k, "knowledge");
    o.read("alpha", cfg.knowledge.alpha);
    o.read("gamma", cfg.knowledge.gamma);
    o.read("k_max", cfg.knowledge.k_max);
    o.read("kappa0", cfg.knowledge.kappa0);
    o.read("a0", cfg.knowledge.a0);
    o.read("b0", cfg.knowledge.b0);
    o.read("birth_percentile", cfg.knowledge.birth_percentile);
    o.read("birth_min_count", cfg.knowledge.birth_min_count);
    o.read("merge_threshold", cfg.knowledge.merge_threshold);
    o.finish();
  }
  if (const Json* e = root.child("eval")) {
    StrictObject o(*e, "eval");
    o.read("episodes", cfg.eval.episodes);
    o.finish();
  }
  if (const Json* r = root.child("replay")) {
    StrictObject o(*r, "replay");
    o.read("q", cfg.replay.q);
    o.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

Json RunConfig::to_json() const {
  return Json{
      {"variant", variant},
      {"seed", seed},
      {"stop_after_task", stop_after_task},
      {"ablations",
       {{"no_vae", ablations.no_vae}, {"no_ks", ablations.no_ks}, {"no_kroute", ablations.no_kroute}}},
      {"tasks",
       {{"n_tasks", tasks.n_tasks},
        {"pool_size", tasks.pool_size},
        {"min_primitives", tasks.min_primitives},
        {"max_primitives", tasks.max_primitives},
        {"demos_per_task", tasks.demos_per_task}}},
      {"train",
       {{"steps_per_task", train.steps_per_task},
        {"batch_size", train.batch_size},
        {"lr_latent", train.lr_latent},
        {"lr_policy", train.lr_policy},
        {"beta", train.beta},
        {"beta_warmup_steps", train.beta_warmup_steps},
        {"knowledge_update_every", train.knowledge_update_every},
        {"latent_window", train.latent_window},
        {"window_slots", train.window_slots}}},
      {"model",
       {{"latent_dim", model.latent_dim},
        {"token_embed_dim", model.token_embed_dim},
        {"hidden_dim", model.hidden_dim},
        {"model_dim", model.model_dim},
        {"n_experts", model.n_experts},
        {"top_k_experts", model.top_k_experts},
        {"n_blocks", model.n_blocks},
        {"ff_dim", model.ff_dim},
        {"k_top_semantic", model.k_top_semantic},
        {"semantic_dim", model.semantic_dim},
        {"n_sigmas", model.n_sigmas},
        {"sigma_min", model.sigma_min},
        {"sigma_max", model.sigma_max}}},
      {"knowledge",
       {{"alpha", knowledge.alpha},
        {"gamma", knowledge.gamma},
        {"k_max", knowledge.k_max},
        {"kappa0", knowledge.kappa0},
        {"a0", knowledge.a0},
        {"b0", knowledge.b0},
        {"birth_percentile", knowledge.birth_percentile},
        {"birth_min_count", knowledge.birth_min_count},
        {"merge_threshold", knowledge.merge_threshold}}},
      {"eval", {{"episodes", eval.episodes}}},
      {"replay", {{"q", replay.q}}}};
}

std::uint64_t RunConfig::config_hash() const { return fnv1a64(to_json().dump()); }

RunConfig load_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw std::invalid_argument("config: file not found: " + path.string());
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    throw std::invalid_argument("config: parse error in " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

}  // namespace stellar
