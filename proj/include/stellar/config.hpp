#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "stellar/knowledge_space.hpp"
#include "stellar/serialize.hpp"

namespace stellar {

// One file fully determines a run. Parsing is fail-closed: any unknown key
// anywhere in the document is rejected.
struct RunConfig {
  std::string variant = "t_stellar";  // t_stellar | ts_stellar

  struct Ablations {
    bool no_vae = false;
    bool no_ks = false;
    bool no_kroute = false;
  } ablations;

  std::uint64_t seed = 0;

  struct Tasks {
    int n_tasks = 10;
    int pool_size = 6;
    int min_primitives = 1;
    int max_primitives = 3;
    int demos_per_task = 40;
  } tasks;

  struct Train {
    int steps_per_task = 400;
    int batch_size = 16;
    double lr_latent = 1e-3;
    double lr_policy = 1e-3;
    double beta = 0.05;
    int beta_warmup_steps = 200;
    int knowledge_update_every = 50;
    int latent_window = 256;
    int window_slots = 8;
  } train;

  struct Model {
    int latent_dim = 8;
    int token_embed_dim = 16;
    int hidden_dim = 64;
    int model_dim = 64;
    int n_experts = 4;
    int top_k_experts = 2;
    int n_blocks = 2;
    int ff_dim = 128;
    int k_top_semantic = 3;
    int semantic_dim = 16;
    int n_sigmas = 10;
    double sigma_min = 0.01;
    double sigma_max = 10.0;
  } model;

  struct Knowledge {
    double alpha = 1.0;
    double gamma = 1.0;
    int k_max = 50;
    double kappa0 = 0.1;
    double a0 = 1.0;
    double b0 = 1.0;
    double birth_percentile = 0.05;
    double birth_min_count = 4.0;
    double merge_threshold = 0.5;
  } knowledge;

  struct Eval {
    int episodes = 100;
  } eval;

  struct Replay {
    double q = 0.05;
  } replay;

  // 0 runs the whole stream; otherwise stop (with a checkpoint) after this
  // many completed tasks. Used for staged runs and resume testing.
  int stop_after_task = 0;

  KnowledgeMode mode() const {
    return variant == "ts_stellar" ? KnowledgeMode::TaskSkill : KnowledgeMode::TaskOnly;
  }

  void validate() const;
  static RunConfig from_json(const Json& j);
  Json to_json() const;
  std::uint64_t config_hash() const;
};

RunConfig load_config_file(const std::filesystem::path& path);

}  // namespace stellar
