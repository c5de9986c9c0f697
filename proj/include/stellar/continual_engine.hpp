#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stellar/config.hpp"
#include "stellar/knowledge_space.hpp"
#include "stellar/latent_model.hpp"
#include "stellar/metrics_report.hpp"
#include "stellar/policy_head.hpp"
#include "stellar/synthetic_suite.hpp"

namespace stellar {

// Exactly ceil(q * N) demos of each finished task are retained (a uniform
// seeded sample); earlier tasks' retained sets never change.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(double q);

  void retain_task(int task_id, const std::vector<Demo>& demos, Rng& rng);
  const std::vector<Demo>& retained(int task_id) const;
  const std::vector<int>& retained_indices(int task_id) const;
  std::vector<int> task_ids() const;
  bool empty() const { return demos_.empty(); }

  Json manifest() const;
  void restore_from_manifest(const Json& manifest,
                             const std::function<std::vector<Demo>(int)>& regenerate);

 private:
  double q_;
  std::map<int, std::vector<int>> indices_;
  std::map<int, std::vector<Demo>> demos_;
};

struct EngineResult {
  SuccessMatrix R;
  std::optional<MetricsReport> metrics;  // present when the stream completed
  bool complete = false;
  std::filesystem::path run_dir;
};

// Orchestrates sequential task learning: replay, the alternating
// latent/knowledge/policy self-evolution cycle, evaluation, checkpointing.
class ContinualEngine {
 public:
  ContinualEngine(RunConfig cfg, std::filesystem::path run_dir);

  // Runs from scratch or resumes from the checkpoint in the run directory.
  EngineResult run();

  bool already_complete() const;

  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  const KnowledgeSpace& knowledge() const { return *ks_; }
  const LatentModel& latent_model() const { return *latent_; }
  PolicyHead& policy() { return *policy_; }

  static constexpr int kCheckpointVersion = 1;
  static constexpr const char* kCheckpointFile = "checkpoint.bin";

 private:
  RunConfig cfg_;
  std::filesystem::path dir_;
  std::vector<TaskSpec> tasks_;
  std::unique_ptr<LatentModel> latent_;
  std::unique_ptr<PolicyHead> policy_;
  std::unique_ptr<KnowledgeSpace> ks_;
  ReplayBuffer replay_;
  SuccessMatrix r_so_far_;
  int next_task_ = 0;
  std::deque<BatchPoint> window_;
  int window_updates_ = 0;
  int cluster_count_seen_ = 0;
  std::string routing_csv_;

  enum class Phase { Idle, Train, Knowledge };
  Phase phase_ = Phase::Idle;

  struct BatchItem {
    int task_id = 0;
    const Demo* demo = nullptr;
    int t = 0;
  };

  void build_models();
  void learn_task(int task_id);
  std::vector<BatchItem> sample_batch(int current_task, const std::vector<Demo>& current,
                                      Rng& rng) const;
  ActionChunk target_chunk(const Demo& demo, int t) const;
  PolicyCond make_cond(const LangTokens& lang, const ObsVector& obs) const;
  void knowledge_phase(const std::vector<Demo>& current, int current_task, Rng& rng);
  Vec window_latent(const LatentBundle& bundle) const;
  double evaluate_task(int stage, int task_id, std::map<int, int>* expert_hist);
  void save_checkpoint() const;
  bool load_checkpoint();
  void export_latents_csv() const;
  void finalize();
};

// Shared by the engine and the CLI export command.
std::string latents_to_csv(const LatentModel& latent, const KnowledgeSpace& ks,
                           const std::vector<TaskSpec>& tasks, const std::vector<Demo>& demos,
                           int stride);

}  // namespace stellar
