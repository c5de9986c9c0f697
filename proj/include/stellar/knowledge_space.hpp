#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stellar/numerics.hpp"
#include "stellar/serialize.hpp"

namespace stellar {

enum class KnowledgeMode { TaskOnly, TaskSkill };
enum class RespLevel { Task, Skill };

// Per-dimension Normal-Gamma base measure: precision ~ Gamma(a0, b0),
// mean | precision ~ N(m0, 1/(kappa0 * precision)).
struct NormalGammaPrior {
  Vec m0;
  double kappa0 = 0.1;
  double a0 = 1.0;
  double b0 = 1.0;
};

struct SuffStats {
  double count = 0.0;
  Vec sum;
  Vec sum_sq;

  void resize(std::size_t dim);
  void add_point(const Vec& x, double r);
  void add(const SuffStats& other);
  void subtract(const SuffStats& other);
};

struct Cluster {
  int id = 0;
  DiagGaussian dist;         // plug-in Gaussian from the posterior mean parameters
  double weight = 0.0;       // stick-breaking weight estimate
  SuffStats suff_stats;      // memoized totals over all cached batches
};

struct Responsibilities {
  std::vector<int> cluster_ids;
  Vec probs;  // normalized, aligned with cluster_ids
};

struct UpdateSummary {
  double elbo = 0.0;
  int births = 0;
  int merges = 0;
  bool births_suppressed = false;  // a birth was blocked by the K_max cap
};

struct BatchPoint {
  Vec z;
  int task_id = 0;
};

// Self-evolving DP knowledge space. TaskOnly mode is a flat DPMM over task
// latents; TaskSkill mode clusters skill latents and additionally maintains
// per-task local mixture weights over the shared skill atoms.
//
// Updates are single-writer; all query methods are const and safe to call
// concurrently between updates.
class KnowledgeSpace {
 public:
  struct Config {
    KnowledgeMode mode = KnowledgeMode::TaskOnly;
    std::size_t dim = 0;
    double alpha = 1.0;
    double gamma = 1.0;  // TaskSkill only
    int k_max = 50;
    NormalGammaPrior prior;  // m0 resized to dim with zeros if empty
    double birth_percentile = 0.05;
    double birth_min_count = 4.0;  // reject births that settle below this mass
    double merge_threshold = 0.5;
  };

  explicit KnowledgeSpace(Config cfg);

  // A space with pinned cluster parameters and no sufficient statistics.
  // Used by tests and by the "knowledge space off" ablation, where the space
  // degenerates to a fixed standard Gaussian. Updates on a fixed space throw.
  static KnowledgeSpace from_fixed_clusters(Config cfg, std::vector<Cluster> clusters,
                                            std::map<int, std::map<int, double>> task_tables = {});

  const Config& config() const { return cfg_; }
  KnowledgeMode mode() const { return cfg_.mode; }
  bool empty() const { return clusters_.empty(); }
  int active_cluster_count() const { return static_cast<int>(clusters_.size()); }
  const std::vector<Cluster>& clusters() const { return clusters_; }
  const Cluster* find_cluster(int id) const;

  // p_k over clusters: Task level queries task distributions (flat clusters in
  // TaskOnly mode, composed per-task Gaussians in TaskSkill mode, keyed by
  // task id); Skill level queries the skill clusters directly.
  Responsibilities responsibilities(const Vec& z, RespLevel level) const;

  // Eq-style moment matching of a task's Gaussian from its skill mixture.
  DiagGaussian compose_task_distribution(int task_id) const;

  std::vector<int> known_task_ids() const;
  // Local mixture weights over skill cluster ids; rows sum to 1.
  std::map<int, double> task_table_row(int task_id) const;

  // One memoized-VB pass: replaces batch_slot's cached contribution, runs an
  // E/M sweep, then proposes one birth and one merge, each gated on the exact
  // full-data ELBO. Passing the same batch_slot again replaces that slot.
  UpdateSummary memo_vb_update(const std::vector<BatchPoint>& batch, int batch_slot);

  // TaskSkill-mode update: memoized VB on skill clusters plus re-estimation of
  // the per-task local weights (gamma-smoothed responsibility counts).
  UpdateSummary hdp_update(const std::vector<BatchPoint>& batch, int batch_slot);

  void bootstrap_first_cluster(const std::vector<BatchPoint>& batch);

  double elbo() const;

  Bytes serialize() const;
  static KnowledgeSpace deserialize(const Bytes& bytes);

  // Applies a permutation of cluster ids (test hook for the relabeling
  // invariance property). Stick order is untouched.
  void relabel_clusters(const std::map<int, int>& id_map);

 private:
  struct BatchCache {
    std::vector<Vec> points;
    std::vector<int> task_ids;
    std::vector<int> cluster_ids;        // column order for resp rows
    std::vector<Vec> resp;               // one row per point, aligned with cluster_ids
    double entropy = 0.0;                // -sum_n sum_k r ln r
  };

  Config cfg_;
  std::vector<Cluster> clusters_;  // stick order == creation order
  int next_id_ = 0;
  bool fixed_ = false;
  std::map<int, BatchCache> caches_;
  std::map<int, std::map<int, double>> fixed_task_tables_;  // fixed spaces only

  struct Posterior {
    Vec m;
    double kappa = 0.0;
    double a = 0.0;
    Vec b;
  };

  Posterior posterior_of(const Cluster& c) const;
  void refresh_derived();
  Vec expected_log_pi() const;
  double expected_log_density(const Posterior& post, const Vec& x) const;
  Vec stick_weights_from_counts() const;

  // Variational parameters captured before a cache replacement so the E-step
  // runs against the current posteriors, not the mid-surgery statistics.
  struct FrozenParams {
    std::vector<Posterior> posts;
    Vec log_pi;
    std::vector<int> ids;
  };
  FrozenParams freeze() const;
  void estep_batch(const std::vector<BatchPoint>& batch, BatchCache& cache,
                   const FrozenParams& frozen) const;
  void apply_cache_stats(const BatchCache& cache, double sign);
  double predictive_log_density(const Vec& x) const;
  std::map<int, double> task_counts(int task_id) const;
  double total_task_count(int task_id) const;
  UpdateSummary update_impl(const std::vector<BatchPoint>& batch, int batch_slot);
  bool try_birth(const std::vector<BatchPoint>& batch, int batch_slot);
  bool try_merge();
  void require_mutable() const;
};

// pi_k = v_k * prod_{l<k} (1 - v_l). Every stick must lie in (0, 1).
Vec stick_breaking_weights(const Vec& sticks);

}  // namespace stellar
