#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "stellar/autodiff.hpp"
#include "stellar/knowledge_space.hpp"
#include "stellar/numerics.hpp"
#include "stellar/rng.hpp"
#include "stellar/serialize.hpp"
#include "stellar/synthetic_suite.hpp"

namespace stellar {

struct LatentBundle {
  DiagGaussian z_task;
  Vec z_task_sample;
  DiagGaussian z_skill;   // TaskSkill mode only
  Vec z_skill_sample;     // TaskSkill mode only
  Responsibilities resp_task;
  Responsibilities resp_skill;  // TaskSkill mode only
};

struct VaeLoss {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;  // recon + beta * kl
};

struct VaeSample {
  LangTokens lang;
  ObsVector obs;
};

// Task-centric representation learner. TaskOnly: one encoder over pooled
// language embeddings and the observation, reconstructing both from z_task.
// TaskSkill: z_task encodes language; z_skill is produced from the sampled
// z_task and an observation embedding, reconstructing the observation.
class LatentModel {
 public:
  struct Config {
    KnowledgeMode mode = KnowledgeMode::TaskOnly;
    int latent_dim = 8;
    int token_embed_dim = 16;
    int hidden_dim = 64;
    double beta = 0.05;
    int beta_warmup_steps = 200;
    double lr = 1e-3;
  };

  LatentModel(Config cfg, std::uint64_t init_seed);

  const Config& config() const { return cfg_; }

  // Posterior + reparameterized sample + responsibilities from the knowledge
  // space. Deterministic given weights, inputs and rng state.
  LatentBundle encode(const LangTokens& lang, const ObsVector& obs, const KnowledgeSpace& ks,
                      Rng& rng) const;
  // Evaluation variant: the sample is the posterior mean.
  LatentBundle encode_mean(const LangTokens& lang, const ObsVector& obs,
                           const KnowledgeSpace& ks) const;

  // Posterior without knowledge-space responsibilities (they come back
  // empty); used to bootstrap an empty space.
  LatentBundle encode_prior(const LangTokens& lang, const ObsVector& obs) const;

  // Cluster-weighted losses; responsibilities in the bundle are treated as
  // constants. Pure value computations (no gradients).
  VaeLoss loss_t_stellar(const LatentBundle& bundle, const LangTokens& lang, const ObsVector& obs,
                         const KnowledgeSpace& ks) const;
  VaeLoss loss_ts_stellar(const LatentBundle& bundle, const LangTokens& lang, const ObsVector& obs,
                          const KnowledgeSpace& ks) const;

  // Builds the mean training loss over the batch on the tape; noise draws come
  // from rng. Returns the scalar loss node. Exposed for the gradient contract.
  int build_training_loss(ad::Tape& tape, const std::vector<VaeSample>& batch,
                          const KnowledgeSpace& ks, double beta_eff, Rng& rng) const;

  // One Adam step on the batch loss; returns the mean loss components.
  // Aborts (throws) on a non-finite loss, naming the offending sample.
  VaeLoss train_step(const std::vector<VaeSample>& batch, const KnowledgeSpace& ks, Rng& rng);

  void reset_beta_warmup() { warmup_step_ = 0; }
  double current_beta() const;
  int warmup_step() const { return warmup_step_; }

  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  Json checkpoint_state() const;
  void restore_state(const Json& state);

 private:
  Config cfg_;
  ad::ParamStore params_;
  ad::Adam opt_;
  int warmup_step_ = 0;

  struct Ids {
    int tok_embed = -1;
    int enc_w1 = -1, enc_b1 = -1, enc_w2 = -1, enc_b2 = -1;
    int enc_mean_w = -1, enc_mean_b = -1, enc_var_w = -1, enc_var_b = -1;
    int obs_embed_w = -1, obs_embed_b = -1;              // TaskSkill
    int skill_w1 = -1, skill_b1 = -1, skill_w2 = -1, skill_b2 = -1;
    int skill_mean_w = -1, skill_mean_b = -1, skill_var_w = -1, skill_var_b = -1;
    int dec_lang_w1 = -1, dec_lang_b1 = -1, dec_lang_w2 = -1, dec_lang_b2 = -1;
    int dec_obs_w1 = -1, dec_obs_b1 = -1, dec_obs_w2 = -1, dec_obs_b2 = -1;
  } ids_;

  struct Encoded {
    int task_mean = -1, task_var = -1, task_sample = -1;
    int skill_mean = -1, skill_var = -1, skill_sample = -1;
  };

  int pooled_lang_embedding(ad::Tape& tape, ad::ParamStore& ps, const LangTokens& lang) const;
  Encoded encode_on_tape(ad::Tape& tape, ad::ParamStore& ps, const LangTokens& lang,
                         const ObsVector& obs, const Vec& eps_task, const Vec& eps_skill) const;
  int recon_loss_on_tape(ad::Tape& tape, ad::ParamStore& ps, const Encoded& enc,
                         const LangTokens& lang, const ObsVector& obs) const;
  int kl_loss_on_tape(ad::Tape& tape, const Encoded& enc, const KnowledgeSpace& ks,
                      const Responsibilities& resp_task, const Responsibilities& resp_skill) const;
};

}  // namespace stellar
