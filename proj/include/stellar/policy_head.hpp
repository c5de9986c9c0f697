#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "stellar/autodiff.hpp"
#include "stellar/knowledge_space.hpp"
#include "stellar/numerics.hpp"
#include "stellar/rng.hpp"
#include "stellar/serialize.hpp"
#include "stellar/synthetic_suite.hpp"

namespace stellar {

// f_R = sum_k p_k |z - mu_k|, elementwise. Cluster ids resolve against ks.
Vec relation_embedding(const Vec& z, const Responsibilities& resp, const KnowledgeSpace& ks);

struct KnowledgeEmbedding {
  Vec f_r;
  Vec f_s;
  Vec f_know;  // [z || f_r || f_s]
};

struct RouterInput {
  Vec tok_noise;
  Vec tok_lang;
  Vec f_know;
};

// Conditioning for one denoiser evaluation. Latent, relation embedding and
// responsibilities are constants from the policy's point of view; gradient
// flows only into the learned semantic rows and projections.
struct PolicyCond {
  LangTokens lang;
  ObsVector obs;
  Vec z;
  Vec f_r;
  Responsibilities resp;
  bool know_enabled = true;  // false zeroes the knowledge token (w/o VAE)
};

struct BcSample {
  PolicyCond cond;
  ActionChunk target;
};

// Diffusion action head: a small denoising transformer whose feed-forward
// layers are mixtures of experts routed by (noise, language, knowledge).
class PolicyHead {
 public:
  struct Config {
    int model_dim = 64;
    int n_experts = 4;
    int top_k_experts = 2;
    int n_blocks = 2;
    int ff_dim = 128;
    int k_top_semantic = 3;
    int semantic_dim = 16;
    int latent_dim = 8;
    int n_sigmas = 10;
    double sigma_min = 0.01;
    double sigma_max = 10.0;
    bool knowledge_routing = true;  // false drops f_know from the router input
    double lr = 1e-3;
    int horizon = kChunkHorizon;
    int action_dim = kActionDim;
  };

  PolicyHead(Config cfg, std::uint64_t init_seed);

  const Config& config() const { return cfg_; }
  const Vec& sigma_schedule() const { return sigmas_; }  // descending

  // Learned per-cluster semantic rows; unknown ids allocate a zero row.
  Vec semantic_embedding(const Responsibilities& resp, int k_top);
  KnowledgeEmbedding knowledge_embedding(const Vec& z, const Responsibilities& resp,
                                         const KnowledgeSpace& ks);

  // One denoiser evaluation predicting the clean chunk. sigma must be a
  // member of the schedule.
  ActionChunk denoise_step(const ActionChunk& noisy, double sigma, const PolicyCond& cond);

  // Ancestral sampling down the schedule (deterministic update rule; rng only
  // seeds the initial noise). top1_out, when given, receives the top-1 expert
  // per MoE layer from the first denoiser evaluation.
  ActionChunk sample_action(const PolicyCond& cond, Rng& rng,
                            std::vector<int>* top1_out = nullptr);

  // Denoising score-matching step (predict the clean chunk at a random noise
  // level); returns the mean batch loss.
  double bc_training_step(const std::vector<BcSample>& batch, Rng& rng);

  int build_bc_loss(ad::Tape& tape, const std::vector<BcSample>& batch, Rng& rng);

  // Top-1 expert per MoE layer for the given conditioning (used for routing
  // histograms and the specialization tests).
  std::vector<int> route_top1(const PolicyCond& cond, double sigma);

  // Single MoE layer evaluated standalone.
  Vec moe_forward(int block_index, const Vec& tok, const RouterInput& ri);

  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  int param_entry(const std::string& name) const;

  Json checkpoint_state() const;
  void restore_state(const Json& state);

 private:
  struct BlockIds {
    int wq, wk, wv, wo;
    int router_w, router_b;
    std::vector<int> expert_w1, expert_b1, expert_w2, expert_b2;
  };

  Config cfg_;
  Vec sigmas_;
  ad::ParamStore params_;
  ad::Adam opt_;
  std::vector<BlockIds> blocks_;
  int sig_w_, sig_b_;
  int lang_table_, lang_w_, lang_b_;
  int obs_w_, obs_b_;
  int know_w_, know_b_;
  int act_w_, act_b_, pos_emb_;
  int out_w_, out_b_;
  std::map<int, int> semantic_rows_;  // cluster id -> param entry
  int lang_embed_dim_ = 16;

  int know_dim() const { return cfg_.latent_dim * 2 + cfg_.semantic_dim; }
  int router_in_dim() const {
    return cfg_.knowledge_routing ? 2 * cfg_.model_dim + know_dim() : 2 * cfg_.model_dim;
  }
  int semantic_row_entry(int cluster_id);

  struct Forward {
    std::vector<int> action_rows;  // H nodes of action_dim
    std::vector<int> top1;         // per block
  };
  Forward forward_on_tape(ad::Tape& tape, const ActionChunk& noisy, double sigma,
                          const PolicyCond& cond);
  int semantic_on_tape(ad::Tape& tape, const Responsibilities& resp);
  int moe_on_tape(ad::Tape& tape, const BlockIds& blk, int tok, int router_logits, int* top1);
  int router_logits_on_tape(ad::Tape& tape, const BlockIds& blk, int tok_noise, int tok_lang,
                            int f_know);
  Vec sigma_embedding(double sigma) const;
  void validate_sigma(double sigma) const;
};

}  // namespace stellar
