#include "stellar/policy_head.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace stellar {

Vec relation_embedding(const Vec& z, const Responsibilities& resp, const KnowledgeSpace& ks) {
  Vec f_r(z.size(), 0.0);
  for (std::size_t k = 0; k < resp.cluster_ids.size(); ++k) {
    const double p = resp.probs[k];
    if (p <= 0.0) continue;
    const Cluster* c = ks.find_cluster(resp.cluster_ids[k]);
    if (c == nullptr)
      throw std::invalid_argument("relation_embedding: unknown cluster id " +
                                  std::to_string(resp.cluster_ids[k]));
    for (std::size_t d = 0; d < z.size(); ++d) f_r[d] += p * std::abs(z[d] - c->dist.mean[d]);
  }
  return f_r;
}

namespace {

Vec uniform_init(Rng& rng, std::size_t n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Vec xavier_init(Rng& rng, std::size_t rows, std::size_t cols) {
  return uniform_init(rng, rows * cols, std::sqrt(6.0 / static_cast<double>(rows + cols)));
}

// Top-K indices by probability, ties broken toward the lowest cluster id.
std::vector<std::size_t> top_k_by_prob(const Responsibilities& resp, int k_top) {
  std::vector<std::size_t> order(resp.cluster_ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&resp](std::size_t a, std::size_t b) {
    if (resp.probs[a] != resp.probs[b]) return resp.probs[a] > resp.probs[b];
    return resp.cluster_ids[a] < resp.cluster_ids[b];
  });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k_top)));
  return order;
}

}  // namespace

PolicyHead::PolicyHead(Config cfg, std::uint64_t init_seed) : cfg_(cfg), opt_(cfg.lr) {
  if (cfg_.top_k_experts < 1 || cfg_.top_k_experts > cfg_.n_experts)
    throw std::invalid_argument("PolicyHead: top_k_experts must lie in [1, n_experts]");
  if (cfg_.n_sigmas < 1) throw std::invalid_argument("PolicyHead: n_sigmas must be >= 1");
  if (cfg_.model_dim % 2 != 0) throw std::invalid_argument("PolicyHead: model_dim must be even");

  sigmas_.resize(static_cast<std::size_t>(cfg_.n_sigmas));
  if (cfg_.n_sigmas == 1) {
    sigmas_[0] = cfg_.sigma_max;
  } else {
    const double log_min = std::log(cfg_.sigma_min);
    const double log_max = std::log(cfg_.sigma_max);
    for (int i = 0; i < cfg_.n_sigmas; ++i)
      sigmas_[static_cast<std::size_t>(i)] =
          std::exp(log_max + (log_min - log_max) * i / (cfg_.n_sigmas - 1));
  }

  Rng rng = derive_rng(init_seed, "policy_init");
  const auto dm = static_cast<std::size_t>(cfg_.model_dim);
  const auto ff = static_cast<std::size_t>(cfg_.ff_dim);
  const auto ne = static_cast<std::size_t>(cfg_.n_experts);
  const auto emb = static_cast<std::size_t>(lang_embed_dim_);

  sig_w_ = params_.add("sig_w", xavier_init(rng, dm, dm));
  sig_b_ = params_.add("sig_b", Vec(dm, 0.0));
  lang_table_ = params_.add("lang_table", uniform_init(rng, kVocabSize * emb, 0.1));
  lang_w_ = params_.add("lang_w", xavier_init(rng, dm, emb));
  lang_b_ = params_.add("lang_b", Vec(dm, 0.0));
  obs_w_ = params_.add("obs_w", xavier_init(rng, dm, kObsDim));
  obs_b_ = params_.add("obs_b", Vec(dm, 0.0));
  know_w_ = params_.add("know_w", xavier_init(rng, dm, static_cast<std::size_t>(know_dim())));
  know_b_ = params_.add("know_b", Vec(dm, 0.0));
  act_w_ = params_.add("act_w", xavier_init(rng, dm, static_cast<std::size_t>(cfg_.action_dim)));
  act_b_ = params_.add("act_b", Vec(dm, 0.0));
  pos_emb_ = params_.add("pos_emb",
                         uniform_init(rng, static_cast<std::size_t>(cfg_.horizon) * dm, 0.1));
  out_w_ = params_.add("out_w", xavier_init(rng, static_cast<std::size_t>(cfg_.action_dim), dm));
  out_b_ = params_.add("out_b", Vec(static_cast<std::size_t>(cfg_.action_dim), 0.0));

  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b) + "_";
    BlockIds blk;
    blk.wq = params_.add(prefix + "wq", xavier_init(rng, dm, dm));
    blk.wk = params_.add(prefix + "wk", xavier_init(rng, dm, dm));
    blk.wv = params_.add(prefix + "wv", xavier_init(rng, dm, dm));
    blk.wo = params_.add(prefix + "wo", xavier_init(rng, dm, dm));
    blk.router_w = params_.add(prefix + "router_w",
                               uniform_init(rng, ne * static_cast<std::size_t>(router_in_dim()),
                                            0.5 / std::sqrt(static_cast<double>(router_in_dim()))));
    blk.router_b = params_.add(prefix + "router_b", Vec(ne, 0.0));
    for (int e = 0; e < cfg_.n_experts; ++e) {
      const std::string ep = prefix + "expert" + std::to_string(e) + "_";
      blk.expert_w1.push_back(params_.add(ep + "w1", xavier_init(rng, ff, dm)));
      blk.expert_b1.push_back(params_.add(ep + "b1", Vec(ff, 0.0)));
      blk.expert_w2.push_back(params_.add(ep + "w2", xavier_init(rng, dm, ff)));
      blk.expert_b2.push_back(params_.add(ep + "b2", Vec(dm, 0.0)));
    }
    blocks_.push_back(std::move(blk));
  }
}

int PolicyHead::param_entry(const std::string& name) const {
  for (int i = 0; i < params_.size(); ++i)
    if (params_.at(i).name == name) return i;
  throw std::out_of_range("PolicyHead: no parameter named " + name);
}

int PolicyHead::semantic_row_entry(int cluster_id) {
  auto it = semantic_rows_.find(cluster_id);
  if (it != semantic_rows_.end()) return it->second;
  const int entry = params_.add("semantic_row_" + std::to_string(cluster_id),
                                Vec(static_cast<std::size_t>(cfg_.semantic_dim), 0.0));
  semantic_rows_[cluster_id] = entry;
  return entry;
}

Vec PolicyHead::semantic_embedding(const Responsibilities& resp, int k_top) {
  if (k_top < 1) throw std::invalid_argument("semantic_embedding: k_top must be >= 1");
  Vec f_s(static_cast<std::size_t>(cfg_.semantic_dim), 0.0);
  for (std::size_t idx : top_k_by_prob(resp, k_top)) {
    const auto& row = params_.at(semantic_row_entry(resp.cluster_ids[idx])).value;
    // Weights are the original probabilities, deliberately not renormalized
    // within the top-K set.
    for (std::size_t d = 0; d < f_s.size(); ++d) f_s[d] += resp.probs[idx] * row[d];
  }
  return f_s;
}

KnowledgeEmbedding PolicyHead::knowledge_embedding(const Vec& z, const Responsibilities& resp,
                                                   const KnowledgeSpace& ks) {
  KnowledgeEmbedding out;
  out.f_r = relation_embedding(z, resp, ks);
  out.f_s = semantic_embedding(resp, cfg_.k_top_semantic);
  out.f_know = z;
  out.f_know.insert(out.f_know.end(), out.f_r.begin(), out.f_r.end());
  out.f_know.insert(out.f_know.end(), out.f_s.begin(), out.f_s.end());
  return out;
}

Vec PolicyHead::sigma_embedding(double sigma) const {
  const auto dm = static_cast<std::size_t>(cfg_.model_dim);
  const double x = std::log(sigma);
  Vec emb(dm);
  const std::size_t half = dm / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    emb[2 * i] = std::sin(x * freq);
    emb[2 * i + 1] = std::cos(x * freq);
  }
  return emb;
}

void PolicyHead::validate_sigma(double sigma) const {
  for (double s : sigmas_)
    if (std::abs(s - sigma) <= 1e-12 * std::max(1.0, std::abs(s))) return;
  throw std::invalid_argument("denoise_step: sigma " + std::to_string(sigma) +
                              " is not in the schedule");
}

int PolicyHead::semantic_on_tape(ad::Tape& tape, const Responsibilities& resp) {
  int f_s = tape.constant(Vec(static_cast<std::size_t>(cfg_.semantic_dim), 0.0));
  for (std::size_t idx : top_k_by_prob(resp, cfg_.k_top_semantic)) {
    const int row = tape.param(params_, semantic_row_entry(resp.cluster_ids[idx]));
    f_s = tape.add(f_s, tape.scale(row, resp.probs[idx]));
  }
  return f_s;
}

int PolicyHead::router_logits_on_tape(ad::Tape& tape, const BlockIds& blk, int tok_noise,
                                      int tok_lang, int f_know) {
  const int ri = cfg_.knowledge_routing ? tape.concat({tok_noise, tok_lang, f_know})
                                        : tape.concat({tok_noise, tok_lang});
  return tape.add(tape.matvec(tape.param(params_, blk.router_w),
                              ri, static_cast<std::size_t>(cfg_.n_experts),
                              static_cast<std::size_t>(router_in_dim())),
                  tape.param(params_, blk.router_b));
}

int PolicyHead::moe_on_tape(ad::Tape& tape, const BlockIds& blk, int tok, int router_logits,
                            int* top1) {
  const auto dm = static_cast<std::size_t>(cfg_.model_dim);
  const auto ff = static_cast<std::size_t>(cfg_.ff_dim);

  // Top-k selection is by logit value (ties toward the lower expert index);
  // the gate is a softmax over the selected logits, so selected weights sum
  // to 1 and unselected experts contribute exactly zero.
  const Vec& logits = tape.val(router_logits);
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&logits](std::size_t a, std::size_t b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  order.resize(static_cast<std::size_t>(cfg_.top_k_experts));

  std::vector<int> picked;
  picked.reserve(order.size());
  for (std::size_t e : order) picked.push_back(tape.pick(router_logits, e));
  const int gates = tape.softmax_op(tape.concat(picked));
  if (top1 != nullptr) *top1 = static_cast<int>(order[0]);

  int out = -1;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const std::size_t e = order[j];
    const int h = tape.tanh_op(tape.add(
        tape.matvec(tape.param(params_, blk.expert_w1[e]), tok, ff, dm),
        tape.param(params_, blk.expert_b1[e])));
    const int eo = tape.add(tape.matvec(tape.param(params_, blk.expert_w2[e]), h, dm, ff),
                            tape.param(params_, blk.expert_b2[e]));
    const int weighted = tape.scale_by(eo, tape.pick(gates, j));
    out = out < 0 ? weighted : tape.add(out, weighted);
  }
  return out;
}

Vec PolicyHead::moe_forward(int block_index, const Vec& tok, const RouterInput& ri) {
  const auto& blk = blocks_.at(static_cast<std::size_t>(block_index));
  ad::Tape tape(false);
  const int logits = router_logits_on_tape(tape, blk, tape.constant(ri.tok_noise),
                                           tape.constant(ri.tok_lang), tape.constant(ri.f_know));
  const int out = moe_on_tape(tape, blk, tape.constant(tok), logits, nullptr);
  return tape.val(out);
}

PolicyHead::Forward PolicyHead::forward_on_tape(ad::Tape& tape, const ActionChunk& noisy,
                                                double sigma, const PolicyCond& cond) {
  if (static_cast<int>(noisy.rows.size()) != cfg_.horizon)
    throw std::invalid_argument("denoise: chunk horizon mismatch");
  const auto dm = static_cast<std::size_t>(cfg_.model_dim);
  const auto emb = static_cast<std::size_t>(lang_embed_dim_);

  // Input preconditioning keeps token magnitudes O(1) across the schedule.
  const double c_in = 1.0 / std::sqrt(1.0 + sigma * sigma);

  const int tok_noise =
      tape.add(tape.matvec(tape.param(params_, sig_w_), tape.constant(sigma_embedding(sigma)), dm, dm),
               tape.param(params_, sig_b_));

  const int table = tape.param(params_, lang_table_);
  int pooled = -1;
  for (int tok : cond.lang.tokens) {
    const int row = tape.slice(table, static_cast<std::size_t>(tok) * emb, emb);
    pooled = pooled < 0 ? row : tape.add(pooled, row);
  }
  pooled = tape.scale(pooled, 1.0 / static_cast<double>(kLangLen));
  const int tok_lang = tape.add(tape.matvec(tape.param(params_, lang_w_), pooled, dm, emb),
                                tape.param(params_, lang_b_));

  const int tok_obs =
      tape.add(tape.matvec(tape.param(params_, obs_w_), tape.constant(cond.obs.features), dm,
                           kObsDim),
               tape.param(params_, obs_b_));

  int f_know = -1;
  int tok_know = -1;
  if (cond.know_enabled) {
    if (static_cast<int>(cond.z.size()) != cfg_.latent_dim ||
        cond.f_r.size() != cond.z.size())
      throw std::invalid_argument("denoise: knowledge embedding dims mismatch");
    const int f_s = semantic_on_tape(tape, cond.resp);
    f_know = tape.concat({tape.constant(cond.z), tape.constant(cond.f_r), f_s});
    tok_know = tape.add(
        tape.matvec(tape.param(params_, know_w_), f_know, dm, static_cast<std::size_t>(know_dim())),
        tape.param(params_, know_b_));
  } else {
    f_know = tape.constant(Vec(static_cast<std::size_t>(know_dim()), 0.0));
    tok_know = tape.constant(Vec(dm, 0.0));
  }

  std::vector<int> tokens{tok_noise, tok_lang, tok_obs, tok_know};
  const int pos = tape.param(params_, pos_emb_);
  for (int h = 0; h < cfg_.horizon; ++h) {
    Vec scaled = noisy.rows[static_cast<std::size_t>(h)];
    for (double& v : scaled) v *= c_in;
    const int a = tape.add(tape.matvec(tape.param(params_, act_w_), tape.constant(scaled), dm,
                                       static_cast<std::size_t>(cfg_.action_dim)),
                           tape.param(params_, act_b_));
    tokens.push_back(tape.add(a, tape.slice(pos, static_cast<std::size_t>(h) * dm, dm)));
  }

  Forward fw;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.model_dim));
  for (const auto& blk : blocks_) {
    // Pre-norm self-attention over the token sequence.
    std::vector<int> normed(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) normed[i] = tape.rms_norm(tokens[i]);
    std::vector<int> q(tokens.size()), k(tokens.size()), v(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      q[i] = tape.matvec(tape.param(params_, blk.wq), normed[i], dm, dm);
      k[i] = tape.matvec(tape.param(params_, blk.wk), normed[i], dm, dm);
      v[i] = tape.matvec(tape.param(params_, blk.wv), normed[i], dm, dm);
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      std::vector<int> scores(tokens.size());
      for (std::size_t j = 0; j < tokens.size(); ++j)
        scores[j] = tape.scale(tape.dot(q[i], k[j]), attn_scale);
      const int weights = tape.softmax_op(tape.concat(scores));
      int mixed = -1;
      for (std::size_t j = 0; j < tokens.size(); ++j) {
        const int term = tape.scale_by(v[j], tape.pick(weights, j));
        mixed = mixed < 0 ? term : tape.add(mixed, term);
      }
      const int attn_out = tape.matvec(tape.param(params_, blk.wo), mixed, dm, dm);
      tokens[i] = tape.add(tokens[i], attn_out);
    }

    // Knowledge-routed MoE feed-forward; one routing decision per sample.
    const int logits = router_logits_on_tape(tape, blk, tok_noise, tok_lang, f_know);
    int top1 = -1;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const int ff_out = moe_on_tape(tape, blk, tape.rms_norm(tokens[i]), logits,
                                     i == 0 ? &top1 : nullptr);
      tokens[i] = tape.add(tokens[i], ff_out);
    }
    fw.top1.push_back(top1);
  }

  for (int h = 0; h < cfg_.horizon; ++h) {
    const int t = tokens[static_cast<std::size_t>(4 + h)];
    fw.action_rows.push_back(
        tape.add(tape.matvec(tape.param(params_, out_w_), tape.rms_norm(t),
                             static_cast<std::size_t>(cfg_.action_dim), dm),
                 tape.param(params_, out_b_)));
  }
  return fw;
}

ActionChunk PolicyHead::denoise_step(const ActionChunk& noisy, double sigma,
                                     const PolicyCond& cond) {
  validate_sigma(sigma);
  ad::Tape tape(false);
  const Forward fw = forward_on_tape(tape, noisy, sigma, cond);
  ActionChunk out;
  for (int id : fw.action_rows) out.rows.push_back(tape.val(id));
  return out;
}

ActionChunk PolicyHead::sample_action(const PolicyCond& cond, Rng& rng,
                                      std::vector<int>* top1_out) {
  std::normal_distribution<double> unit(0.0, 1.0);
  ActionChunk x;
  x.rows.assign(static_cast<std::size_t>(cfg_.horizon), Vec(static_cast<std::size_t>(cfg_.action_dim)));
  for (auto& row : x.rows)
    for (double& v : row) v = sigmas_.front() * unit(rng);

  for (std::size_t t = 0; t < sigmas_.size(); ++t) {
    if (t == 0 && top1_out != nullptr) {
      ad::Tape tape(false);
      const Forward fw = forward_on_tape(tape, x, sigmas_[t], cond);
      *top1_out = fw.top1;
      ActionChunk x0;
      for (int id : fw.action_rows) x0.rows.push_back(tape.val(id));
      if (sigmas_.size() == 1) return x0;
      const double ratio = sigmas_[1] / sigmas_[0];
      for (std::size_t h = 0; h < x.rows.size(); ++h)
        for (std::size_t a = 0; a < x.rows[h].size(); ++a)
          x.rows[h][a] = x0.rows[h][a] + ratio * (x.rows[h][a] - x0.rows[h][a]);
      continue;
    }
    const ActionChunk x0 = denoise_step(x, sigmas_[t], cond);
    if (t + 1 < sigmas_.size()) {
      const double ratio = sigmas_[t + 1] / sigmas_[t];
      for (std::size_t h = 0; h < x.rows.size(); ++h)
        for (std::size_t a = 0; a < x.rows[h].size(); ++a)
          x.rows[h][a] = x0.rows[h][a] + ratio * (x.rows[h][a] - x0.rows[h][a]);
    } else {
      x = x0;
    }
  }
  return x;
}

int PolicyHead::build_bc_loss(ad::Tape& tape, const std::vector<BcSample>& batch, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("bc_training_step: empty batch");
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> sigma_pick(0, cfg_.n_sigmas - 1);
  const double denom = static_cast<double>(cfg_.horizon * cfg_.action_dim);

  int total = -1;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& sample = batch[i];
    if (static_cast<int>(sample.target.rows.size()) != cfg_.horizon)
      throw std::invalid_argument("bc_training_step: target horizon mismatch");
    const double sigma = sigmas_[static_cast<std::size_t>(sigma_pick(rng))];
    ActionChunk noisy = sample.target;
    for (auto& row : noisy.rows)
      for (double& v : row) v += sigma * unit(rng);

    const Forward fw = forward_on_tape(tape, noisy, sigma, sample.cond);
    int se = -1;
    for (int h = 0; h < cfg_.horizon; ++h) {
      const int term = tape.sum_sq_diff(fw.action_rows[static_cast<std::size_t>(h)],
                                        sample.target.rows[static_cast<std::size_t>(h)]);
      se = se < 0 ? term : tape.add(se, term);
    }
    const int sample_loss = tape.scale(se, 1.0 / denom);
    if (!std::isfinite(tape.scalar_val(sample_loss)))
      throw std::runtime_error("bc_training_step: non-finite loss at sample " + std::to_string(i));
    total = total < 0 ? sample_loss : tape.add(total, sample_loss);
  }
  return tape.scale(total, 1.0 / static_cast<double>(batch.size()));
}

double PolicyHead::bc_training_step(const std::vector<BcSample>& batch, Rng& rng) {
  params_.zero_grad();
  ad::Tape tape;
  const int loss = build_bc_loss(tape, batch, rng);
  tape.backward(loss);
  opt_.step(params_);
  for (int i = 0; i < params_.size(); ++i)
    if (!all_finite(params_.at(i).value))
      throw std::runtime_error("bc_training_step: non-finite parameters after update (" +
                               params_.at(i).name + ")");
  return tape.scalar_val(loss);
}

std::vector<int> PolicyHead::route_top1(const PolicyCond& cond, double sigma) {
  validate_sigma(sigma);
  ad::Tape tape(false);
  ActionChunk zeros;
  zeros.rows.assign(static_cast<std::size_t>(cfg_.horizon),
                    Vec(static_cast<std::size_t>(cfg_.action_dim), 0.0));
  const Forward fw = forward_on_tape(tape, zeros, sigma, cond);
  return fw.top1;
}

Json PolicyHead::checkpoint_state() const {
  Json entries = Json::array();
  for (int i = 0; i < params_.size(); ++i)
    entries.push_back({{"name", params_.at(i).name}, {"value", params_.at(i).value}});
  Json rows = Json::object();
  for (const auto& [cid, entry] : semantic_rows_) rows[std::to_string(cid)] = entry;
  Json adam_m = Json::array(), adam_v = Json::array();
  for (const auto& m : opt_.m()) adam_m.push_back(m);
  for (const auto& v : opt_.v()) adam_v.push_back(v);
  return Json{{"params", std::move(entries)},
              {"semantic_rows", std::move(rows)},
              {"adam_t", opt_.step_count()},
              {"adam_m", std::move(adam_m)},
              {"adam_v", std::move(adam_v)}};
}

void PolicyHead::restore_state(const Json& state) {
  const auto& entries = state.at("params");
  // Semantic rows were allocated lazily; recreate any missing ones in order.
  for (std::size_t i = static_cast<std::size_t>(params_.size()); i < entries.size(); ++i)
    params_.add(entries[i].at("name").get<std::string>(),
                Vec(entries[i].at("value").get<Vec>().size(), 0.0));
  if (entries.size() != static_cast<std::size_t>(params_.size()))
    throw std::runtime_error("PolicyHead: checkpoint parameter count mismatch");
  for (int i = 0; i < params_.size(); ++i) {
    const auto& e = entries[static_cast<std::size_t>(i)];
    if (e.at("name").get<std::string>() != params_.at(i).name)
      throw std::runtime_error("PolicyHead: checkpoint parameter name mismatch");
    Vec v = e.at("value").get<Vec>();
    if (v.size() != params_.at(i).value.size())
      throw std::runtime_error("PolicyHead: checkpoint parameter size mismatch");
    params_.at(i).value = std::move(v);
  }
  semantic_rows_.clear();
  for (const auto& [key, entry] : state.at("semantic_rows").items())
    semantic_rows_[std::stoi(key)] = entry.get<int>();
  std::vector<Vec> m, v;
  for (const auto& jm : state.at("adam_m")) m.push_back(jm.get<Vec>());
  for (const auto& jv : state.at("adam_v")) v.push_back(jv.get<Vec>());
  opt_.restore(state.at("adam_t").get<long>(), std::move(m), std::move(v));
}

}  // namespace stellar
