#include "stellar/latent_model.hpp"

#include <cmath>
#include <stdexcept>

namespace stellar {

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

// KL(q || p) with q given as tape nodes (mean, var) and p constant.
int kl_to_const_on_tape(ad::Tape& t, int q_mean, int q_var, const DiagGaussian& p) {
  const std::size_t dim = p.dim();
  Vec inv_pvar(dim), neg_pmean(dim);
  double const_term = -static_cast<double>(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    inv_pvar[d] = 1.0 / p.var[d];
    neg_pmean[d] = -p.mean[d];
    const_term += std::log(p.var[d]);
  }
  const int diff = t.add_const(q_mean, neg_pmean);
  const int quad = t.add(q_var, t.mul(diff, diff));
  const int traced = t.sum(t.mul_const(quad, inv_pvar));
  const int log_qvar = t.sum(t.log_op(q_var));
  const int inner = t.add(t.sub(traced, log_qvar), t.scalar(const_term));
  return t.scale(inner, 0.5);
}

}  // namespace

LatentModel::LatentModel(Config cfg, std::uint64_t init_seed) : cfg_(cfg), opt_(cfg.lr) {
  if (cfg_.latent_dim < 1 || cfg_.hidden_dim < 1 || cfg_.token_embed_dim < 1)
    throw std::invalid_argument("LatentModel: bad dimensions");
  Rng rng = derive_rng(init_seed, "latent_init");

  const std::size_t emb = static_cast<std::size_t>(cfg_.token_embed_dim);
  const std::size_t hid = static_cast<std::size_t>(cfg_.hidden_dim);
  const std::size_t lat = static_cast<std::size_t>(cfg_.latent_dim);
  const std::size_t obs = kObsDim;
  const std::size_t enc_in = cfg_.mode == KnowledgeMode::TaskOnly ? emb + obs : emb;

  ids_.tok_embed = params_.add("tok_embed", uniform_init(rng, kVocabSize * emb, 0.1));
  ids_.enc_w1 = params_.add("enc_w1", xavier_init(rng, hid, enc_in));
  ids_.enc_b1 = params_.add("enc_b1", Vec(hid, 0.0));
  ids_.enc_w2 = params_.add("enc_w2", xavier_init(rng, hid, hid));
  ids_.enc_b2 = params_.add("enc_b2", Vec(hid, 0.0));
  ids_.enc_mean_w = params_.add("enc_mean_w", xavier_init(rng, lat, hid));
  ids_.enc_mean_b = params_.add("enc_mean_b", Vec(lat, 0.0));
  ids_.enc_var_w = params_.add("enc_var_w", xavier_init(rng, lat, hid));
  ids_.enc_var_b = params_.add("enc_var_b", Vec(lat, 0.0));

  if (cfg_.mode == KnowledgeMode::TaskSkill) {
    const std::size_t skill_in = lat + emb;
    ids_.obs_embed_w = params_.add("obs_embed_w", xavier_init(rng, emb, obs));
    ids_.obs_embed_b = params_.add("obs_embed_b", Vec(emb, 0.0));
    ids_.skill_w1 = params_.add("skill_w1", xavier_init(rng, hid, skill_in));
    ids_.skill_b1 = params_.add("skill_b1", Vec(hid, 0.0));
    ids_.skill_w2 = params_.add("skill_w2", xavier_init(rng, hid, hid));
    ids_.skill_b2 = params_.add("skill_b2", Vec(hid, 0.0));
    ids_.skill_mean_w = params_.add("skill_mean_w", xavier_init(rng, lat, hid));
    ids_.skill_mean_b = params_.add("skill_mean_b", Vec(lat, 0.0));
    ids_.skill_var_w = params_.add("skill_var_w", xavier_init(rng, lat, hid));
    ids_.skill_var_b = params_.add("skill_var_b", Vec(lat, 0.0));
  }

  const std::size_t lang_out = static_cast<std::size_t>(kLangLen) * kVocabSize;
  ids_.dec_lang_w1 = params_.add("dec_lang_w1", xavier_init(rng, hid, lat));
  ids_.dec_lang_b1 = params_.add("dec_lang_b1", Vec(hid, 0.0));
  ids_.dec_lang_w2 = params_.add("dec_lang_w2", xavier_init(rng, lang_out, hid));
  ids_.dec_lang_b2 = params_.add("dec_lang_b2", Vec(lang_out, 0.0));
  ids_.dec_obs_w1 = params_.add("dec_obs_w1", xavier_init(rng, hid, lat));
  ids_.dec_obs_b1 = params_.add("dec_obs_b1", Vec(hid, 0.0));
  ids_.dec_obs_w2 = params_.add("dec_obs_w2", xavier_init(rng, obs, hid));
  ids_.dec_obs_b2 = params_.add("dec_obs_b2", Vec(obs, 0.0));
}

double LatentModel::current_beta() const {
  if (cfg_.beta_warmup_steps <= 0) return cfg_.beta;
  const double ramp = std::min(1.0, static_cast<double>(warmup_step_) /
                                        static_cast<double>(cfg_.beta_warmup_steps));
  return cfg_.beta * ramp;
}

int LatentModel::pooled_lang_embedding(ad::Tape& tape, ad::ParamStore& ps,
                                       const LangTokens& lang) const {
  const std::size_t emb = static_cast<std::size_t>(cfg_.token_embed_dim);
  const int table = tape.param(ps, ids_.tok_embed);
  int acc = -1;
  for (int tok : lang.tokens) {
    const int row = tape.slice(table, static_cast<std::size_t>(tok) * emb, emb);
    acc = acc < 0 ? row : tape.add(acc, row);
  }
  return tape.scale(acc, 1.0 / static_cast<double>(kLangLen));
}

LatentModel::Encoded LatentModel::encode_on_tape(ad::Tape& tape, ad::ParamStore& ps,
                                                 const LangTokens& lang, const ObsVector& obs,
                                                 const Vec& eps_task, const Vec& eps_skill) const {
  const std::size_t emb = static_cast<std::size_t>(cfg_.token_embed_dim);
  const std::size_t hid = static_cast<std::size_t>(cfg_.hidden_dim);
  const std::size_t lat = static_cast<std::size_t>(cfg_.latent_dim);
  const Vec var_floor(lat, kEpsilonVar);

  const int pooled = pooled_lang_embedding(tape, ps, lang);
  const int enc_in = cfg_.mode == KnowledgeMode::TaskOnly
                         ? tape.concat({pooled, tape.constant(obs.features)})
                         : pooled;
  const std::size_t in_dim = tape.val(enc_in).size();

  const int h1 = tape.tanh_op(
      tape.add(tape.matvec(tape.param(ps, ids_.enc_w1), enc_in, hid, in_dim),
               tape.param(ps, ids_.enc_b1)));
  const int h2 = tape.tanh_op(tape.add(tape.matvec(tape.param(ps, ids_.enc_w2), h1, hid, hid),
                                       tape.param(ps, ids_.enc_b2)));
  Encoded enc;
  enc.task_mean = tape.add(tape.matvec(tape.param(ps, ids_.enc_mean_w), h2, lat, hid),
                           tape.param(ps, ids_.enc_mean_b));
  enc.task_var = tape.add_const(
      tape.softplus_op(tape.add(tape.matvec(tape.param(ps, ids_.enc_var_w), h2, lat, hid),
                                tape.param(ps, ids_.enc_var_b))),
      var_floor);
  enc.task_sample =
      tape.add(enc.task_mean, tape.mul(tape.sqrt_op(enc.task_var), tape.constant(eps_task)));

  if (cfg_.mode == KnowledgeMode::TaskSkill) {
    const int obs_emb =
        tape.tanh_op(tape.add(tape.matvec(tape.param(ps, ids_.obs_embed_w),
                                          tape.constant(obs.features), emb, kObsDim),
                              tape.param(ps, ids_.obs_embed_b)));
    const int skill_in = tape.concat({enc.task_sample, obs_emb});
    const int s1 = tape.tanh_op(
        tape.add(tape.matvec(tape.param(ps, ids_.skill_w1), skill_in, hid, lat + emb),
                 tape.param(ps, ids_.skill_b1)));
    const int s2 = tape.tanh_op(tape.add(tape.matvec(tape.param(ps, ids_.skill_w2), s1, hid, hid),
                                         tape.param(ps, ids_.skill_b2)));
    enc.skill_mean = tape.add(tape.matvec(tape.param(ps, ids_.skill_mean_w), s2, lat, hid),
                              tape.param(ps, ids_.skill_mean_b));
    enc.skill_var = tape.add_const(
        tape.softplus_op(tape.add(tape.matvec(tape.param(ps, ids_.skill_var_w), s2, lat, hid),
                                  tape.param(ps, ids_.skill_var_b))),
        var_floor);
    enc.skill_sample =
        tape.add(enc.skill_mean, tape.mul(tape.sqrt_op(enc.skill_var), tape.constant(eps_skill)));
  }
  return enc;
}

int LatentModel::recon_loss_on_tape(ad::Tape& tape, ad::ParamStore& ps, const Encoded& enc,
                                    const LangTokens& lang, const ObsVector& obs) const {
  const std::size_t hid = static_cast<std::size_t>(cfg_.hidden_dim);
  const std::size_t lat = static_cast<std::size_t>(cfg_.latent_dim);
  const std::size_t lang_out = static_cast<std::size_t>(kLangLen) * kVocabSize;

  // Language tokens decoded from the task latent.
  const int dh = tape.tanh_op(
      tape.add(tape.matvec(tape.param(ps, ids_.dec_lang_w1), enc.task_sample, hid, lat),
               tape.param(ps, ids_.dec_lang_b1)));
  const int logits = tape.add(tape.matvec(tape.param(ps, ids_.dec_lang_w2), dh, lang_out, hid),
                              tape.param(ps, ids_.dec_lang_b2));
  int ce = -1;
  for (int pos = 0; pos < kLangLen; ++pos) {
    const int sl = tape.slice(logits, static_cast<std::size_t>(pos) * kVocabSize, kVocabSize);
    const int pos_ce = tape.sub(tape.log_sum_exp_op(sl),
                                tape.pick(sl, static_cast<std::size_t>(lang.tokens[pos])));
    ce = ce < 0 ? pos_ce : tape.add(ce, pos_ce);
  }
  ce = tape.scale(ce, 1.0 / static_cast<double>(kLangLen));

  // Observation decoded from the task latent (TaskOnly) or skill latent.
  const int z_obs = cfg_.mode == KnowledgeMode::TaskOnly ? enc.task_sample : enc.skill_sample;
  const int oh = tape.tanh_op(tape.add(tape.matvec(tape.param(ps, ids_.dec_obs_w1), z_obs, hid, lat),
                                       tape.param(ps, ids_.dec_obs_b1)));
  const int obs_hat = tape.add(tape.matvec(tape.param(ps, ids_.dec_obs_w2), oh, kObsDim, hid),
                               tape.param(ps, ids_.dec_obs_b2));
  const int se = tape.sum_sq_diff(obs_hat, obs.features);
  return tape.add(ce, se);
}

int LatentModel::kl_loss_on_tape(ad::Tape& tape, const Encoded& enc, const KnowledgeSpace& ks,
                                 const Responsibilities& resp_task,
                                 const Responsibilities& resp_skill) const {
  int kl = tape.scalar(0.0);
  for (std::size_t k = 0; k < resp_task.cluster_ids.size(); ++k) {
    const double p = resp_task.probs[k];
    if (p < 1e-12) continue;  // zero-weight clusters contribute nothing
    const DiagGaussian target =
        ks.mode() == KnowledgeMode::TaskSkill
            ? ks.compose_task_distribution(resp_task.cluster_ids[k])
            : ks.find_cluster(resp_task.cluster_ids[k])->dist;
    kl = tape.add(kl, tape.scale(kl_to_const_on_tape(tape, enc.task_mean, enc.task_var, target), p));
  }
  if (cfg_.mode == KnowledgeMode::TaskSkill) {
    for (std::size_t k = 0; k < resp_skill.cluster_ids.size(); ++k) {
      const double p = resp_skill.probs[k];
      if (p < 1e-12) continue;
      const DiagGaussian& target = ks.find_cluster(resp_skill.cluster_ids[k])->dist;
      kl = tape.add(kl,
                    tape.scale(kl_to_const_on_tape(tape, enc.skill_mean, enc.skill_var, target), p));
    }
  }
  return kl;
}

LatentBundle LatentModel::encode(const LangTokens& lang, const ObsVector& obs,
                                 const KnowledgeSpace& ks, Rng& rng) const {
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t lat = static_cast<std::size_t>(cfg_.latent_dim);
  Vec eps_task(lat), eps_skill(lat, 0.0);
  for (auto& e : eps_task) e = unit(rng);
  if (cfg_.mode == KnowledgeMode::TaskSkill)
    for (auto& e : eps_skill) e = unit(rng);

  ad::Tape tape(false);
  auto& ps = const_cast<ad::ParamStore&>(params_);
  const Encoded enc = encode_on_tape(tape, ps, lang, obs, eps_task, eps_skill);

  LatentBundle bundle;
  bundle.z_task = DiagGaussian(tape.val(enc.task_mean), tape.val(enc.task_var));
  bundle.z_task_sample = tape.val(enc.task_sample);
  bundle.resp_task = ks.responsibilities(bundle.z_task.mean, RespLevel::Task);
  if (cfg_.mode == KnowledgeMode::TaskSkill) {
    bundle.z_skill = DiagGaussian(tape.val(enc.skill_mean), tape.val(enc.skill_var));
    bundle.z_skill_sample = tape.val(enc.skill_sample);
    bundle.resp_skill = ks.responsibilities(bundle.z_skill.mean, RespLevel::Skill);
  }
  return bundle;
}

LatentBundle LatentModel::encode_mean(const LangTokens& lang, const ObsVector& obs,
                                      const KnowledgeSpace& ks) const {
  const std::size_t lat = static_cast<std::size_t>(cfg_.latent_dim);
  ad::Tape tape(false);
  auto& ps = const_cast<ad::ParamStore&>(params_);
  const Encoded enc = encode_on_tape(tape, ps, lang, obs, Vec(lat, 0.0), Vec(lat, 0.0));

  LatentBundle bundle;
  bundle.z_task = DiagGaussian(tape.val(enc.task_mean), tape.val(enc.task_var));
  bundle.z_task_sample = bundle.z_task.mean;
  bundle.resp_task = ks.responsibilities(bundle.z_task.mean, RespLevel::Task);
  if (cfg_.mode == KnowledgeMode::TaskSkill) {
    bundle.z_skill = DiagGaussian(tape.val(enc.skill_mean), tape.val(enc.skill_var));
    bundle.z_skill_sample = bundle.z_skill.mean;
    bundle.resp_skill = ks.responsibilities(bundle.z_skill.mean, RespLevel::Skill);
  }
  return bundle;
}

LatentBundle LatentModel::encode_prior(const LangTokens& lang, const ObsVector& obs) const {
  const std::size_t lat = static_cast<std::size_t>(cfg_.latent_dim);
  ad::Tape tape(false);
  auto& ps = const_cast<ad::ParamStore&>(params_);
  const Encoded enc = encode_on_tape(tape, ps, lang, obs, Vec(lat, 0.0), Vec(lat, 0.0));

  LatentBundle bundle;
  bundle.z_task = DiagGaussian(tape.val(enc.task_mean), tape.val(enc.task_var));
  bundle.z_task_sample = bundle.z_task.mean;
  if (cfg_.mode == KnowledgeMode::TaskSkill) {
    bundle.z_skill = DiagGaussian(tape.val(enc.skill_mean), tape.val(enc.skill_var));
    bundle.z_skill_sample = bundle.z_skill.mean;
  }
  return bundle;
}

VaeLoss LatentModel::loss_t_stellar(const LatentBundle& bundle, const LangTokens& lang,
                                    const ObsVector& obs, const KnowledgeSpace& ks) const {
  if (ks.mode() != KnowledgeMode::TaskOnly)
    throw std::invalid_argument("loss_t_stellar: knowledge space must be TaskOnly");
  ad::Tape tape(false);
  auto& ps = const_cast<ad::ParamStore&>(params_);
  Encoded enc;
  enc.task_sample = tape.constant(bundle.z_task_sample);
  const double recon = tape.scalar_val(recon_loss_on_tape(tape, ps, enc, lang, obs));

  double kl = 0.0;
  for (std::size_t k = 0; k < bundle.resp_task.cluster_ids.size(); ++k) {
    const double p = bundle.resp_task.probs[k];
    if (p < 1e-12) continue;
    const Cluster* c = ks.find_cluster(bundle.resp_task.cluster_ids[k]);
    if (c == nullptr) throw std::invalid_argument("loss_t_stellar: unknown cluster id");
    kl += p * kl_diag_gaussian(bundle.z_task, c->dist);
  }
  VaeLoss out{recon, kl, recon + cfg_.beta * kl};
  return out;
}

VaeLoss LatentModel::loss_ts_stellar(const LatentBundle& bundle, const LangTokens& lang,
                                     const ObsVector& obs, const KnowledgeSpace& ks) const {
  if (ks.mode() != KnowledgeMode::TaskSkill)
    throw std::invalid_argument("loss_ts_stellar: knowledge space must be TaskSkill");
  ad::Tape tape(false);
  auto& ps = const_cast<ad::ParamStore&>(params_);
  Encoded enc;
  enc.task_sample = tape.constant(bundle.z_task_sample);
  enc.skill_sample = tape.constant(bundle.z_skill_sample);
  const double recon = tape.scalar_val(recon_loss_on_tape(tape, ps, enc, lang, obs));

  double kl = 0.0;
  for (std::size_t k = 0; k < bundle.resp_task.cluster_ids.size(); ++k) {
    const double p = bundle.resp_task.probs[k];
    if (p < 1e-12) continue;
    kl += p * kl_diag_gaussian(bundle.z_task,
                               ks.compose_task_distribution(bundle.resp_task.cluster_ids[k]));
  }
  for (std::size_t k = 0; k < bundle.resp_skill.cluster_ids.size(); ++k) {
    const double p = bundle.resp_skill.probs[k];
    if (p < 1e-12) continue;
    const Cluster* c = ks.find_cluster(bundle.resp_skill.cluster_ids[k]);
    if (c == nullptr) throw std::invalid_argument("loss_ts_stellar: unknown cluster id");
    kl += p * kl_diag_gaussian(bundle.z_skill, c->dist);
  }
  VaeLoss out{recon, kl, recon + cfg_.beta * kl};
  return out;
}

int LatentModel::build_training_loss(ad::Tape& tape, const std::vector<VaeSample>& batch,
                                     const KnowledgeSpace& ks, double beta_eff, Rng& rng) const {
  if (batch.empty()) throw std::invalid_argument("build_training_loss: empty batch");
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t lat = static_cast<std::size_t>(cfg_.latent_dim);
  auto& ps = const_cast<ad::ParamStore&>(params_);

  int total = -1;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Vec eps_task(lat), eps_skill(lat, 0.0);
    for (auto& e : eps_task) e = unit(rng);
    if (cfg_.mode == KnowledgeMode::TaskSkill)
      for (auto& e : eps_skill) e = unit(rng);

    const Encoded enc =
        encode_on_tape(tape, ps, batch[i].lang, batch[i].obs, eps_task, eps_skill);
    const int recon = recon_loss_on_tape(tape, ps, enc, batch[i].lang, batch[i].obs);

    int sample_loss = recon;
    if (beta_eff > 0.0 && !ks.empty()) {
      // Responsibilities are constants within a step: the space co-evolves in
      // its own update phase, not through these gradients.
      const Responsibilities resp_task =
          ks.responsibilities(tape.val(enc.task_mean), RespLevel::Task);
      Responsibilities resp_skill;
      if (cfg_.mode == KnowledgeMode::TaskSkill)
        resp_skill = ks.responsibilities(tape.val(enc.skill_mean), RespLevel::Skill);
      const int kl = kl_loss_on_tape(tape, enc, ks, resp_task, resp_skill);
      sample_loss = tape.add(recon, tape.scale(kl, beta_eff));
    }
    if (!std::isfinite(tape.scalar_val(sample_loss)))
      throw std::runtime_error("latent train step: non-finite loss at sample " + std::to_string(i));
    total = total < 0 ? sample_loss : tape.add(total, sample_loss);
  }
  return tape.scale(total, 1.0 / static_cast<double>(batch.size()));
}

VaeLoss LatentModel::train_step(const std::vector<VaeSample>& batch, const KnowledgeSpace& ks,
                                Rng& rng) {
  const double beta_eff = current_beta();
  params_.zero_grad();
  ad::Tape tape;

  // Build per-sample recon and kl separately so the report decomposes.
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t lat = static_cast<std::size_t>(cfg_.latent_dim);
  int recon_total = -1;
  int kl_total = -1;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Vec eps_task(lat), eps_skill(lat, 0.0);
    for (auto& e : eps_task) e = unit(rng);
    if (cfg_.mode == KnowledgeMode::TaskSkill)
      for (auto& e : eps_skill) e = unit(rng);
    const Encoded enc =
        encode_on_tape(tape, params_, batch[i].lang, batch[i].obs, eps_task, eps_skill);
    const int recon = recon_loss_on_tape(tape, params_, enc, batch[i].lang, batch[i].obs);
    int kl = -1;
    if (!ks.empty()) {
      const Responsibilities resp_task =
          ks.responsibilities(tape.val(enc.task_mean), RespLevel::Task);
      Responsibilities resp_skill;
      if (cfg_.mode == KnowledgeMode::TaskSkill)
        resp_skill = ks.responsibilities(tape.val(enc.skill_mean), RespLevel::Skill);
      kl = kl_loss_on_tape(tape, enc, ks, resp_task, resp_skill);
    } else {
      kl = tape.scalar(0.0);
    }
    if (!std::isfinite(tape.scalar_val(recon)) || !std::isfinite(tape.scalar_val(kl)))
      throw std::runtime_error("latent train step: non-finite loss at sample " + std::to_string(i));
    recon_total = recon_total < 0 ? recon : tape.add(recon_total, recon);
    kl_total = kl_total < 0 ? kl : tape.add(kl_total, kl);
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const int recon_mean = tape.scale(recon_total, inv_n);
  const int kl_mean = tape.scale(kl_total, inv_n);
  const int loss = tape.add(recon_mean, tape.scale(kl_mean, beta_eff));

  tape.backward(loss);
  opt_.step(params_);
  ++warmup_step_;

  for (int i = 0; i < params_.size(); ++i)
    if (!all_finite(params_.at(i).value))
      throw std::runtime_error("latent train step: non-finite parameters after update (" +
                               params_.at(i).name + ")");

  VaeLoss out;
  out.recon = tape.scalar_val(recon_mean);
  out.kl = tape.scalar_val(kl_mean);
  out.total = tape.scalar_val(loss);
  return out;
}

Json LatentModel::checkpoint_state() const {
  Json entries = Json::array();
  for (int i = 0; i < params_.size(); ++i)
    entries.push_back({{"name", params_.at(i).name}, {"value", params_.at(i).value}});
  Json adam_m = Json::array(), adam_v = Json::array();
  for (const auto& m : opt_.m()) adam_m.push_back(m);
  for (const auto& v : opt_.v()) adam_v.push_back(v);
  return Json{{"params", std::move(entries)},
              {"adam_t", opt_.step_count()},
              {"adam_m", std::move(adam_m)},
              {"adam_v", std::move(adam_v)},
              {"warmup_step", warmup_step_}};
}

void LatentModel::restore_state(const Json& state) {
  const auto& entries = state.at("params");
  if (entries.size() != static_cast<std::size_t>(params_.size()))
    throw std::runtime_error("LatentModel: checkpoint parameter count mismatch");
  for (int i = 0; i < params_.size(); ++i) {
    const auto& e = entries[static_cast<std::size_t>(i)];
    if (e.at("name").get<std::string>() != params_.at(i).name)
      throw std::runtime_error("LatentModel: checkpoint parameter name mismatch");
    Vec v = e.at("value").get<Vec>();
    if (v.size() != params_.at(i).value.size())
      throw std::runtime_error("LatentModel: checkpoint parameter size mismatch");
    params_.at(i).value = std::move(v);
  }
  std::vector<Vec> m, v;
  for (const auto& jm : state.at("adam_m")) m.push_back(jm.get<Vec>());
  for (const auto& jv : state.at("adam_v")) v.push_back(jv.get<Vec>());
  opt_.restore(state.at("adam_t").get<long>(), std::move(m), std::move(v));
  warmup_step_ = state.at("warmup_step").get<int>();
}

}  // namespace stellar
