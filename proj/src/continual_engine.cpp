#include "stellar/continual_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stellar/logging.hpp"

namespace stellar {

// ---------------------------------------------------------------------------
// ReplayBuffer
// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(double q) : q_(q) {
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("ReplayBuffer: q must lie in (0,1]");
}

void ReplayBuffer::retain_task(int task_id, const std::vector<Demo>& demos, Rng& rng) {
  if (demos_.count(task_id)) throw std::logic_error("ReplayBuffer: task already retained");
  const int n = static_cast<int>(demos.size());
  const int keep = static_cast<int>(std::ceil(q_ * n));

  std::vector<int> order(demos.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < keep; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  order.resize(static_cast<std::size_t>(keep));
  std::sort(order.begin(), order.end());

  std::vector<Demo> kept;
  for (int idx : order) kept.push_back(demos[static_cast<std::size_t>(idx)]);
  indices_[task_id] = std::move(order);
  demos_[task_id] = std::move(kept);
}

const std::vector<Demo>& ReplayBuffer::retained(int task_id) const {
  auto it = demos_.find(task_id);
  if (it == demos_.end()) throw std::out_of_range("ReplayBuffer: no retained demos for task");
  return it->second;
}

const std::vector<int>& ReplayBuffer::retained_indices(int task_id) const {
  auto it = indices_.find(task_id);
  if (it == indices_.end()) throw std::out_of_range("ReplayBuffer: no retained demos for task");
  return it->second;
}

std::vector<int> ReplayBuffer::task_ids() const {
  std::vector<int> ids;
  for (const auto& [tid, demos] : demos_) ids.push_back(tid);
  return ids;
}

Json ReplayBuffer::manifest() const {
  Json m = Json::object();
  for (const auto& [tid, idx] : indices_) m[std::to_string(tid)] = idx;
  return m;
}

void ReplayBuffer::restore_from_manifest(
    const Json& manifest, const std::function<std::vector<Demo>(int)>& regenerate) {
  indices_.clear();
  demos_.clear();
  for (const auto& [key, jidx] : manifest.items()) {
    const int tid = std::stoi(key);
    const auto idx = jidx.get<std::vector<int>>();
    const auto all = regenerate(tid);
    std::vector<Demo> kept;
    for (int i : idx) kept.push_back(all.at(static_cast<std::size_t>(i)));
    indices_[tid] = idx;
    demos_[tid] = std::move(kept);
  }
}

// ---------------------------------------------------------------------------
// ContinualEngine
// ---------------------------------------------------------------------------

ContinualEngine::ContinualEngine(RunConfig cfg, std::filesystem::path run_dir)
    : cfg_(std::move(cfg)), dir_(std::move(run_dir)), replay_(cfg_.replay.q) {
  cfg_.validate();
  TaskSetOptions opts;
  opts.min_primitives = cfg_.tasks.min_primitives;
  opts.max_primitives = cfg_.tasks.max_primitives;
  tasks_ = generate_task_set(cfg_.seed, cfg_.tasks.n_tasks, cfg_.tasks.pool_size, opts);
  build_models();
}

void ContinualEngine::build_models() {
  LatentModel::Config lm;
  lm.mode = cfg_.mode();
  lm.latent_dim = cfg_.model.latent_dim;
  lm.token_embed_dim = cfg_.model.token_embed_dim;
  lm.hidden_dim = cfg_.model.hidden_dim;
  lm.beta = cfg_.train.beta;
  lm.beta_warmup_steps = cfg_.train.beta_warmup_steps;
  lm.lr = cfg_.train.lr_latent;
  latent_ = std::make_unique<LatentModel>(lm, cfg_.seed);

  PolicyHead::Config pc;
  pc.model_dim = cfg_.model.model_dim;
  pc.n_experts = cfg_.model.n_experts;
  pc.top_k_experts = cfg_.model.top_k_experts;
  pc.n_blocks = cfg_.model.n_blocks;
  pc.ff_dim = cfg_.model.ff_dim;
  pc.k_top_semantic = cfg_.model.k_top_semantic;
  pc.semantic_dim = cfg_.model.semantic_dim;
  pc.latent_dim = cfg_.model.latent_dim;
  pc.n_sigmas = cfg_.model.n_sigmas;
  pc.sigma_min = cfg_.model.sigma_min;
  pc.sigma_max = cfg_.model.sigma_max;
  pc.knowledge_routing = !cfg_.ablations.no_kroute;
  pc.lr = cfg_.train.lr_policy;
  policy_ = std::make_unique<PolicyHead>(pc, cfg_.seed);

  KnowledgeSpace::Config kc;
  kc.mode = cfg_.mode();
  kc.dim = static_cast<std::size_t>(cfg_.model.latent_dim);
  kc.alpha = cfg_.knowledge.alpha;
  kc.gamma = cfg_.knowledge.gamma;
  kc.k_max = cfg_.knowledge.k_max;
  kc.prior.kappa0 = cfg_.knowledge.kappa0;
  kc.prior.a0 = cfg_.knowledge.a0;
  kc.prior.b0 = cfg_.knowledge.b0;
  kc.birth_percentile = cfg_.knowledge.birth_percentile;
  kc.birth_min_count = cfg_.knowledge.birth_min_count;
  kc.merge_threshold = cfg_.knowledge.merge_threshold;

  if (cfg_.ablations.no_ks || cfg_.ablations.no_vae) {
    // The space degenerates to a fixed standard Gaussian: one pseudo-cluster
    // with p = (1), and (in TaskSkill mode) every task mapped onto it.
    Cluster c;
    c.id = 0;
    c.dist = DiagGaussian::standard(kc.dim);
    c.weight = 1.0;
    std::map<int, std::map<int, double>> tables;
    if (kc.mode == KnowledgeMode::TaskSkill)
      for (const auto& t : tasks_) tables[t.task_id] = {{0, 1.0}};
    ks_ = std::make_unique<KnowledgeSpace>(
        KnowledgeSpace::from_fixed_clusters(kc, {std::move(c)}, std::move(tables)));
  } else {
    ks_ = std::make_unique<KnowledgeSpace>(kc);
  }
  cluster_count_seen_ = ks_->active_cluster_count();
}

Vec ContinualEngine::window_latent(const LatentBundle& bundle) const {
  return cfg_.mode() == KnowledgeMode::TaskSkill ? bundle.z_skill.mean : bundle.z_task.mean;
}

PolicyCond ContinualEngine::make_cond(const LangTokens& lang, const ObsVector& obs) const {
  PolicyCond cond;
  cond.lang = lang;
  cond.obs = obs;
  if (cfg_.ablations.no_vae) {
    cond.know_enabled = false;
    return cond;
  }
  const LatentBundle bundle = latent_->encode_mean(lang, obs, *ks_);
  if (cfg_.mode() == KnowledgeMode::TaskSkill) {
    cond.z = bundle.z_skill_sample;
    cond.resp = bundle.resp_skill;
  } else {
    cond.z = bundle.z_task_sample;
    cond.resp = bundle.resp_task;
  }
  cond.f_r = relation_embedding(cond.z, cond.resp, *ks_);
  return cond;
}

ActionChunk ContinualEngine::target_chunk(const Demo& demo, int t) const {
  ActionChunk chunk;
  const int n = static_cast<int>(demo.transitions.size());
  for (int h = 0; h < kChunkHorizon; ++h) {
    if (t + h < n)
      chunk.rows.push_back(demo.transitions[static_cast<std::size_t>(t + h)].action);
    else
      chunk.rows.push_back(Vec{0.0, 0.0, -1.0});  // hold position, gripper idle
  }
  return chunk;
}

std::vector<ContinualEngine::BatchItem> ContinualEngine::sample_batch(
    int current_task, const std::vector<Demo>& current, Rng& rng) const {
  std::vector<BatchItem> items;
  const auto replay_tasks = replay_.task_ids();
  for (int i = 0; i < cfg_.train.batch_size; ++i) {
    BatchItem item;
    const bool use_replay = !replay_tasks.empty() && (i % 2 == 1);  // 50/50 mix
    if (use_replay) {
      std::uniform_int_distribution<std::size_t> pick_task(0, replay_tasks.size() - 1);
      item.task_id = replay_tasks[pick_task(rng)];
      const auto& demos = replay_.retained(item.task_id);
      std::uniform_int_distribution<std::size_t> pick_demo(0, demos.size() - 1);
      item.demo = &demos[pick_demo(rng)];
    } else {
      item.task_id = current_task;
      std::uniform_int_distribution<std::size_t> pick_demo(0, current.size() - 1);
      item.demo = &current[pick_demo(rng)];
    }
    std::uniform_int_distribution<int> pick_t(0,
                                              static_cast<int>(item.demo->transitions.size()) - 1);
    item.t = pick_t(rng);

    // Replay invariant: only the current task and finished tasks may appear.
    if (item.task_id != current_task &&
        std::find(replay_tasks.begin(), replay_tasks.end(), item.task_id) == replay_tasks.end())
      throw std::logic_error("batch provenance violation: task " + std::to_string(item.task_id));
    items.push_back(item);
  }
  return items;
}

void ContinualEngine::knowledge_phase(const std::vector<Demo>& current, int current_task,
                                      Rng& rng) {
  if (phase_ != Phase::Knowledge)
    throw std::logic_error("knowledge update outside the knowledge phase");

  // A fresh task seeds the window before its first update so the space sees
  // the new task immediately (and, in TaskSkill mode, gains its table row).
  std::uniform_int_distribution<std::size_t> pick_demo(0, current.size() - 1);
  for (int i = 0; i < std::min(cfg_.train.batch_size, cfg_.train.latent_window); ++i) {
    const Demo& demo = current[pick_demo(rng)];
    std::uniform_int_distribution<int> pick_t(0, static_cast<int>(demo.transitions.size()) - 1);
    const int t = pick_t(rng);
    const auto& obs = demo.transitions[static_cast<std::size_t>(t)].obs;
    const auto& lang = tasks_[static_cast<std::size_t>(current_task)].lang;
    const LatentBundle bundle = ks_->empty() ? latent_->encode_prior(lang, obs)
                                             : latent_->encode_mean(lang, obs, *ks_);
    window_.push_back(BatchPoint{window_latent(bundle), current_task});
    while (static_cast<int>(window_.size()) > cfg_.train.latent_window) window_.pop_front();
  }

  const std::vector<BatchPoint> batch(window_.begin(), window_.end());
  const int slot = window_updates_ % cfg_.train.window_slots;
  const int before = ks_->active_cluster_count();
  const UpdateSummary summary = cfg_.mode() == KnowledgeMode::TaskSkill
                                    ? ks_->hdp_update(batch, slot)
                                    : ks_->memo_vb_update(batch, slot);
  ++window_updates_;

  const int after = ks_->active_cluster_count();
  if (after < before - summary.merges)
    throw std::logic_error("cluster count decreased without an accepted merge");
  if (after != before) {
    log_line(LogLevel::Info, "knowledge space: " + std::to_string(before) + " -> " +
                                 std::to_string(after) + " clusters (births=" +
                                 std::to_string(summary.births) +
                                 ", merges=" + std::to_string(summary.merges) +
                                 (before == 0 ? ", bootstrap" : "") + ")");
  }
  cluster_count_seen_ = after;
}

void ContinualEngine::learn_task(int task_id) {
  const TaskSpec& spec = tasks_[static_cast<std::size_t>(task_id)];
  const auto demos =
      generate_demos(spec, cfg_.tasks.demos_per_task, derive_seed(cfg_.seed, "demos",
                                                                  static_cast<std::uint64_t>(task_id)));
  Rng rng = derive_rng(cfg_.seed, "train", static_cast<std::uint64_t>(task_id));
  latent_->reset_beta_warmup();
  const bool use_knowledge = !cfg_.ablations.no_vae && !cfg_.ablations.no_ks;

  std::string log_text = "task " + std::to_string(task_id) + " (" + spec.name + ")\n";

  for (int s = 0; s < cfg_.train.steps_per_task; ++s) {
    if (use_knowledge && s % cfg_.train.knowledge_update_every == 0) {
      phase_ = Phase::Knowledge;
      knowledge_phase(demos, task_id, rng);
      phase_ = Phase::Idle;
    }

    phase_ = Phase::Train;
    const auto batch = sample_batch(task_id, demos, rng);

    VaeLoss vae_loss;
    if (!cfg_.ablations.no_vae) {
      std::vector<VaeSample> vae_batch;
      for (const auto& item : batch)
        vae_batch.push_back(VaeSample{tasks_[static_cast<std::size_t>(item.task_id)].lang,
                                      item.demo->transitions[static_cast<std::size_t>(item.t)].obs});
      vae_loss = latent_->train_step(vae_batch, *ks_, rng);
    }

    std::vector<BcSample> bc_batch;
    for (const auto& item : batch) {
      const auto& lang = tasks_[static_cast<std::size_t>(item.task_id)].lang;
      const auto& obs = item.demo->transitions[static_cast<std::size_t>(item.t)].obs;
      BcSample sample;
      sample.cond = make_cond(lang, obs);
      sample.target = target_chunk(*item.demo, item.t);
      bc_batch.push_back(std::move(sample));
      if (use_knowledge && !ks_->empty()) {
        const LatentBundle bundle = latent_->encode_mean(lang, obs, *ks_);
        window_.push_back(BatchPoint{window_latent(bundle), item.task_id});
        while (static_cast<int>(window_.size()) > cfg_.train.latent_window) window_.pop_front();
      }
    }
    const double policy_loss = policy_->bc_training_step(bc_batch, rng);
    phase_ = Phase::Idle;

    if (s % 25 == 0 || s == cfg_.train.steps_per_task - 1) {
      log_text += "step " + std::to_string(s) + " recon " + format_double(vae_loss.recon) +
                  " kl " + format_double(vae_loss.kl) + " policy " + format_double(policy_loss) +
                  " clusters " + std::to_string(ks_->active_cluster_count()) + "\n";
    }
  }

  // Evaluate on all tasks seen so far, filling row task_id of R.
  Vec row;
  for (int t = 0; t <= task_id; ++t) {
    std::map<int, int> hist;
    const double sr = evaluate_task(task_id, t, &hist);
    row.push_back(sr);
    int total = 0;
    for (const auto& [expert, count] : hist) total += count;
    std::string line = std::to_string(task_id) + "," + std::to_string(t);
    for (int e = 0; e < cfg_.model.n_experts; ++e) {
      const double frac = total > 0 ? static_cast<double>(hist.count(e) ? hist.at(e) : 0) / total : 0.0;
      line += "," + format_double(frac);
    }
    routing_csv_ += line + "\n";
    log_text += "eval task " + std::to_string(t) + " sr " + format_double(sr) + "\n";
  }
  r_so_far_.add_stage_row(std::move(row));

  Rng replay_rng = derive_rng(cfg_.seed, "replay", static_cast<std::uint64_t>(task_id));
  replay_.retain_task(task_id, demos, replay_rng);

  next_task_ = task_id + 1;
  write_text_file(dir_ / ("task_" + std::to_string(task_id) + ".log"), log_text);
  save_checkpoint();
  log_line(LogLevel::Info, "finished task " + std::to_string(task_id));
}

namespace {

class LearnedPolicy : public RolloutPolicy {
 public:
  LearnedPolicy(ContinualEngine& engine, PolicyHead& head,
                const std::function<PolicyCond(const LangTokens&, const ObsVector&)>& cond_fn,
                std::map<int, int>* hist)
      : head_(head), cond_fn_(cond_fn), hist_(hist) {
    (void)engine;
  }

  ActionChunk plan(const LangTokens& lang, const ObsVector& obs, Rng& rng) override {
    const PolicyCond cond = cond_fn_(lang, obs);
    std::vector<int> top1;
    ActionChunk chunk = head_.sample_action(cond, rng, hist_ != nullptr ? &top1 : nullptr);
    if (hist_ != nullptr)
      for (int e : top1) (*hist_)[e] += 1;
    return chunk;
  }

 private:
  PolicyHead& head_;
  const std::function<PolicyCond(const LangTokens&, const ObsVector&)>& cond_fn_;
  std::map<int, int>* hist_;
};

}  // namespace

double ContinualEngine::evaluate_task(int stage, int task_id, std::map<int, int>* expert_hist) {
  if (cfg_.eval.episodes == 0) return 0.0;
  const TaskSpec& spec = tasks_[static_cast<std::size_t>(task_id)];
  std::function<PolicyCond(const LangTokens&, const ObsVector&)> cond_fn =
      [this](const LangTokens& lang, const ObsVector& obs) { return make_cond(lang, obs); };
  LearnedPolicy policy(*this, *policy_, cond_fn, expert_hist);

  int successes = 0;
  for (int e = 0; e < cfg_.eval.episodes; ++e) {
    const std::uint64_t index =
        (static_cast<std::uint64_t>(stage) * 1000 + static_cast<std::uint64_t>(task_id)) * 1000000 +
        static_cast<std::uint64_t>(e);
    Rng rng = derive_rng(cfg_.seed, "eval", index);
    const RolloutResult res = rollout(policy, spec, rng, spec.horizon);
    if (res.success) ++successes;
  }
  return static_cast<double>(successes) / cfg_.eval.episodes;
}

void ContinualEngine::save_checkpoint() const {
  Json body;
  body["config_hash"] = cfg_.config_hash();
  body["seed"] = cfg_.seed;
  body["next_task"] = next_task_;
  body["window_updates"] = window_updates_;
  body["cluster_count_seen"] = cluster_count_seen_;
  body["rng_scheme"] = {{"kind", "derived"}, {"seed", cfg_.seed}};

  Json rows = Json::array();
  for (const auto& row : r_so_far_.rows) rows.push_back(row);
  body["r_rows"] = std::move(rows);

  body["latent"] = latent_->checkpoint_state();
  body["policy"] = policy_->checkpoint_state();
  body["ks"] = Json::binary(ks_->serialize());
  body["replay"] = replay_.manifest();

  Json window = Json::array();
  for (const auto& pt : window_) window.push_back({{"z", pt.z}, {"task", pt.task_id}});
  body["window"] = std::move(window);
  body["routing_csv"] = routing_csv_;

  write_bytes_file(dir_ / kCheckpointFile, to_versioned_cbor(kCheckpointVersion, body));
}

bool ContinualEngine::load_checkpoint() {
  const auto path = dir_ / kCheckpointFile;
  if (!std::filesystem::exists(path)) return false;
  const Json body =
      from_versioned_cbor(read_bytes_file(path), kCheckpointVersion, "engine checkpoint");
  if (body.at("config_hash").get<std::uint64_t>() != cfg_.config_hash())
    throw std::runtime_error("checkpoint config hash does not match the supplied config");

  next_task_ = body.at("next_task").get<int>();
  window_updates_ = body.at("window_updates").get<int>();
  cluster_count_seen_ = body.at("cluster_count_seen").get<int>();

  r_so_far_.rows.clear();
  for (const auto& jrow : body.at("r_rows")) r_so_far_.add_stage_row(jrow.get<Vec>());

  latent_->restore_state(body.at("latent"));
  policy_->restore_state(body.at("policy"));
  ks_ = std::make_unique<KnowledgeSpace>(
      KnowledgeSpace::deserialize(body.at("ks").get_binary()));

  replay_.restore_from_manifest(body.at("replay"), [this](int tid) {
    return generate_demos(tasks_[static_cast<std::size_t>(tid)], cfg_.tasks.demos_per_task,
                          derive_seed(cfg_.seed, "demos", static_cast<std::uint64_t>(tid)));
  });

  window_.clear();
  for (const auto& jpt : body.at("window"))
    window_.push_back(BatchPoint{jpt.at("z").get<Vec>(), jpt.at("task").get<int>()});
  routing_csv_ = body.at("routing_csv").get<std::string>();
  return true;
}

bool ContinualEngine::already_complete() const { return next_task_ >= cfg_.tasks.n_tasks; }

void ContinualEngine::export_latents_csv() const {
  std::vector<Demo> sample_demos;
  for (const auto& spec : tasks_) {
    auto demos = generate_demos(spec, 2, derive_seed(cfg_.seed, "latent_export",
                                                     static_cast<std::uint64_t>(spec.task_id)));
    for (auto& d : demos) sample_demos.push_back(std::move(d));
  }
  write_text_file(dir_ / "latents.csv", latents_to_csv(*latent_, *ks_, tasks_, sample_demos, 5));
}

void ContinualEngine::finalize() {
  const MetricsReport metrics = compute_metrics(r_so_far_);
  emit_reports(metrics, r_so_far_, dir_, ReportMeta{cfg_.config_hash(), cfg_.seed});

  std::string routing = "stage,task_id";
  for (int e = 0; e < cfg_.model.n_experts; ++e) routing += ",expert_" + std::to_string(e);
  routing += "\n" + routing_csv_;
  write_text_file(dir_ / "routing_histograms.csv", routing);
  export_latents_csv();
}

EngineResult ContinualEngine::run() {
  std::filesystem::create_directories(dir_);
  write_text_file(dir_ / "config.json", cfg_.to_json().dump(2) + "\n");

  load_checkpoint();

  EngineResult result;
  result.run_dir = dir_;
  if (already_complete()) {
    result.R = r_so_far_;
    result.metrics = compute_metrics(r_so_far_);
    result.complete = true;
    return result;
  }

  const int stop = cfg_.stop_after_task > 0 ? std::min(cfg_.stop_after_task, cfg_.tasks.n_tasks)
                                            : cfg_.tasks.n_tasks;
  for (int j = next_task_; j < stop; ++j) learn_task(j);

  result.R = r_so_far_;
  result.complete = already_complete();
  if (result.complete) {
    finalize();
    result.metrics = compute_metrics(r_so_far_);
  }
  return result;
}

std::string latents_to_csv(const LatentModel& latent, const KnowledgeSpace& ks,
                           const std::vector<TaskSpec>& tasks, const std::vector<Demo>& demos,
                           int stride) {
  (void)tasks;
  std::string csv = "task_id,step";
  for (int d = 0; d < latent.config().latent_dim; ++d) csv += ",z_" + std::to_string(d);
  csv += ",top1_cluster,top1_prob\n";

  std::map<int, const TaskSpec*> by_id;
  for (const auto& t : tasks) by_id[t.task_id] = &t;

  for (const auto& demo : demos) {
    const TaskSpec* spec = by_id.at(demo.task_id);
    for (std::size_t t = 0; t < demo.transitions.size(); t += static_cast<std::size_t>(stride)) {
      const LatentBundle bundle =
          ks.empty() ? latent.encode_prior(spec->lang, demo.transitions[t].obs)
                     : latent.encode_mean(spec->lang, demo.transitions[t].obs, ks);
      csv += std::to_string(demo.task_id) + "," + std::to_string(t);
      for (double z : bundle.z_task.mean) csv += "," + format_double(z);
      int top1 = -1;
      double top1_prob = 0.0;
      if (!bundle.resp_task.cluster_ids.empty()) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < bundle.resp_task.probs.size(); ++k)
          if (bundle.resp_task.probs[k] > bundle.resp_task.probs[best]) best = k;
        top1 = bundle.resp_task.cluster_ids[best];
        top1_prob = bundle.resp_task.probs[best];
      }
      csv += "," + std::to_string(top1) + "," + format_double(top1_prob) + "\n";
    }
  }
  return csv;
}

}  // namespace stellar
