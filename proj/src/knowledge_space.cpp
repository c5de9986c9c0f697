#include "stellar/knowledge_space.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <stdexcept>

namespace stellar {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kElboSlack = 1e-8;  // FP slack for move gating and monotonicity

double percentile(Vec values, double p) {
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  const auto idx = static_cast<std::size_t>(
      std::clamp(std::ceil(p * static_cast<double>(n)) - 1.0, 0.0, static_cast<double>(n - 1)));
  return values[idx];
}

double kl_beta(double a, double b, double c, double d) {
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) - std::lgamma(c + d) +
         std::lgamma(c) + std::lgamma(d) + (a - c) * digamma(a) + (b - d) * digamma(b) +
         (c - a + d - b) * digamma(a + b);
}

// KL between per-dimension Normal-Gamma posteriors q=(m,kappa,a,b) and the
// prior p=(m0,kappa0,a0,b0).
double kl_normal_gamma_1d(double m, double kappa, double a, double b, double m0, double kappa0,
                          double a0, double b0) {
  const double e_lambda = a / b;
  const double e_log_lambda = digamma(a) - std::log(b);
  double kl = 0.5 * std::log(kappa / kappa0) - 0.5 +
              0.5 * kappa0 * (1.0 / kappa + (m - m0) * (m - m0) * e_lambda);
  kl += a * std::log(b) - a0 * std::log(b0) - std::lgamma(a) + std::lgamma(a0) +
        (a - a0) * e_log_lambda - (b - b0) * e_lambda;
  return kl;
}

}  // namespace

Vec stick_breaking_weights(const Vec& sticks) {
  Vec weights(sticks.size());
  double remaining = 1.0;
  for (std::size_t k = 0; k < sticks.size(); ++k) {
    const double v = sticks[k];
    if (!(v > 0.0 && v < 1.0))
      throw std::invalid_argument("stick_breaking_weights: stick outside (0,1)");
    weights[k] = v * remaining;
    remaining *= (1.0 - v);
  }
  return weights;
}

void SuffStats::resize(std::size_t dim) {
  count = 0.0;
  sum.assign(dim, 0.0);
  sum_sq.assign(dim, 0.0);
}

void SuffStats::add_point(const Vec& x, double r) {
  count += r;
  for (std::size_t d = 0; d < x.size(); ++d) {
    sum[d] += r * x[d];
    sum_sq[d] += r * x[d] * x[d];
  }
}

void SuffStats::add(const SuffStats& other) {
  count += other.count;
  for (std::size_t d = 0; d < sum.size(); ++d) {
    sum[d] += other.sum[d];
    sum_sq[d] += other.sum_sq[d];
  }
}

void SuffStats::subtract(const SuffStats& other) {
  count -= other.count;
  if (count < 1e-12) count = std::max(count, 0.0);
  for (std::size_t d = 0; d < sum.size(); ++d) {
    sum[d] -= other.sum[d];
    sum_sq[d] -= other.sum_sq[d];
  }
}

KnowledgeSpace::KnowledgeSpace(Config cfg) : cfg_(std::move(cfg)) {
  if (cfg_.dim == 0) throw std::invalid_argument("KnowledgeSpace: dim must be positive");
  if (!(cfg_.alpha > 0.0)) throw std::invalid_argument("KnowledgeSpace: alpha must be > 0");
  if (cfg_.mode == KnowledgeMode::TaskSkill && !(cfg_.gamma > 0.0))
    throw std::invalid_argument("KnowledgeSpace: gamma must be > 0 in TaskSkill mode");
  if (cfg_.k_max < 1) throw std::invalid_argument("KnowledgeSpace: k_max must be >= 1");
  if (cfg_.prior.m0.empty()) cfg_.prior.m0.assign(cfg_.dim, 0.0);
  if (cfg_.prior.m0.size() != cfg_.dim)
    throw std::invalid_argument("KnowledgeSpace: prior m0 dim mismatch");
  if (!(cfg_.prior.kappa0 > 0.0 && cfg_.prior.a0 > 0.0 && cfg_.prior.b0 > 0.0))
    throw std::invalid_argument("KnowledgeSpace: prior hyperparameters must be positive");
}

KnowledgeSpace KnowledgeSpace::from_fixed_clusters(
    Config cfg, std::vector<Cluster> clusters, std::map<int, std::map<int, double>> task_tables) {
  KnowledgeSpace ks(std::move(cfg));
  for (auto& c : clusters) {
    if (c.dist.dim() != ks.cfg_.dim)
      throw std::invalid_argument("from_fixed_clusters: cluster dim mismatch");
    if (c.suff_stats.sum.empty()) c.suff_stats.resize(ks.cfg_.dim);
    ks.next_id_ = std::max(ks.next_id_, c.id + 1);
  }
  ks.clusters_ = std::move(clusters);
  ks.fixed_task_tables_ = std::move(task_tables);
  ks.fixed_ = true;
  return ks;
}

const Cluster* KnowledgeSpace::find_cluster(int id) const {
  for (const auto& c : clusters_)
    if (c.id == id) return &c;
  return nullptr;
}

void KnowledgeSpace::require_mutable() const {
  if (fixed_)
    throw std::logic_error("KnowledgeSpace: updates are not allowed on a fixed-cluster space");
}

KnowledgeSpace::Posterior KnowledgeSpace::posterior_of(const Cluster& c) const {
  const auto& prior = cfg_.prior;
  const double n = c.suff_stats.count;
  Posterior post;
  post.kappa = prior.kappa0 + n;
  post.a = prior.a0 + 0.5 * n;
  post.m.resize(cfg_.dim);
  post.b.resize(cfg_.dim);
  for (std::size_t d = 0; d < cfg_.dim; ++d) {
    const double s = c.suff_stats.sum[d];
    const double ss = c.suff_stats.sum_sq[d];
    post.m[d] = (prior.kappa0 * prior.m0[d] + s) / post.kappa;
    if (n > 1e-12) {
      const double xbar = s / n;
      const double scatter = std::max(ss - n * xbar * xbar, 0.0);
      const double dm = xbar - prior.m0[d];
      post.b[d] = prior.b0 + 0.5 * scatter + 0.5 * prior.kappa0 * n * dm * dm / post.kappa;
    } else {
      post.b[d] = prior.b0;
    }
  }
  return post;
}

Vec KnowledgeSpace::stick_weights_from_counts() const {
  const std::size_t k_count = clusters_.size();
  Vec sticks(k_count);
  double tail = 0.0;
  for (std::size_t k = k_count; k-- > 0;) {
    const double n = clusters_[k].suff_stats.count;
    sticks[k] = (1.0 + n) / (1.0 + n + cfg_.alpha + tail);
    tail += n;
  }
  return stick_breaking_weights(sticks);
}

void KnowledgeSpace::refresh_derived() {
  const Vec weights = stick_weights_from_counts();
  for (std::size_t k = 0; k < clusters_.size(); ++k) {
    auto post = posterior_of(clusters_[k]);
    Vec var(cfg_.dim);
    for (std::size_t d = 0; d < cfg_.dim; ++d) var[d] = post.b[d] / post.a;
    clusters_[k].dist = DiagGaussian(std::move(post.m), std::move(var));
    clusters_[k].weight = weights[k];
  }
}

Vec KnowledgeSpace::expected_log_pi() const {
  const std::size_t k_count = clusters_.size();
  Vec tail(k_count, 0.0);
  double acc = 0.0;
  for (std::size_t k = k_count; k-- > 0;) {
    tail[k] = acc;
    acc += clusters_[k].suff_stats.count;
  }
  Vec out(k_count);
  double log_one_minus_acc = 0.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    const double g1 = 1.0 + clusters_[k].suff_stats.count;
    const double g2 = cfg_.alpha + tail[k];
    const double dg_total = digamma(g1 + g2);
    out[k] = digamma(g1) - dg_total + log_one_minus_acc;
    log_one_minus_acc += digamma(g2) - dg_total;
  }
  return out;
}

double KnowledgeSpace::expected_log_density(const Posterior& post, const Vec& x) const {
  double lp = 0.0;
  const double dg_a = digamma(post.a);
  for (std::size_t d = 0; d < cfg_.dim; ++d) {
    const double dm = x[d] - post.m[d];
    lp += 0.5 * (dg_a - std::log(post.b[d]) - kLog2Pi) -
          0.5 * (post.a / post.b[d] * dm * dm + 1.0 / post.kappa);
  }
  return lp;
}

KnowledgeSpace::FrozenParams KnowledgeSpace::freeze() const {
  FrozenParams frozen;
  frozen.log_pi = expected_log_pi();
  for (const auto& c : clusters_) {
    frozen.posts.push_back(posterior_of(c));
    frozen.ids.push_back(c.id);
  }
  return frozen;
}

void KnowledgeSpace::estep_batch(const std::vector<BatchPoint>& batch, BatchCache& cache,
                                 const FrozenParams& frozen) const {
  const std::size_t k_count = frozen.posts.size();

  cache.points.clear();
  cache.task_ids.clear();
  cache.resp.clear();
  cache.entropy = 0.0;
  cache.cluster_ids = frozen.ids;
  cache.points.reserve(batch.size());
  cache.resp.reserve(batch.size());

  Vec scores(k_count);
  for (const auto& pt : batch) {
    for (std::size_t k = 0; k < k_count; ++k)
      scores[k] = frozen.log_pi[k] + expected_log_density(frozen.posts[k], pt.z);
    Vec r = softmax(scores);
    for (double v : r)
      if (v > 0.0) cache.entropy -= v * std::log(v);
    cache.points.push_back(pt.z);
    cache.task_ids.push_back(pt.task_id);
    cache.resp.push_back(std::move(r));
  }
}

void KnowledgeSpace::apply_cache_stats(const BatchCache& cache, double sign) {
  for (std::size_t col = 0; col < cache.cluster_ids.size(); ++col) {
    const int cid = cache.cluster_ids[col];
    auto it = std::find_if(clusters_.begin(), clusters_.end(),
                           [cid](const Cluster& c) { return c.id == cid; });
    if (it == clusters_.end()) continue;  // cluster removed by a merge since caching
    SuffStats delta;
    delta.resize(cfg_.dim);
    for (std::size_t n = 0; n < cache.points.size(); ++n)
      delta.add_point(cache.points[n], cache.resp[n][col]);
    if (sign > 0)
      it->suff_stats.add(delta);
    else
      it->suff_stats.subtract(delta);
  }
}

double KnowledgeSpace::predictive_log_density(const Vec& x) const {
  double total_w = 0.0;
  for (const auto& c : clusters_) total_w += c.weight;
  Vec terms;
  terms.reserve(clusters_.size());
  for (const auto& c : clusters_)
    terms.push_back(std::log(c.weight / total_w) + log_density(x, c.dist));
  return log_sum_exp(terms);
}

Responsibilities KnowledgeSpace::responsibilities(const Vec& z, RespLevel level) const {
  if (z.size() != cfg_.dim) throw std::invalid_argument("responsibilities: dim mismatch");
  if (clusters_.empty())
    throw std::runtime_error(
        "responsibilities: knowledge space is empty; call bootstrap_first_cluster (or run an "
        "update) first");

  Responsibilities out;
  if (cfg_.mode == KnowledgeMode::TaskSkill && level == RespLevel::Task) {
    // Candidates are the composed per-task Gaussians, weighted by task mass.
    const auto tasks = known_task_ids();
    if (tasks.empty())
      throw std::runtime_error("responsibilities: no task tables yet; run hdp_update first");
    Vec scores(tasks.size());
    for (std::size_t j = 0; j < tasks.size(); ++j) {
      const auto dist = compose_task_distribution(tasks[j]);
      const double mass = std::max(total_task_count(tasks[j]), 1e-12);
      scores[j] = std::log(mass) + log_density(z, dist);
    }
    out.cluster_ids = tasks;
    out.probs = softmax(scores);
    return out;
  }

  Vec scores(clusters_.size());
  for (std::size_t k = 0; k < clusters_.size(); ++k)
    scores[k] = std::log(clusters_[k].weight) + log_density(z, clusters_[k].dist);
  for (const auto& c : clusters_) out.cluster_ids.push_back(c.id);
  out.probs = softmax(scores);
  return out;
}

std::vector<int> KnowledgeSpace::known_task_ids() const {
  std::set<int> ids;
  for (const auto& [tid, row] : fixed_task_tables_) ids.insert(tid);
  for (const auto& [slot, cache] : caches_)
    for (int tid : cache.task_ids) ids.insert(tid);
  return {ids.begin(), ids.end()};
}

std::map<int, double> KnowledgeSpace::task_counts(int task_id) const {
  std::map<int, double> counts;
  for (const auto& [slot, cache] : caches_) {
    for (std::size_t n = 0; n < cache.points.size(); ++n) {
      if (cache.task_ids[n] != task_id) continue;
      for (std::size_t col = 0; col < cache.cluster_ids.size(); ++col)
        counts[cache.cluster_ids[col]] += cache.resp[n][col];
    }
  }
  return counts;
}

double KnowledgeSpace::total_task_count(int task_id) const {
  double total = 0.0;
  for (const auto& [cid, c] : task_counts(task_id)) total += c;
  return total;
}

std::map<int, double> KnowledgeSpace::task_table_row(int task_id) const {
  if (cfg_.mode != KnowledgeMode::TaskSkill)
    throw std::logic_error("task_table_row: TaskSkill mode only");
  if (fixed_) {
    auto it = fixed_task_tables_.find(task_id);
    if (it == fixed_task_tables_.end())
      throw std::out_of_range("task_table_row: unknown task id " + std::to_string(task_id));
    return it->second;
  }

  const auto counts = task_counts(task_id);
  if (counts.empty())
    throw std::out_of_range("task_table_row: unknown task id " + std::to_string(task_id));

  double total_w = 0.0;
  for (const auto& c : clusters_) total_w += c.weight;
  double task_total = 0.0;
  for (const auto& [cid, c] : counts) task_total += c;

  // gamma-smoothed responsibility counts, shrinking toward the global weights.
  std::map<int, double> row;
  const double denom = task_total + cfg_.gamma;
  for (const auto& c : clusters_) {
    const double count = counts.count(c.id) ? counts.at(c.id) : 0.0;
    row[c.id] = (count + cfg_.gamma * (c.weight / total_w)) / denom;
  }
  return row;
}

DiagGaussian KnowledgeSpace::compose_task_distribution(int task_id) const {
  if (cfg_.mode != KnowledgeMode::TaskSkill)
    throw std::logic_error("compose_task_distribution: TaskSkill mode only");
  const auto row = task_table_row(task_id);

  Vec mu(cfg_.dim, 0.0);
  for (const auto& [cid, pi] : row) {
    if (pi < 1e-12) continue;
    const Cluster* c = find_cluster(cid);
    if (c == nullptr)
      throw std::logic_error("compose_task_distribution: row references unknown cluster");
    for (std::size_t d = 0; d < cfg_.dim; ++d) mu[d] += pi * c->dist.mean[d];
  }
  Vec var(cfg_.dim, 0.0);
  for (const auto& [cid, pi] : row) {
    if (pi < 1e-12) continue;
    const Cluster* c = find_cluster(cid);
    for (std::size_t d = 0; d < cfg_.dim; ++d) {
      const double dm = c->dist.mean[d] - mu[d];
      var[d] += pi * (c->dist.var[d] + dm * dm);
    }
  }
  return DiagGaussian(std::move(mu), std::move(var));
}

void KnowledgeSpace::bootstrap_first_cluster(const std::vector<BatchPoint>& batch) {
  require_mutable();
  if (!clusters_.empty()) throw std::logic_error("bootstrap_first_cluster: space not empty");
  if (batch.empty()) throw std::invalid_argument("bootstrap_first_cluster: empty batch");
  Cluster c;
  c.id = next_id_++;
  c.suff_stats.resize(cfg_.dim);
  c.dist = DiagGaussian(cfg_.prior.m0, Vec(cfg_.dim, cfg_.prior.b0 / cfg_.prior.a0));
  c.weight = 1.0 / (1.0 + cfg_.alpha);
  clusters_.push_back(std::move(c));
}

double KnowledgeSpace::elbo() const {
  double total = 0.0;
  const Vec log_pi = expected_log_pi();
  const auto& prior = cfg_.prior;

  for (std::size_t k = 0; k < clusters_.size(); ++k) {
    const auto& stats = clusters_[k].suff_stats;
    const auto post = posterior_of(clusters_[k]);
    const double n = stats.count;

    // E_q[sum_n r_nk log N(x_n | mu_k, lambda_k)], assembled from sufficient
    // statistics (the integrand is quadratic in x).
    const double dg_a = digamma(post.a);
    for (std::size_t d = 0; d < cfg_.dim; ++d) {
      const double quad =
          stats.sum_sq[d] - 2.0 * post.m[d] * stats.sum[d] + n * post.m[d] * post.m[d];
      total += 0.5 * (dg_a - std::log(post.b[d]) - kLog2Pi) * n -
               0.5 * (post.a / post.b[d] * std::max(quad, 0.0) + n / post.kappa);
    }
    total += n * log_pi[k];

    // -KL(q(v_k) || Beta(1, alpha)), with gamma parameters implied by counts.
    double tail = 0.0;
    for (std::size_t l = k + 1; l < clusters_.size(); ++l) tail += clusters_[l].suff_stats.count;
    total -= kl_beta(1.0 + n, cfg_.alpha + tail, 1.0, cfg_.alpha);

    // -KL(q(mu_k, lambda_k) || prior), per dimension.
    for (std::size_t d = 0; d < cfg_.dim; ++d)
      total -= kl_normal_gamma_1d(post.m[d], post.kappa, post.a, post.b[d], prior.m0[d],
                                  prior.kappa0, prior.a0, prior.b0);
  }

  for (const auto& [slot, cache] : caches_) total += cache.entropy;
  return total;
}

UpdateSummary KnowledgeSpace::memo_vb_update(const std::vector<BatchPoint>& batch, int batch_slot) {
  return update_impl(batch, batch_slot);
}

UpdateSummary KnowledgeSpace::hdp_update(const std::vector<BatchPoint>& batch, int batch_slot) {
  if (cfg_.mode != KnowledgeMode::TaskSkill)
    throw std::logic_error("hdp_update: TaskSkill mode only");
  return update_impl(batch, batch_slot);
}

UpdateSummary KnowledgeSpace::update_impl(const std::vector<BatchPoint>& batch, int batch_slot) {
  require_mutable();
  if (batch.empty()) throw std::invalid_argument("knowledge update: empty batch");
  for (const auto& pt : batch)
    if (pt.z.size() != cfg_.dim) throw std::invalid_argument("knowledge update: dim mismatch");

  if (clusters_.empty()) bootstrap_first_cluster(batch);

  // Replace this slot's cached contribution, then one E/M sweep. The E-step
  // runs against the parameters in force before the replacement.
  const FrozenParams frozen = freeze();
  auto old_cache = caches_.find(batch_slot);
  if (old_cache != caches_.end()) {
    apply_cache_stats(old_cache->second, -1.0);
    caches_.erase(old_cache);
  }
  BatchCache cache;
  estep_batch(batch, cache, frozen);
  apply_cache_stats(cache, +1.0);
  caches_[batch_slot] = std::move(cache);
  refresh_derived();

  UpdateSummary summary;
  summary.births_suppressed = active_cluster_count() >= cfg_.k_max;
  if (!summary.births_suppressed && try_birth(batch, batch_slot)) summary.births = 1;
  if (try_merge()) summary.merges = 1;
  summary.elbo = elbo();
  return summary;
}

bool KnowledgeSpace::try_birth(const std::vector<BatchPoint>& batch, int batch_slot) {
  // Poorly-explained points: predictive log-density at or below the
  // configured percentile of the batch.
  Vec ell(batch.size());
  for (std::size_t n = 0; n < batch.size(); ++n) ell[n] = predictive_log_density(batch[n].z);
  const double threshold = percentile(ell, cfg_.birth_percentile);
  std::vector<std::size_t> poorly;
  std::size_t seed = 0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    if (ell[n] <= threshold) poorly.push_back(n);
    if (ell[n] < ell[seed]) seed = n;
  }
  if (poorly.empty()) return false;

  // Concentrate the proposal on the worst point's neighborhood.
  Vec dists;
  for (std::size_t n : poorly) {
    double d2 = 0.0;
    for (std::size_t d = 0; d < cfg_.dim; ++d) {
      const double dd = batch[n].z[d] - batch[seed].z[d];
      d2 += dd * dd;
    }
    dists.push_back(std::sqrt(d2));
  }
  const double radius = percentile(dists, 0.5);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < poorly.size(); ++i)
    if (dists[i] <= radius) members.push_back(poorly[i]);

  auto run_sweeps = [this, &batch, batch_slot](int n_sweeps) {
    for (int sweep = 0; sweep < n_sweeps; ++sweep) {
      const FrozenParams frozen = freeze();
      auto it = caches_.find(batch_slot);
      apply_cache_stats(it->second, -1.0);
      caches_.erase(it);
      BatchCache cache;
      estep_batch(batch, cache, frozen);
      apply_cache_stats(cache, +1.0);
      caches_[batch_slot] = std::move(cache);
      refresh_derived();
    }
  };

  const auto start_clusters = clusters_;
  const auto start_caches = caches_;
  const int start_next_id = next_id_;

  const int n_sweeps = std::getenv("STELLAR_BIRTH_SWEEPS") ? atoi(std::getenv("STELLAR_BIRTH_SWEEPS")) : 2;
  // Baseline: the same number of plain sweeps without the new cluster, so the
  // gate measures the birth's own contribution, not the extra E/M passes.
  run_sweeps(n_sweeps);
  const double elbo_baseline = elbo();
  auto baseline_clusters = std::move(clusters_);
  auto baseline_caches = std::move(caches_);

  clusters_ = start_clusters;
  caches_ = start_caches;
  next_id_ = start_next_id;

  Cluster fresh;
  fresh.id = next_id_++;
  fresh.suff_stats.resize(cfg_.dim);
  SuffStats seed_stats;
  seed_stats.resize(cfg_.dim);
  for (std::size_t n : members) seed_stats.add_point(batch[n].z, 1.0);
  fresh.suff_stats.add(seed_stats);
  clusters_.push_back(std::move(fresh));

  // Restricted pass against the seeded cluster; the seed mass is retracted
  // after the first sweep so only cached contributions remain.
  {
    const FrozenParams frozen = freeze();
    auto it = caches_.find(batch_slot);
    apply_cache_stats(it->second, -1.0);
    caches_.erase(it);
    BatchCache cache;
    estep_batch(batch, cache, frozen);
    apply_cache_stats(cache, +1.0);
    caches_[batch_slot] = std::move(cache);
    clusters_.back().suff_stats.subtract(seed_stats);
    refresh_derived();
  }
  run_sweeps(n_sweeps - 1);

  const double settled_count = clusters_.back().suff_stats.count;
  if (std::getenv("STELLAR_DEBUG_MOVES") != nullptr)
    std::fprintf(stderr, "[birth] gain=%.3f settled=%.2f members=%zu\n", elbo() - elbo_baseline,
                 settled_count, members.size());
  if (elbo() > elbo_baseline + kElboSlack && settled_count >= cfg_.birth_min_count) return true;

  clusters_ = std::move(baseline_clusters);
  caches_ = std::move(baseline_caches);
  next_id_ = start_next_id;
  return false;
}

bool KnowledgeSpace::try_merge() {
  if (clusters_.size() < 2) return false;

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0, best_j = 1;
  for (std::size_t i = 0; i < clusters_.size(); ++i) {
    for (std::size_t j = i + 1; j < clusters_.size(); ++j) {
      const double sym = kl_diag_gaussian(clusters_[i].dist, clusters_[j].dist) +
                         kl_diag_gaussian(clusters_[j].dist, clusters_[i].dist);
      if (sym < best) {
        best = sym;
        best_i = i;
        best_j = j;
      }
    }
  }
  if (best >= cfg_.merge_threshold) return false;

  const double elbo_before = elbo();
  const auto snapshot_clusters = clusters_;
  const auto snapshot_caches = caches_;

  // Keep the lower id; it also keeps that cluster's stick position.
  std::size_t keep = best_i, drop = best_j;
  if (clusters_[drop].id < clusters_[keep].id) std::swap(keep, drop);
  const int keep_id = clusters_[keep].id;
  const int drop_id = clusters_[drop].id;

  clusters_[keep].suff_stats.add(clusters_[drop].suff_stats);
  clusters_.erase(clusters_.begin() + static_cast<std::ptrdiff_t>(drop));

  for (auto& [slot, cache] : caches_) {
    auto pos_of = [&cache](int cid) -> std::ptrdiff_t {
      auto it = std::find(cache.cluster_ids.begin(), cache.cluster_ids.end(), cid);
      return it == cache.cluster_ids.end() ? -1 : it - cache.cluster_ids.begin();
    };
    const auto keep_col = pos_of(keep_id);
    const auto drop_col = pos_of(drop_id);
    if (drop_col < 0) continue;
    if (keep_col < 0) {
      // The cache predates the kept cluster: just relabel the column.
      cache.cluster_ids[static_cast<std::size_t>(drop_col)] = keep_id;
    } else {
      for (auto& row : cache.resp) {
        row[static_cast<std::size_t>(keep_col)] += row[static_cast<std::size_t>(drop_col)];
        row.erase(row.begin() + drop_col);
      }
      cache.cluster_ids.erase(cache.cluster_ids.begin() + drop_col);
    }
    cache.entropy = 0.0;
    for (const auto& row : cache.resp)
      for (double r : row)
        if (r > 0.0) cache.entropy -= r * std::log(r);
  }
  refresh_derived();

  if (elbo() >= elbo_before - kElboSlack) return true;

  clusters_ = snapshot_clusters;
  caches_ = snapshot_caches;
  return false;
}

void KnowledgeSpace::relabel_clusters(const std::map<int, int>& id_map) {
  std::set<int> sources, targets;
  for (const auto& [from, to] : id_map) {
    sources.insert(from);
    targets.insert(to);
  }
  if (sources != targets) throw std::invalid_argument("relabel_clusters: map is not a permutation");
  auto remap = [&id_map](int id) {
    auto it = id_map.find(id);
    return it == id_map.end() ? id : it->second;
  };
  for (auto& c : clusters_) c.id = remap(c.id);
  for (auto& [slot, cache] : caches_)
    for (auto& cid : cache.cluster_ids) cid = remap(cid);
  std::map<int, std::map<int, double>> new_tables;
  for (const auto& [tid, row] : fixed_task_tables_) {
    std::map<int, double> new_row;
    for (const auto& [cid, w] : row) new_row[remap(cid)] = w;
    new_tables[tid] = std::move(new_row);
  }
  fixed_task_tables_ = std::move(new_tables);
  for (const auto& c : clusters_) next_id_ = std::max(next_id_, c.id + 1);
}

namespace {

Json vec_to_json(const Vec& v) { return Json(v); }
Vec vec_from_json(const Json& j) { return j.get<Vec>(); }

}  // namespace

Bytes KnowledgeSpace::serialize() const {
  Json body;
  body["mode"] = cfg_.mode == KnowledgeMode::TaskOnly ? "task_only" : "task_skill";
  body["dim"] = cfg_.dim;
  body["alpha"] = cfg_.alpha;
  body["gamma"] = cfg_.gamma;
  body["k_max"] = cfg_.k_max;
  body["prior"] = {{"m0", vec_to_json(cfg_.prior.m0)},
                   {"kappa0", cfg_.prior.kappa0},
                   {"a0", cfg_.prior.a0},
                   {"b0", cfg_.prior.b0}};
  body["birth_percentile"] = cfg_.birth_percentile;
  body["birth_min_count"] = cfg_.birth_min_count;
  body["merge_threshold"] = cfg_.merge_threshold;
  body["next_id"] = next_id_;
  body["fixed"] = fixed_;

  Json clusters = Json::array();
  for (const auto& c : clusters_) {
    clusters.push_back({{"id", c.id},
                        {"mean", vec_to_json(c.dist.mean)},
                        {"var", vec_to_json(c.dist.var)},
                        {"weight", c.weight},
                        {"count", c.suff_stats.count},
                        {"sum", vec_to_json(c.suff_stats.sum)},
                        {"sum_sq", vec_to_json(c.suff_stats.sum_sq)}});
  }
  body["clusters"] = std::move(clusters);

  Json caches = Json::object();
  for (const auto& [slot, cache] : caches_) {
    Json points = Json::array();
    for (const auto& p : cache.points) points.push_back(vec_to_json(p));
    Json resp = Json::array();
    for (const auto& r : cache.resp) resp.push_back(vec_to_json(r));
    caches[std::to_string(slot)] = {{"points", std::move(points)},
                                    {"task_ids", cache.task_ids},
                                    {"cluster_ids", cache.cluster_ids},
                                    {"resp", std::move(resp)},
                                    {"entropy", cache.entropy}};
  }
  body["caches"] = std::move(caches);

  Json tables = Json::object();
  for (const auto& [tid, row] : fixed_task_tables_) {
    Json jrow = Json::object();
    for (const auto& [cid, w] : row) jrow[std::to_string(cid)] = w;
    tables[std::to_string(tid)] = std::move(jrow);
  }
  body["fixed_task_tables"] = std::move(tables);

  return to_versioned_cbor(1, body);
}

KnowledgeSpace KnowledgeSpace::deserialize(const Bytes& bytes) {
  const Json body = from_versioned_cbor(bytes, 1, "KnowledgeSpace");
  try {
    Config cfg;
    cfg.mode = body.at("mode").get<std::string>() == "task_only" ? KnowledgeMode::TaskOnly
                                                                 : KnowledgeMode::TaskSkill;
    cfg.dim = body.at("dim").get<std::size_t>();
    cfg.alpha = body.at("alpha").get<double>();
    cfg.gamma = body.at("gamma").get<double>();
    cfg.k_max = body.at("k_max").get<int>();
    cfg.prior.m0 = vec_from_json(body.at("prior").at("m0"));
    cfg.prior.kappa0 = body.at("prior").at("kappa0").get<double>();
    cfg.prior.a0 = body.at("prior").at("a0").get<double>();
    cfg.prior.b0 = body.at("prior").at("b0").get<double>();
    cfg.birth_percentile = body.at("birth_percentile").get<double>();
    cfg.birth_min_count = body.at("birth_min_count").get<double>();
    cfg.merge_threshold = body.at("merge_threshold").get<double>();

    KnowledgeSpace ks(std::move(cfg));
    ks.next_id_ = body.at("next_id").get<int>();
    ks.fixed_ = body.at("fixed").get<bool>();
    for (const auto& jc : body.at("clusters")) {
      Cluster c;
      c.id = jc.at("id").get<int>();
      c.dist = DiagGaussian(vec_from_json(jc.at("mean")), vec_from_json(jc.at("var")));
      c.weight = jc.at("weight").get<double>();
      c.suff_stats.count = jc.at("count").get<double>();
      c.suff_stats.sum = vec_from_json(jc.at("sum"));
      c.suff_stats.sum_sq = vec_from_json(jc.at("sum_sq"));
      ks.clusters_.push_back(std::move(c));
    }
    for (const auto& [key, jcache] : body.at("caches").items()) {
      BatchCache cache;
      for (const auto& jp : jcache.at("points")) cache.points.push_back(vec_from_json(jp));
      cache.task_ids = jcache.at("task_ids").get<std::vector<int>>();
      cache.cluster_ids = jcache.at("cluster_ids").get<std::vector<int>>();
      for (const auto& jr : jcache.at("resp")) cache.resp.push_back(vec_from_json(jr));
      cache.entropy = jcache.at("entropy").get<double>();
      ks.caches_[std::stoi(key)] = std::move(cache);
    }
    for (const auto& [tkey, jrow] : body.at("fixed_task_tables").items()) {
      std::map<int, double> row;
      for (const auto& [ckey, w] : jrow.items()) row[std::stoi(ckey)] = w.get<double>();
      ks.fixed_task_tables_[std::stoi(tkey)] = std::move(row);
    }
    return ks;
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("KnowledgeSpace: malformed payload (") + e.what() + ")");
  }
}

}  // namespace stellar
