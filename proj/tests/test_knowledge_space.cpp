#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "stellar/knowledge_space.hpp"
#include "stellar/rng.hpp"

using namespace stellar;

namespace {

KnowledgeSpace::Config base_config(std::size_t dim, KnowledgeMode mode = KnowledgeMode::TaskOnly) {
  KnowledgeSpace::Config cfg;
  cfg.mode = mode;
  cfg.dim = dim;
  return cfg;
}

Cluster make_cluster(int id, Vec mean, Vec var, double weight) {
  Cluster c;
  c.id = id;
  c.dist = DiagGaussian(std::move(mean), std::move(var));
  c.weight = weight;
  return c;
}

// Ground-truth mixture sampler for recovery tests.
std::vector<BatchPoint> gaussian_blobs(const std::vector<Vec>& centers, double sigma, int per,
                                       std::uint64_t seed, std::vector<int>* labels = nullptr) {
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<BatchPoint> points;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (int i = 0; i < per; ++i) {
      Vec z(centers[c].size());
      for (std::size_t d = 0; d < z.size(); ++d) z[d] = centers[c][d] + sigma * unit(rng);
      points.push_back(BatchPoint{std::move(z), static_cast<int>(c)});
      if (labels != nullptr) labels->push_back(static_cast<int>(c));
    }
  }
  return points;
}

std::vector<int> hard_assignments(const KnowledgeSpace& ks, const std::vector<BatchPoint>& pts,
                                  RespLevel level = RespLevel::Skill) {
  std::vector<int> labels;
  for (const auto& pt : pts) {
    const auto r = ks.responsibilities(pt.z, level);
    std::size_t best = 0;
    for (std::size_t k = 1; k < r.probs.size(); ++k)
      if (r.probs[k] > r.probs[best]) best = k;
    labels.push_back(r.cluster_ids[best]);
  }
  return labels;
}

}  // namespace

TEST_CASE("stick_breaking_weights hand values") {
  const Vec w = stick_breaking_weights({0.5, 0.5, 0.5});
  CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(w[2] == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("stick_breaking_weights degenerate first stick") {
  const Vec w = stick_breaking_weights({1.0 - 1e-12, 0.5, 0.5});
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(w[1] < 1e-11);
  CHECK(w[2] < 1e-11);
}

TEST_CASE("stick_breaking_weights geometric closed form") {
  const double v = 0.3;
  const Vec w = stick_breaking_weights(Vec(6, v));
  for (std::size_t k = 0; k < w.size(); ++k)
    CHECK(w[k] == doctest::Approx(v * std::pow(1.0 - v, static_cast<double>(k))).epsilon(1e-12));
  double total = 0.0;
  for (double x : w) total += x;
  CHECK(total <= 1.0);
}

TEST_CASE("stick_breaking_weights rejects sticks outside (0,1)") {
  CHECK_THROWS_AS(stick_breaking_weights({0.5, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(stick_breaking_weights({0.0}), std::invalid_argument);
  CHECK_THROWS_AS(stick_breaking_weights({-0.2}), std::invalid_argument);
}

TEST_CASE("responsibilities single cluster") {
  auto ks = KnowledgeSpace::from_fixed_clusters(base_config(1),
                                                {make_cluster(0, {0.0}, {1.0}, 1.0)});
  const auto r = ks.responsibilities({0.7}, RespLevel::Task);
  REQUIRE(r.probs.size() == 1);
  CHECK(r.probs[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.cluster_ids[0] == 0);
}

TEST_CASE("responsibilities symmetric clusters") {
  auto ks = KnowledgeSpace::from_fixed_clusters(
      base_config(1),
      {make_cluster(0, {-1.0}, {1.0}, 0.5), make_cluster(1, {1.0}, {1.0}, 0.5)});
  const auto r = ks.responsibilities({0.0}, RespLevel::Task);
  CHECK(r.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.probs[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("responsibilities dominated by the near cluster") {
  auto ks = KnowledgeSpace::from_fixed_clusters(
      base_config(1),
      {make_cluster(0, {0.0}, {1.0}, 0.5), make_cluster(1, {10.0}, {1.0}, 0.5)});
  const auto r = ks.responsibilities({0.0}, RespLevel::Task);
  CHECK(r.probs[0] > 0.999);
}

TEST_CASE("responsibilities on empty space directs to bootstrap") {
  KnowledgeSpace ks(base_config(2));
  CHECK_THROWS_WITH_AS(ks.responsibilities({0.0, 0.0}, RespLevel::Task),
                       doctest::Contains("bootstrap_first_cluster"), std::runtime_error);
}

TEST_CASE("compose_task_distribution single skill") {
  auto cfg = base_config(2, KnowledgeMode::TaskSkill);
  auto ks = KnowledgeSpace::from_fixed_clusters(
      cfg, {make_cluster(0, {0.5, -0.5}, {2.0, 0.3}, 1.0)}, {{7, {{0, 1.0}}}});
  const auto d = ks.compose_task_distribution(7);
  CHECK(d.mean[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d.var[1] == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("compose_task_distribution matches Monte-Carlo moments") {
  auto cfg = base_config(1, KnowledgeMode::TaskSkill);
  auto ks = KnowledgeSpace::from_fixed_clusters(
      cfg, {make_cluster(0, {0.0}, {1.0}, 0.5), make_cluster(1, {2.0}, {1.0}, 0.5)},
      {{0, {{0, 0.5}, {1, 0.5}}}});
  const auto d = ks.compose_task_distribution(0);
  CHECK(d.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.var[0] == doctest::Approx(2.0).epsilon(1e-12));

  const auto mc = oracle::mixture_moments_mc({{0.0}, {2.0}}, {{1.0}, {1.0}}, {0.5, 0.5}, 1000000, 5);
  CHECK(std::abs(d.mean[0] - mc.mean[0]) < 1e-2);
  CHECK(std::abs(d.var[0] - mc.var[0]) < 1e-2);
}

TEST_CASE("compose_task_distribution of identical skills is that skill") {
  auto cfg = base_config(2, KnowledgeMode::TaskSkill);
  auto ks = KnowledgeSpace::from_fixed_clusters(
      cfg,
      {make_cluster(0, {1.0, 2.0}, {0.5, 0.7}, 0.6), make_cluster(1, {1.0, 2.0}, {0.5, 0.7}, 0.4)},
      {{0, {{0, 0.3}, {1, 0.7}}}});
  const auto d = ks.compose_task_distribution(0);
  CHECK(d.mean[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.mean[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(d.var[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d.var[1] == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("compose_task_distribution unknown task id") {
  auto cfg = base_config(1, KnowledgeMode::TaskSkill);
  auto ks = KnowledgeSpace::from_fixed_clusters(cfg, {make_cluster(0, {0.0}, {1.0}, 1.0)},
                                                {{0, {{0, 1.0}}}});
  CHECK_THROWS_AS(ks.compose_task_distribution(99), std::out_of_range);
}

TEST_CASE("memoVB recovers three well-separated gaussians") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    std::vector<int> truth;
    const auto pts =
        gaussian_blobs({{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}}, 1.0, 100, seed, &truth);
    KnowledgeSpace ks(base_config(2));
    for (int pass = 0; pass < 5; ++pass) ks.memo_vb_update(pts, 0);
    CAPTURE(seed);
    CHECK(ks.active_cluster_count() == 3);
    const auto labels = hard_assignments(ks, pts, RespLevel::Task);
    CHECK(oracle::adjusted_rand_index(truth, labels) > 0.95);
  }
}

TEST_CASE("memoVB single gaussian stays one cluster with a sane mean") {
  std::vector<int> truth;
  const auto pts = gaussian_blobs({{1.5, -2.0}}, 1.0, 100, 9, &truth);
  KnowledgeSpace ks(base_config(2));
  for (int pass = 0; pass < 5; ++pass) ks.memo_vb_update(pts, 0);
  CHECK(ks.active_cluster_count() == 1);

  Vec sample_mean(2, 0.0);
  for (const auto& p : pts)
    for (int d = 0; d < 2; ++d) sample_mean[d] += p.z[d] / 100.0;
  const double se = 1.0 / std::sqrt(100.0);
  for (int d = 0; d < 2; ++d)
    CHECK(std::abs(ks.clusters()[0].dist.mean[d] - sample_mean[d]) < 3.0 * se);
}

TEST_CASE("memoVB elbo non-decreasing on repeated identical batches") {
  const auto pts = gaussian_blobs({{0.0, 0.0}, {6.0, 6.0}}, 1.0, 60, 17);
  KnowledgeSpace ks(base_config(2));
  double prev = -1e300;
  for (int pass = 0; pass < 8; ++pass) {
    const auto summary = ks.memo_vb_update(pts, 0);
    if (summary.births == 0 && summary.merges == 0) {
      CHECK(summary.elbo >= prev - 1e-8 * (1.0 + std::abs(prev)));
    }
    prev = summary.elbo;
  }
}

TEST_CASE("memoVB respects the K_max cap and flags suppressed births") {
  auto cfg = base_config(2);
  cfg.k_max = 2;
  const auto pts =
      gaussian_blobs({{0.0, 0.0}, {8.0, 0.0}, {0.0, 8.0}, {8.0, 8.0}}, 0.5, 40, 21);
  KnowledgeSpace ks(cfg);
  bool suppressed = false;
  for (int pass = 0; pass < 6; ++pass) {
    const auto summary = ks.memo_vb_update(pts, 0);
    suppressed = suppressed || summary.births_suppressed;
    CHECK(ks.active_cluster_count() <= 2);
  }
  CHECK(suppressed);
}

TEST_CASE("memoVB incremental two-batch processing matches full batch elbo") {
  auto pts = gaussian_blobs({{0.0, 0.0}, {7.0, 7.0}}, 1.0, 100, 31);
  Rng shuffle_rng(99);
  std::shuffle(pts.begin(), pts.end(), shuffle_rng);
  const std::vector<BatchPoint> first(pts.begin(), pts.begin() + 100);
  const std::vector<BatchPoint> second(pts.begin() + 100, pts.end());

  KnowledgeSpace full(base_config(2));
  double full_elbo = 0.0;
  for (int pass = 0; pass < 12; ++pass) full_elbo = full.memo_vb_update(pts, 0).elbo;

  KnowledgeSpace memo(base_config(2));
  double memo_elbo = 0.0;
  for (int pass = 0; pass < 12; ++pass) {
    memo.memo_vb_update(first, 0);
    memo_elbo = memo.memo_vb_update(second, 1).elbo;
  }
  CHECK(std::abs(full_elbo - memo_elbo) < 1e-3 * (1.0 + std::abs(full_elbo)));
  CHECK(full.active_cluster_count() == memo.active_cluster_count());
}

TEST_CASE("memoVB weight and row invariants after updates") {
  const auto pts = gaussian_blobs({{0.0, 0.0}, {9.0, 0.0}}, 1.0, 80, 41);
  KnowledgeSpace ks(base_config(2));
  for (int pass = 0; pass < 4; ++pass) ks.memo_vb_update(pts, 0);
  double total = 0.0;
  for (const auto& c : ks.clusters()) {
    CHECK(c.weight > 0.0);
    CHECK(c.weight <= 1.0);
    total += c.weight;
  }
  CHECK(total <= 1.0 + 1e-12);
  // Responsibilities normalize
  const auto r = ks.responsibilities(pts[0].z, RespLevel::Task);
  double rs = 0.0;
  for (double p : r.probs) rs += p;
  CHECK(rs == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("relabeling cluster ids leaves distributions and elbo unchanged") {
  const auto pts = gaussian_blobs({{0.0, 0.0}, {8.0, 8.0}}, 1.0, 60, 51);
  KnowledgeSpace ks(base_config(2));
  for (int pass = 0; pass < 4; ++pass) ks.memo_vb_update(pts, 0);
  REQUIRE(ks.active_cluster_count() >= 2);

  const double elbo_before = ks.elbo();
  auto resp_before = ks.responsibilities(pts[0].z, RespLevel::Task).probs;
  std::sort(resp_before.begin(), resp_before.end());

  const int a = ks.clusters()[0].id;
  const int b = ks.clusters()[1].id;
  ks.relabel_clusters({{a, b}, {b, a}});

  CHECK(ks.elbo() == doctest::Approx(elbo_before).epsilon(1e-12));
  auto resp_after = ks.responsibilities(pts[0].z, RespLevel::Task).probs;
  std::sort(resp_after.begin(), resp_after.end());
  for (std::size_t i = 0; i < resp_before.size(); ++i)
    CHECK(resp_after[i] == doctest::Approx(resp_before[i]).epsilon(1e-12));
}

TEST_CASE("hdp shared skill appears in both task tables") {
  auto cfg = base_config(2, KnowledgeMode::TaskSkill);
  Rng rng(7);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<BatchPoint> batch;
  auto emit = [&](Vec center, int task, int n) {
    for (int i = 0; i < n; ++i)
      batch.push_back(BatchPoint{{center[0] + 0.3 * unit(rng), center[1] + 0.3 * unit(rng)}, task});
  };
  emit({0.0, 0.0}, 0, 50);  // shared component
  emit({0.0, 0.0}, 1, 50);
  emit({6.0, 6.0}, 0, 50);   // private to task 0
  emit({-6.0, 6.0}, 1, 50);  // private to task 1

  KnowledgeSpace ks(cfg);
  for (int pass = 0; pass < 6; ++pass) ks.hdp_update(batch, 0);

  // Identify the cluster nearest the shared component.
  int shared_id = -1;
  double best = 1e300;
  for (const auto& c : ks.clusters()) {
    const double d = std::abs(c.dist.mean[0]) + std::abs(c.dist.mean[1]);
    if (d < best) {
      best = d;
      shared_id = c.id;
    }
  }
  const auto row0 = ks.task_table_row(0);
  const auto row1 = ks.task_table_row(1);
  CHECK(row0.at(shared_id) > 0.2);
  CHECK(row1.at(shared_id) > 0.2);

  double sum0 = 0.0, sum1 = 0.0;
  for (const auto& [cid, w] : row0) sum0 += w;
  for (const auto& [cid, w] : row1) sum1 += w;
  CHECK(sum0 == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sum1 == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("hdp single task row proportional to responsibility mass") {
  auto cfg = base_config(2, KnowledgeMode::TaskSkill);
  cfg.gamma = 1e-9;
  const auto batch = gaussian_blobs({{0.0, 0.0}, {8.0, 0.0}}, 0.5, 60, 61);
  std::vector<BatchPoint> one_task;
  for (auto p : batch) {
    p.task_id = 0;
    one_task.push_back(p);
  }
  KnowledgeSpace ks(cfg);
  for (int pass = 0; pass < 5; ++pass) ks.hdp_update(one_task, 0);

  const auto row = ks.task_table_row(0);
  double total_count = 0.0;
  for (const auto& c : ks.clusters()) total_count += c.suff_stats.count;
  for (const auto& c : ks.clusters())
    CHECK(row.at(c.id) == doctest::Approx(c.suff_stats.count / total_count).epsilon(1e-6));
}

TEST_CASE("hdp large gamma pulls task rows together") {
  auto cfg = base_config(2, KnowledgeMode::TaskSkill);
  cfg.gamma = 1e9;
  Rng rng(9);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<BatchPoint> batch;
  for (int task = 0; task < 2; ++task)
    for (int i = 0; i < 60; ++i)
      batch.push_back(BatchPoint{{(i % 2) * 8.0 + 0.4 * unit(rng), 0.4 * unit(rng)}, task});

  KnowledgeSpace ks(cfg);
  for (int pass = 0; pass < 5; ++pass) ks.hdp_update(batch, 0);
  const auto row0 = ks.task_table_row(0);
  const auto row1 = ks.task_table_row(1);
  double tv = 0.0;
  for (const auto& [cid, w] : row0) tv += 0.5 * std::abs(w - row1.at(cid));
  CHECK(tv < 0.05);
}

TEST_CASE("hdp_update requires TaskSkill mode") {
  KnowledgeSpace ks(base_config(2));
  CHECK_THROWS_AS(ks.hdp_update({BatchPoint{{0.0, 0.0}, 0}}, 0), std::logic_error);
}

TEST_CASE("serialize round trip on a fresh space") {
  KnowledgeSpace ks(base_config(3));
  auto restored = KnowledgeSpace::deserialize(ks.serialize());
  CHECK(restored.active_cluster_count() == 0);
  CHECK(restored.config().dim == 3);
}

TEST_CASE("serialize round trip preserves responsibilities after updates") {
  const auto pts = gaussian_blobs({{0.0, 0.0}, {7.0, 0.0}, {0.0, 7.0}}, 1.0, 60, 71);
  KnowledgeSpace ks(base_config(2));
  for (int pass = 0; pass < 10; ++pass) ks.memo_vb_update(pts, pass % 2);

  const Bytes bytes = ks.serialize();
  auto restored = KnowledgeSpace::deserialize(bytes);
  CHECK(restored.active_cluster_count() == ks.active_cluster_count());
  CHECK(restored.elbo() == ks.elbo());

  for (int i = 0; i < 10; ++i) {
    const auto a = ks.responsibilities(pts[static_cast<std::size_t>(i * 7)].z, RespLevel::Task);
    const auto b =
        restored.responsibilities(pts[static_cast<std::size_t>(i * 7)].z, RespLevel::Task);
    REQUIRE(a.probs.size() == b.probs.size());
    for (std::size_t k = 0; k < a.probs.size(); ++k) {
      CHECK(a.cluster_ids[k] == b.cluster_ids[k]);
      CHECK(a.probs[k] == b.probs[k]);
    }
  }
}

TEST_CASE("deserialize rejects corrupted payloads") {
  KnowledgeSpace ks(base_config(2));
  Bytes bytes = ks.serialize();
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(KnowledgeSpace::deserialize(bytes), std::runtime_error);

  Bytes garbage{0xde, 0xad, 0xbe, 0xef};
  CHECK_THROWS_AS(KnowledgeSpace::deserialize(garbage), std::runtime_error);
}

TEST_CASE("fixed spaces reject updates") {
  auto ks = KnowledgeSpace::from_fixed_clusters(base_config(1),
                                                {make_cluster(0, {0.0}, {1.0}, 1.0)});
  CHECK_THROWS_AS(ks.memo_vb_update({BatchPoint{{0.0}, 0}}, 0), std::logic_error);
}
