#pragma once

// Independent oracles used by the test suites. Everything here is written as
// a direct transliteration of the defining formula (quadrature, enumeration,
// Monte Carlo) and must stay independent of the library implementation paths
// it checks.

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <vector>

namespace oracle {

// KL(N(m1,v1) || N(m2,v2)) by trapezoid quadrature of q(x) log(q(x)/p(x)).
inline double kl_gaussian_1d_quadrature(double m1, double v1, double m2, double v2,
                                        int n = 400000) {
  const double s1 = std::sqrt(v1);
  const double lo = m1 - 14.0 * s1;
  const double hi = m1 + 14.0 * s1;
  const double h = (hi - lo) / n;
  auto log_q = [&](double x) {
    return -0.5 * (std::log(2.0 * M_PI * v1) + (x - m1) * (x - m1) / v1);
  };
  auto log_p = [&](double x) {
    return -0.5 * (std::log(2.0 * M_PI * v2) + (x - m2) * (x - m2) / v2);
  };
  auto f = [&](double x) { return std::exp(log_q(x)) * (log_q(x) - log_p(x)); };
  double acc = 0.5 * (f(lo) + f(hi));
  for (int i = 1; i < n; ++i) acc += f(lo + i * h);
  return acc * h;
}

// Adjusted Rand index between two labelings.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  std::map<int, std::map<int, long>> table;
  std::map<int, long> row_sum, col_sum;
  for (std::size_t i = 0; i < n; ++i) {
    table[a[i]][b[i]] += 1;
    row_sum[a[i]] += 1;
    col_sum[b[i]] += 1;
  }
  auto choose2 = [](long x) { return 0.5 * x * (x - 1); };
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [ra, row] : table)
    for (const auto& [cb, cnt] : row) sum_ij += choose2(cnt);
  for (const auto& [ra, cnt] : row_sum) sum_a += choose2(cnt);
  for (const auto& [cb, cnt] : col_sum) sum_b += choose2(cnt);
  const double total = choose2(static_cast<long>(n));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_ij - expected) / (max_index - expected);
}

// Monte-Carlo moments of a Gaussian mixture: draw component ~ weights, then
// x ~ N(mean_i, var_i). Returns per-dim mean and variance estimates.
struct MixtureMoments {
  std::vector<double> mean;
  std::vector<double> var;
};

inline MixtureMoments mixture_moments_mc(const std::vector<std::vector<double>>& means,
                                         const std::vector<std::vector<double>>& vars,
                                         const std::vector<double>& weights,
                                         std::size_t n_samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> comp(weights.begin(), weights.end());
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t dim = means[0].size();
  std::vector<double> sum(dim, 0.0), sum_sq(dim, 0.0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const int k = comp(rng);
    for (std::size_t d = 0; d < dim; ++d) {
      const double x = means[k][d] + std::sqrt(vars[k][d]) * unit(rng);
      sum[d] += x;
      sum_sq[d] += x * x;
    }
  }
  MixtureMoments out;
  out.mean.resize(dim);
  out.var.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    out.mean[d] = sum[d] / n_samples;
    out.var[d] = sum_sq[d] / n_samples - out.mean[d] * out.mean[d];
  }
  return out;
}

}  // namespace oracle
