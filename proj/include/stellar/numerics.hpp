#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace stellar {

using Vec = std::vector<double>;

// Variance floor applied to every DiagGaussian; keeps KL terms finite and
// clusters from collapsing to a point.
inline constexpr double kEpsilonVar = 1e-6;

bool all_finite(const Vec& v);
void require_finite(const Vec& v, const std::string& what);

// Diagonal Gaussian. Variances are floored at kEpsilonVar on construction.
struct DiagGaussian {
  Vec mean;
  Vec var;

  DiagGaussian() = default;
  DiagGaussian(Vec m, Vec v);

  std::size_t dim() const { return mean.size(); }

  static DiagGaussian standard(std::size_t dim);
};

// KL(q || p) for diagonal Gaussians, closed form. Dims must match.
double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p);

// log N(x | g), diagonal covariance.
double log_density(const Vec& x, const DiagGaussian& g);

// Numerically stable softmax (max subtraction). Output sums to 1.
Vec softmax(const Vec& logits);

// log(sum(exp(v))) with max subtraction.
double log_sum_exp(const Vec& v);

double digamma(double x);

struct GradCheckReport {
  double max_rel_error = 0.0;
  int param_count = 0;
  bool passed = false;
};

// Central-difference gradient check. Relative error uses denominator
// max(|analytic|, |numeric|, 1e-8). Throws if the loss is non-finite at any
// probe point, naming the parameter index.
GradCheckReport finite_difference_check(const std::function<double(const Vec&)>& loss_fn,
                                        const Vec& params,
                                        const Vec& analytic_grad,
                                        double step,
                                        double tolerance);

}  // namespace stellar
