#include "stellar/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stellar {

bool all_finite(const Vec& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(const Vec& v, const std::string& what) {
  if (!all_finite(v)) throw std::invalid_argument(what + ": non-finite entry");
}

DiagGaussian::DiagGaussian(Vec m, Vec v) : mean(std::move(m)), var(std::move(v)) {
  if (mean.size() != var.size())
    throw std::invalid_argument("DiagGaussian: mean/var dim mismatch");
  require_finite(mean, "DiagGaussian mean");
  require_finite(var, "DiagGaussian var");
  for (double& x : var) x = std::max(x, kEpsilonVar);
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
  return DiagGaussian(Vec(dim, 0.0), Vec(dim, 1.0));
}

double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim())
    throw std::invalid_argument("kl_diag_gaussian: dimension mismatch");
  double kl = 0.0;
  for (std::size_t d = 0; d < q.dim(); ++d) {
    const double dm = q.mean[d] - p.mean[d];
    kl += 0.5 * (std::log(p.var[d] / q.var[d]) + (q.var[d] + dm * dm) / p.var[d] - 1.0);
  }
  return kl;
}

double log_density(const Vec& x, const DiagGaussian& g) {
  if (x.size() != g.dim()) throw std::invalid_argument("log_density: dimension mismatch");
  constexpr double kLog2Pi = 1.8378770664093454836;
  double lp = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double dm = x[d] - g.mean[d];
    lp += -0.5 * (kLog2Pi + std::log(g.var[d]) + dm * dm / g.var[d]);
  }
  return lp;
}

Vec softmax(const Vec& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  require_finite(logits, "softmax logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vec out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& x : out) x /= z;
  return out;
}

double log_sum_exp(const Vec& v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double digamma(double x) {
  if (!(x > 0.0)) throw std::invalid_argument("digamma: requires x > 0");
  // Recurrence up to the asymptotic regime, then the standard expansion.
  double r = 0.0;
  while (x < 10.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  return r + std::log(x) - 0.5 / x -
         f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f / 132.0))));
}

GradCheckReport finite_difference_check(const std::function<double(const Vec&)>& loss_fn,
                                        const Vec& params,
                                        const Vec& analytic_grad,
                                        double step,
                                        double tolerance) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be > 0");
  if (params.size() != analytic_grad.size())
    throw std::invalid_argument("finite_difference_check: params/grad size mismatch");

  GradCheckReport report;
  report.param_count = static_cast<int>(params.size());
  Vec probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + step;
    const double up = loss_fn(probe);
    probe[i] = params[i] - step;
    const double down = loss_fn(probe);
    probe[i] = params[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::runtime_error("finite_difference_check: non-finite loss at parameter " +
                               std::to_string(i));
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = analytic_grad[i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(numeric - analytic) / denom);
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace stellar
