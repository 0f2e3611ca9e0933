#include "asyncflow/beta.hpp"

#include <algorithm>
#include <cmath>

namespace af {

double phi(double x) {
  if (x > 0.0) return 2.0 + x + 0.5 * x * x;
  // the floor keeps the result strictly above 1 in double precision even
  // when exp(x) underflows past the ulp of 1
  return 1.0 + std::max(std::exp(x), 1e-12);
}

double phi_deriv(double x) {
  if (x > 0.0) return 1.0 + x;
  return std::exp(x);
}

double digamma(double x) {
  require(x > 0.0, "digamma: argument must be positive");
  // recurrence up to x >= 10, then the asymptotic expansion
  double r = 0.0;
  while (x < 10.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  r += std::log(x) - 0.5 * inv -
       inv2 * (1.0 / 12.0 -
               inv2 * (1.0 / 120.0 -
                       inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
  return r;
}

double beta_log_prob(const BetaParams& p, double r) {
  if (!(r > 0.0 && r < 1.0))
    throw UsageError("beta_log_prob: r must lie strictly inside (0, 1)");
  const double log_b =
      std::lgamma(p.alpha) + std::lgamma(p.beta) - std::lgamma(p.alpha + p.beta);
  return (p.alpha - 1.0) * std::log(r) + (p.beta - 1.0) * std::log1p(-r) - log_b;
}

double beta_mode(const BetaParams& p) {
  require(p.alpha > 1.0 && p.beta > 1.0, "beta_mode: requires alpha, beta > 1");
  return (p.alpha - 1.0) / (p.alpha + p.beta - 2.0);
}

double gamma_sample(double shape, RngStream& rng) {
  require(shape >= 1.0, "gamma_sample: shape must be >= 1");
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x2 + d - d * v + d * std::log(v)) return d * v;
  }
}

double beta_sample(const BetaParams& p, RngStream& rng) {
  const double g1 = gamma_sample(p.alpha, rng);
  const double g2 = gamma_sample(p.beta, rng);
  const double r = g1 / (g1 + g2);
  return std::clamp(r, kBetaSampleClamp, 1.0 - kBetaSampleClamp);
}

}  // namespace af
