#pragma once

#include "asyncflow/common.hpp"
#include "asyncflow/rng.hpp"

namespace af {

// Beta shape parameters. The positivity map keeps both strictly above 1,
// which makes the density unimodal with an interior mode.
struct BetaParams {
  double alpha = 2.0;
  double beta = 2.0;
};

// Piecewise positivity map, C1 at 0 with phi(0) = 2 and phi'(0) = 1:
//   x > 0:  2 + x + x^2/2
//   x <= 0: 1 + e^x
// Range is (1, inf), so mapped Beta parameters always exceed 1. The
// exponential is floored at 1e-12 so the bound survives double rounding in
// the deep saturation regime.
double phi(double x);
double phi_deriv(double x);

double digamma(double x);

// log p(r | alpha, beta) for r in (0, 1); throws outside the open interval.
double beta_log_prob(const BetaParams& p, double r);

// Closed-form mode (alpha - 1) / (alpha + beta - 2); requires alpha, beta > 1.
double beta_mode(const BetaParams& p);

// Exact draw via two Gamma variates (Marsaglia-Tsang), clamped away from the
// endpoints so log-densities stay finite.
inline constexpr double kBetaSampleClamp = 1e-9;
double beta_sample(const BetaParams& p, RngStream& rng);

// Marsaglia-Tsang Gamma(shape, 1) sampler for shape >= 1.
double gamma_sample(double shape, RngStream& rng);

}  // namespace af
