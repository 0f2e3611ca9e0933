#pragma once

#include <optional>
#include <vector>

#include "asyncflow/flow.hpp"
#include "asyncflow/tpm.hpp"

namespace af {

// Deviation bound for the policy ratio r in [0, 1]:
//   standard: eta = 1 + (r - 0.5) * gamma   (deviation within [-0.5, 0.5]*gamma)
//   lifted:   eta = 1 + (2r - 1) * gamma    (deviation within [-1, 1]*gamma)
enum class BoundMode { standard, lifted };

struct AsyncConfig {
  double gamma = 1.0;
  BoundMode bound = BoundMode::standard;
  double sigma_min = 1e-3;
  int k_max = 10;
  bool stochastic = false;        // draw r from Beta instead of using its mode
  std::optional<double> force_r;  // pin the ratio; skips the policy entirely
  // With per-sample grids a group would step until every member's next update
  // time fell below sigma_min; shared grids make the two rules coincide, and
  // collect_group verifies that when this is set.
  bool batch_sync_termination = false;

  void validate() const {
    require(gamma >= 0.0, "AsyncConfig: gamma must be >= 0");
    require(sigma_min > 0.0 && sigma_min < 1.0, "AsyncConfig: sigma_min must lie in (0, 1)");
    require(k_max >= 1, "AsyncConfig: k_max must be positive");
    if (force_r) require(*force_r >= 0.0 && *force_r <= 1.0,
                         "AsyncConfig: forced ratio must lie in [0, 1]");
  }
};

// One latent-update step. The final Euler step that lands the latent at t = 0
// carries no policy action: beta is empty and its deviation is zero.
struct StepRecord {
  int k = 0;
  double t_k = 0.0;
  double t_next = 0.0;
  double t_star = 0.0;       // conditioning pseudo-timestep used this step
  double t_star_next = 0.0;  // emitted for the following step (clamped)
  std::optional<BetaParams> beta;
  double r = 0.5;
  double log_prob = 0.0;
  double deviation = 0.0;   // eta - 1
  bool clamped = false;     // sigma_min floor fired for t_star_next
  bool r_clamped = false;   // action clamped away from {0, 1}
  bool is_final = false;
  Vec x_before, v, x0_hat, x_after;
};

struct Trajectory {
  TimeGrid grid;
  Condition cond;
  double guidance = 1.0;
  std::vector<StepRecord> steps;
  Vec final_sample;
  double reward = 0.0;        // composite, filled by the reward pipeline
  double old_log_prob = 0.0;  // sum of step log-probs at rollout time

  int policy_steps() const;
  double sum_log_prob() const;
};

Vec cfg_combine(const Vec& v_cond, const Vec& v_uncond, double omega);

double deviation_multiplier(double r, const AsyncConfig& cfg);  // eta
// t_k + eta * (t_next - t_k) before the sigma_min floor. An exactly-unit
// multiplier returns t_next itself, so the synchronous fallback is bitwise.
double pseudo_timestep_raw(double t_k, double t_next, double r, const AsyncConfig& cfg);
// max(sigma_min, raw); requires t_k > t_next and r in [0, 1].
double pseudo_timestep(double t_k, double t_next, double r, const AsyncConfig& cfg);

// Default sampler: conditioning time equals the grid time at every step.
Trajectory sample_sync(const VelocityField& field, const TimeGrid& grid,
                       const Condition& c, double omega, RngStream& rng);

// De-synchronized sampler: latent updates follow the grid unchanged while the
// conditioning time follows the policy's pseudo-timestep recurrence. Stepping
// stops once the next update time falls below sigma_min or k_max is reached;
// one final Euler step using a velocity conditioned at the last
// pseudo-timestep brings the latent exactly to t = 0.
Trajectory sample_async(const VelocityField& field, const TpmPolicy* tpm,
                        const TimeGrid& grid, const Condition& c, double omega,
                        const AsyncConfig& cfg, RngStream& rng);

// Velocity-scaling alternative: synchronous conditioning, update scaled by a
// constant multiplier in [0.5, 1.5], schedule untouched.
Trajectory sample_alternative(const VelocityField& field, const TimeGrid& grid,
                              const Condition& c, double omega, double omega_mult,
                              RngStream& rng);

// Policy-driven variant of the alternative: the per-step multiplier is
// eta(r) with r from the policy (mode or sampled).
Trajectory sample_alternative_policy(const VelocityField& field, const TpmPolicy& tpm,
                                     const TimeGrid& grid, const Condition& c,
                                     double omega, const AsyncConfig& cfg,
                                     RngStream& rng);

// Mean recorded deviation over all policy steps of all trajectories.
double mean_deviation(const std::vector<Trajectory>& trajectories);

// True when two trajectories agree bit for bit on everything the default
// sampler produces: grid times, latents, velocities and the final sample.
bool latents_bitwise_equal(const Trajectory& a, const Trajectory& b);

}  // namespace af
