#include "asyncflow/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace af {

int Trajectory::policy_steps() const {
  int n = 0;
  for (const StepRecord& s : steps)
    if (!s.is_final) ++n;
  return n;
}

double Trajectory::sum_log_prob() const {
  double s = 0.0;
  for (const StepRecord& rec : steps)
    if (!rec.is_final) s += rec.log_prob;
  return s;
}

Vec cfg_combine(const Vec& v_cond, const Vec& v_uncond, double omega) {
  require(v_cond.size() == v_uncond.size(), "cfg_combine: shape mismatch");
  return v_uncond + omega * (v_cond - v_uncond);
}

double deviation_multiplier(double r, const AsyncConfig& cfg) {
  const double d = cfg.bound == BoundMode::standard ? r - 0.5 : 2.0 * (r - 0.5);
  return 1.0 + d * cfg.gamma;
}

double pseudo_timestep_raw(double t_k, double t_next, double r, const AsyncConfig& cfg) {
  if (!(t_k > t_next)) throw UsageError("pseudo_timestep: times must decrease");
  require(r >= 0.0 && r <= 1.0, "pseudo_timestep: r must lie in [0, 1]");
  const double eta = deviation_multiplier(r, cfg);
  if (eta == 1.0) return t_next;
  return t_k + eta * (t_next - t_k);
}

double pseudo_timestep(double t_k, double t_next, double r, const AsyncConfig& cfg) {
  return std::max(cfg.sigma_min, pseudo_timestep_raw(t_k, t_next, r, cfg));
}

namespace {

Vec guided_velocity(const VelocityField& field, const Vec& x, double t,
                    const Condition& c, double omega) {
  const Vec v_cond = field.velocity(x, t, c);
  const Vec v_uncond = field.velocity(x, t, Condition::null_cond());
  return cfg_combine(v_cond, v_uncond, omega);
}

}  // namespace

Trajectory sample_sync(const VelocityField& field, const TimeGrid& grid,
                       const Condition& c, double omega, RngStream& rng) {
  grid.validate();
  Trajectory traj;
  traj.grid = grid;
  traj.cond = c;
  traj.guidance = omega;
  Vec x = rng.normal_vec(field.dim());
  const int K = grid.steps();
  for (int k = 0; k < K; ++k) {
    StepRecord rec;
    rec.k = k;
    rec.t_k = grid[k];
    rec.t_next = grid[k + 1];
    rec.t_star = grid[k];
    rec.t_star_next = grid[k + 1];
    rec.x_before = x;
    try {
      rec.v = guided_velocity(field, x, grid[k], c, omega);
    } catch (const NumericError& e) {
      throw NumericError("sample_sync: step " + std::to_string(k) + ": " + e.what());
    }
    rec.x0_hat = clean_estimate(x, grid[k], rec.v);
    x += (grid[k + 1] - grid[k]) * rec.v;
    rec.x_after = x;
    traj.steps.push_back(std::move(rec));
  }
  traj.final_sample = x;
  return traj;
}

Trajectory sample_async(const VelocityField& field, const TpmPolicy* tpm,
                        const TimeGrid& grid, const Condition& c, double omega,
                        const AsyncConfig& cfg, RngStream& rng) {
  grid.validate();
  cfg.validate();
  require(tpm != nullptr || cfg.force_r.has_value(),
          "sample_async: needs a policy or a forced ratio");

  Trajectory traj;
  traj.grid = grid;
  traj.cond = c;
  traj.guidance = omega;
  Vec x = rng.normal_vec(field.dim());
  const int K = grid.steps();
  double t_star = grid[0];  // t*_0 = t_0 = 1

  int k = 0;
  while (k < cfg.k_max && k < K && grid[k + 1] >= cfg.sigma_min) {
    StepRecord rec;
    rec.k = k;
    rec.t_k = grid[k];
    rec.t_next = grid[k + 1];
    rec.t_star = t_star;
    rec.x_before = x;
    try {
      rec.v = guided_velocity(field, x, t_star, c, omega);
      rec.x0_hat = clean_estimate(x, grid[k], rec.v);
      if (cfg.force_r) {
        rec.r = *cfg.force_r;
      } else {
        const BetaParams bp =
            tpm->forward(TPMInput{x, rec.v, rec.x0_hat, t_star, c, k});
        rec.beta = bp;
        const double raw_r = cfg.stochastic ? beta_sample(bp, rng) : beta_mode(bp);
        // keep even the deterministic action strictly inside (0, 1) so its
        // log-density stays finite when the policy saturates
        rec.r = std::clamp(raw_r, kBetaSampleClamp, 1.0 - kBetaSampleClamp);
        rec.r_clamped = rec.r != raw_r;
        rec.log_prob = beta_log_prob(bp, rec.r);
      }
    } catch (const NumericError& e) {
      throw NumericError("sample_async: step " + std::to_string(k) + ": " + e.what());
    }
    rec.deviation = deviation_multiplier(rec.r, cfg) - 1.0;
    const double raw = pseudo_timestep_raw(grid[k], grid[k + 1], rec.r, cfg);
    rec.t_star_next = std::max(cfg.sigma_min, raw);
    rec.clamped = raw < cfg.sigma_min;
    // the latent advances on the unmodified grid interval
    x += (grid[k + 1] - grid[k]) * rec.v;
    rec.x_after = x;
    t_star = rec.t_star_next;
    traj.steps.push_back(std::move(rec));
    ++k;
  }

  // final Euler step: one more velocity conditioned at the last
  // pseudo-timestep carries the latent from t_k exactly to 0
  StepRecord fin;
  fin.k = k;
  fin.t_k = grid[k];
  fin.t_next = 0.0;
  fin.t_star = t_star;
  fin.t_star_next = t_star;
  fin.is_final = true;
  fin.x_before = x;
  try {
    fin.v = guided_velocity(field, x, t_star, c, omega);
  } catch (const NumericError& e) {
    throw NumericError("sample_async: final step: " + std::string(e.what()));
  }
  x -= grid[k] * fin.v;
  fin.x0_hat = x;
  fin.x_after = x;
  traj.steps.push_back(std::move(fin));
  traj.final_sample = x;
  traj.old_log_prob = traj.sum_log_prob();
  return traj;
}

Trajectory sample_alternative(const VelocityField& field, const TimeGrid& grid,
                              const Condition& c, double omega, double omega_mult,
                              RngStream& rng) {
  grid.validate();
  require(omega_mult >= 0.5 && omega_mult <= 1.5,
          "sample_alternative: multiplier must lie in [0.5, 1.5]");
  Trajectory traj;
  traj.grid = grid;
  traj.cond = c;
  traj.guidance = omega;
  Vec x = rng.normal_vec(field.dim());
  const int K = grid.steps();
  for (int k = 0; k < K; ++k) {
    StepRecord rec;
    rec.k = k;
    rec.t_k = grid[k];
    rec.t_next = grid[k + 1];
    rec.t_star = grid[k];
    rec.t_star_next = grid[k + 1];
    rec.r = omega_mult - 0.5;
    rec.deviation = omega_mult - 1.0;
    rec.x_before = x;
    rec.v = guided_velocity(field, x, grid[k], c, omega);
    rec.x0_hat = clean_estimate(x, grid[k], rec.v);
    x += (grid[k + 1] - grid[k]) * rec.v * omega_mult;
    rec.x_after = x;
    traj.steps.push_back(std::move(rec));
  }
  traj.final_sample = x;
  return traj;
}

Trajectory sample_alternative_policy(const VelocityField& field, const TpmPolicy& tpm,
                                     const TimeGrid& grid, const Condition& c,
                                     double omega, const AsyncConfig& cfg,
                                     RngStream& rng) {
  grid.validate();
  cfg.validate();
  Trajectory traj;
  traj.grid = grid;
  traj.cond = c;
  traj.guidance = omega;
  Vec x = rng.normal_vec(field.dim());
  const int K = grid.steps();
  for (int k = 0; k < K && k < cfg.k_max; ++k) {
    StepRecord rec;
    rec.k = k;
    rec.t_k = grid[k];
    rec.t_next = grid[k + 1];
    rec.t_star = grid[k];
    rec.t_star_next = grid[k + 1];
    rec.x_before = x;
    rec.v = guided_velocity(field, x, grid[k], c, omega);
    rec.x0_hat = clean_estimate(x, grid[k], rec.v);
    const BetaParams bp = tpm.forward(TPMInput{x, rec.v, rec.x0_hat, grid[k], c, k});
    rec.beta = bp;
    const double raw_r = cfg.stochastic ? beta_sample(bp, rng) : beta_mode(bp);
    rec.r = std::clamp(raw_r, kBetaSampleClamp, 1.0 - kBetaSampleClamp);
    rec.r_clamped = rec.r != raw_r;
    rec.log_prob = beta_log_prob(bp, rec.r);
    const double mult = deviation_multiplier(rec.r, cfg);
    rec.deviation = mult - 1.0;
    x += (grid[k + 1] - grid[k]) * rec.v * mult;
    rec.x_after = x;
    traj.steps.push_back(std::move(rec));
  }
  traj.final_sample = x;
  traj.old_log_prob = traj.sum_log_prob();
  return traj;
}

double mean_deviation(const std::vector<Trajectory>& trajectories) {
  require(!trajectories.empty(), "mean_deviation: empty trajectory list");
  double acc = 0.0;
  long n = 0;
  for (const Trajectory& t : trajectories)
    for (const StepRecord& s : t.steps)
      if (!s.is_final) {
        acc += s.deviation;
        ++n;
      }
  require(n > 0, "mean_deviation: no policy steps recorded");
  return acc / double(n);
}

namespace {

bool bits_equal(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) return false;
  return true;
}

bool bits_equal(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

}  // namespace

bool latents_bitwise_equal(const Trajectory& a, const Trajectory& b) {
  if (a.steps.size() != b.steps.size()) return false;
  if (!bits_equal(a.final_sample, b.final_sample)) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const StepRecord& sa = a.steps[i];
    const StepRecord& sb = b.steps[i];
    if (!bits_equal(sa.t_k, sb.t_k)) return false;
    if (!bits_equal(sa.x_before, sb.x_before)) return false;
    if (!bits_equal(sa.v, sb.v)) return false;
    if (!bits_equal(sa.x_after, sb.x_after)) return false;
  }
  return true;
}

}  // namespace af
