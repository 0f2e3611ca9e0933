#pragma once

#include <functional>
#include <vector>

#include "asyncflow/optim.hpp"
#include "asyncflow/rewards.hpp"
#include "asyncflow/sampler.hpp"

namespace af {

struct TrainConfig {
  int iterations = 500;
  int group_size = 16;
  int minibatch = 4;
  double clip_eps = 0.2;
  double lr = 1e-3;
  double grad_clip = 1.0;
  int epochs = 1;  // passes over each rollout group
  double eps_z = 1e-8;
  int checkpoint_every = 100;

  void validate() const {
    require(iterations > 0 && group_size >= 2 && minibatch > 0, "TrainConfig: bad sizes");
    require(group_size % minibatch == 0, "TrainConfig: minibatch must divide group size");
    require(clip_eps > 0.0 && clip_eps < 1.0, "TrainConfig: clip ratio must lie in (0, 1)");
    require(lr > 0.0 && grad_clip > 0.0 && epochs > 0 && eps_z > 0.0,
            "TrainConfig: bad optimizer settings");
  }
};

// One prompt, G trajectories rolled out with independent noise, scored and
// z-normalized inside the group. Old-policy log-probs are frozen at rollout
// time and never recomputed.
struct RolloutGroup {
  Condition cond;
  std::vector<Trajectory> trajectories;
  BatchScores scores;
  Vec rewards;  // group-normalized composite per trajectory
  double raw_metric_mean = 0.0;
};

// Sum of per-step Beta log-densities; the whole trajectory is one action.
double trajectory_log_prob(const Trajectory& traj);

// (R_i - mean) / (pop std + eps); requires at least two rewards.
Vec group_advantages(const Vec& rewards, double eps_z);

// Mean over the minibatch of min(ratio * A, clip(ratio, 1-eps, 1+eps) * A),
// with ratio = exp(logp_new - logp_old). Returned value is maximized; the
// training loss is its negation.
double ppo_clip_objective(const Vec& logp_new, const Vec& logp_old, const Vec& adv,
                          double clip_eps);

struct PpoTapeResult {
  Var objective;
  std::vector<double> ratios;
  int overflow_warnings = 0;  // log-prob gaps beyond +-30, clamped at the bound
};

PpoTapeResult ppo_clip_objective_on_tape(Tape& tape, const std::vector<Var>& logp_new,
                                         const Vec& logp_old, const Vec& adv,
                                         double clip_eps);

// Recompute the trajectory log-prob through the current policy, on tape, from
// the recorded per-step inputs and actions.
Var recompute_log_prob(Tape& tape, TpmPolicy& tpm, const Trajectory& traj);

// G stochastic rollouts sharing one condition, scored with group-internal
// z-normalization. Any rollout failure aborts the whole group.
RolloutGroup collect_group(const VelocityField& field, const TpmPolicy& tpm,
                           const TimeGrid& grid, const Condition& c, double omega,
                           const AsyncConfig& async, const RewardSpec& rewards,
                           int group_size, RngStream& rng);

struct TrainLogRow {
  int iter = 0;
  double mean_reward = 0.0;  // mean raw metric score over the group
  double mean_deviation = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct TrainStats {
  std::vector<TrainLogRow> rows;
  int skipped_groups = 0;
  int ratio_overflow_warnings = 0;
  int saturation_warnings = 0;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_log;
  std::function<void(int iter, TpmPolicy&, Adam&)> on_checkpoint;
  std::function<void(int iter, const RolloutGroup&)> on_group;
};

// GRPO over the frozen field and trainable policy: per iteration draw one
// condition, roll out a group, normalize advantages within it, then run
// PPO-clip epochs over minibatches with gradient-norm clipping and Adam.
TrainStats train_tpm(const VelocityField& field, TpmPolicy& tpm, const TimeGrid& grid,
                     double omega, const AsyncConfig& async, const RewardSpec& rewards,
                     const TrainConfig& cfg, RngStream rng, Adam* optimizer = nullptr,
                     const TrainHooks& hooks = {});

}  // namespace af
