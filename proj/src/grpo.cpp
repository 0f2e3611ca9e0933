#include "asyncflow/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>

namespace af {

namespace {

constexpr double kLogRatioCap = 30.0;

}  // namespace

double trajectory_log_prob(const Trajectory& traj) {
  require(!traj.steps.empty(), "trajectory_log_prob: empty trajectory");
  double acc = 0.0;
  for (const StepRecord& s : traj.steps) {
    if (s.is_final) continue;
    require(s.beta.has_value(), "trajectory_log_prob: step lacks Beta parameters");
    acc += beta_log_prob(*s.beta, s.r);
  }
  return acc;
}

Vec group_advantages(const Vec& rewards, double eps_z) {
  if (rewards.size() < 2) throw UsageError("group_advantages: needs at least two rewards");
  const double mean = rewards.mean();
  const double var = (rewards.array() - mean).square().sum() / double(rewards.size());
  return (rewards.array() - mean) / (std::sqrt(var) + eps_z);
}

double ppo_clip_objective(const Vec& logp_new, const Vec& logp_old, const Vec& adv,
                          double clip_eps) {
  require(logp_new.size() == logp_old.size() && logp_new.size() == adv.size(),
          "ppo_clip_objective: size mismatch");
  require(logp_new.size() > 0, "ppo_clip_objective: empty minibatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logp_new.size(); ++i) {
    const double gap = std::clamp(logp_new[i] - logp_old[i], -kLogRatioCap, kLogRatioCap);
    const double ratio = std::exp(gap);
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    acc += std::min(ratio * adv[i], clipped * adv[i]);
  }
  return acc / double(logp_new.size());
}

PpoTapeResult ppo_clip_objective_on_tape(Tape& tape, const std::vector<Var>& logp_new,
                                         const Vec& logp_old, const Vec& adv,
                                         double clip_eps) {
  require(static_cast<Eigen::Index>(logp_new.size()) == logp_old.size() &&
              logp_old.size() == adv.size(),
          "ppo_clip_objective_on_tape: size mismatch");
  require(!logp_new.empty(), "ppo_clip_objective_on_tape: empty minibatch");
  PpoTapeResult out;
  std::vector<Var> terms;
  for (std::size_t i = 0; i < logp_new.size(); ++i) {
    const Eigen::Index ei = static_cast<Eigen::Index>(i);
    Var gap = tape.add_scalar(logp_new[i], -logp_old[ei]);
    if (std::abs(gap.scalar()) > kLogRatioCap) ++out.overflow_warnings;
    Var ratio = tape.exp(tape.clamp(gap, -kLogRatioCap, kLogRatioCap));
    out.ratios.push_back(ratio.scalar());
    Var unclipped = tape.scale(ratio, adv[ei]);
    Var clipped = tape.scale(tape.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv[ei]);
    terms.push_back(tape.min2(unclipped, clipped));
  }
  out.objective = tape.scale(tape.sum(terms), 1.0 / double(terms.size()));
  return out;
}

Var recompute_log_prob(Tape& tape, TpmPolicy& tpm, const Trajectory& traj) {
  std::vector<Var> parts;
  for (const StepRecord& s : traj.steps) {
    if (s.is_final) continue;
    require(s.beta.has_value(), "recompute_log_prob: step lacks Beta parameters");
    auto [alpha, beta] = tpm.forward_on_tape(
        tape, TPMInput{s.x_before, s.v, s.x0_hat, s.t_star, traj.cond, s.k});
    parts.push_back(tape.beta_log_prob(alpha, beta, s.r));
  }
  require(!parts.empty(), "recompute_log_prob: trajectory has no policy steps");
  return tape.sum(parts);
}

RolloutGroup collect_group(const VelocityField& field, const TpmPolicy& tpm,
                           const TimeGrid& grid, const Condition& c, double omega,
                           const AsyncConfig& async, const RewardSpec& rewards,
                           int group_size, RngStream& rng) {
  require(group_size >= 2, "collect_group: group size must be at least 2");
  require(async.stochastic, "collect_group: rollouts must sample stochastically");
  RolloutGroup group;
  group.cond = c;
  group.trajectories.reserve(static_cast<std::size_t>(group_size));
  for (int g = 0; g < group_size; ++g) {
    RngStream traj_rng = rng.child(static_cast<std::uint64_t>(g));
    group.trajectories.push_back(
        sample_async(field, &tpm, grid, c, omega, async, traj_rng));
  }
  if (async.batch_sync_termination) {
    const std::size_t n0 = group.trajectories.front().steps.size();
    for (const Trajectory& t : group.trajectories)
      require(t.steps.size() == n0,
              "collect_group: members terminated at different steps under "
              "batch-synchronized termination");
  }

  std::vector<Vec> finals;
  std::vector<Condition> conds(static_cast<std::size_t>(group_size), c);
  for (const Trajectory& t : group.trajectories) finals.push_back(t.final_sample);
  group.scores = score_batch(rewards, finals, conds);
  zscore_normalize(group.scores, rewards.eps_z);
  group.rewards = composite_reward(group.scores);
  group.raw_metric_mean = group.scores.raw.mean();
  for (int g = 0; g < group_size; ++g) {
    Trajectory& t = group.trajectories[static_cast<std::size_t>(g)];
    t.reward = group.rewards[g];
    t.old_log_prob = t.sum_log_prob();
  }
  return group;
}

TrainStats train_tpm(const VelocityField& field, TpmPolicy& tpm, const TimeGrid& grid,
                     double omega, const AsyncConfig& async, const RewardSpec& rewards,
                     const TrainConfig& cfg, RngStream rng, Adam* optimizer,
                     const TrainHooks& hooks) {
  cfg.validate();
  require(async.stochastic, "train_tpm: training rollouts must be stochastic");
  require(!async.force_r, "train_tpm: cannot train with a pinned ratio");
  rewards.validate();

  std::unique_ptr<Adam> local;
  if (!optimizer) {
    local = std::make_unique<Adam>(tpm.store(), AdamConfig{cfg.lr});
    optimizer = local.get();
  }

  TrainStats stats;
  const double dev_bound =
      (async.bound == BoundMode::standard ? 0.5 : 1.0) * async.gamma;
  int saturated_run = 0;

  const int n_classes = tpm.config().n_classes;
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    RngStream iter_rng = rng.child(static_cast<std::uint64_t>(iter));
    const Condition c = Condition::of(iter_rng.uniform_int(n_classes));

    RolloutGroup group;
    try {
      RngStream roll_rng = iter_rng.child(1);
      group = collect_group(field, tpm, grid, c, omega, async, rewards,
                            cfg.group_size, roll_rng);
    } catch (const NumericError& e) {
      ++stats.skipped_groups;
      std::cerr << "train_tpm: iteration " << iter << " skipped: " << e.what() << "\n";
      continue;
    }
    if (hooks.on_group) hooks.on_group(iter, group);

    const Vec adv = group_advantages(group.rewards, cfg.eps_z);

    Vec logp_old(cfg.group_size);
    for (int g = 0; g < cfg.group_size; ++g)
      logp_old[g] = group.trajectories[static_cast<std::size_t>(g)].old_log_prob;

    std::vector<int> order(static_cast<std::size_t>(cfg.group_size));
    for (int g = 0; g < cfg.group_size; ++g) order[static_cast<std::size_t>(g)] = g;

    double clip_count = 0.0, ratio_count = 0.0, last_grad_norm = 0.0;
    RngStream shuffle_rng = iter_rng.child(2);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (int i = cfg.group_size - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(shuffle_rng.uniform_int(i + 1))]);
      for (int start = 0; start < cfg.group_size; start += cfg.minibatch) {
        Tape tape;
        std::vector<Var> logp_new;
        Vec mb_old(cfg.minibatch), mb_adv(cfg.minibatch);
        for (int j = 0; j < cfg.minibatch; ++j) {
          const int idx = order[static_cast<std::size_t>(start + j)];
          logp_new.push_back(recompute_log_prob(
              tape, tpm, group.trajectories[static_cast<std::size_t>(idx)]));
          mb_old[j] = logp_old[idx];
          mb_adv[j] = adv[idx];
        }
        PpoTapeResult ppo =
            ppo_clip_objective_on_tape(tape, logp_new, mb_old, mb_adv, cfg.clip_eps);
        stats.ratio_overflow_warnings += ppo.overflow_warnings;
        for (double r : ppo.ratios) {
          ratio_count += 1.0;
          if (r < 1.0 - cfg.clip_eps || r > 1.0 + cfg.clip_eps) clip_count += 1.0;
        }
        Var loss = tape.neg(ppo.objective);
        tape.backward(loss);
        last_grad_norm = global_grad_norm(tpm.store());
        clip_global_norm(tpm.store(), cfg.grad_clip);
        optimizer->step();
      }
    }

    TrainLogRow row;
    row.iter = iter;
    row.mean_reward = group.raw_metric_mean;
    row.mean_deviation = mean_deviation(group.trajectories);
    row.clip_fraction = ratio_count > 0.0 ? clip_count / ratio_count : 0.0;
    row.grad_norm = last_grad_norm;
    row.lr = optimizer->config().lr;
    stats.rows.push_back(row);
    if (hooks.on_log) hooks.on_log(row);

    // divergence guard: persistent saturation of the deviation bound
    double mean_abs_dev = 0.0;
    long n_steps = 0;
    for (const Trajectory& t : group.trajectories)
      for (const StepRecord& s : t.steps)
        if (!s.is_final) {
          mean_abs_dev += std::abs(s.deviation);
          ++n_steps;
        }
    mean_abs_dev /= std::max(1L, n_steps);
    if (dev_bound > 0.0 && mean_abs_dev >= 0.95 * dev_bound) {
      if (++saturated_run == 50) {
        ++stats.saturation_warnings;
        std::cerr << "train_tpm: mean |deviation| has saturated its bound for 50 "
                     "consecutive iterations (iteration " << iter << ")\n";
        saturated_run = 0;
      }
    } else {
      saturated_run = 0;
    }

    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 &&
        (iter + 1) % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(iter + 1, tpm, *optimizer);
  }
  return stats;
}

}  // namespace af
