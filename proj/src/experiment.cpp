#include "asyncflow/experiment.hpp"

#include <cmath>

namespace af {

double EvalResult::mean_composite(const ScoreNormalizer& n) const {
  return n.composite(raw).mean();
}

EvalResult eval_rollouts(const VelocityField& field, const TpmPolicy* tpm,
                         const TimeGrid& grid, double omega, const AsyncConfig& async,
                         const RewardSpec& rewards, const EvalProtocol& protocol) {
  require(protocol.rollouts >= 2, "eval_rollouts: needs at least two rollouts");
  require(protocol.n_classes >= 1, "eval_rollouts: needs at least one class");
  rewards.validate();

  std::vector<Vec> finals;
  std::vector<Condition> conds;
  EvalResult out;
  out.trajectories.reserve(static_cast<std::size_t>(protocol.rollouts));
  RngStream base = RngStream::root(protocol.seed).child(protocol.stream_label);
  for (int i = 0; i < protocol.rollouts; ++i) {
    const Condition c = Condition::of(i % protocol.n_classes);
    RngStream rng = base.child(static_cast<std::uint64_t>(c.label))
                        .child(static_cast<std::uint64_t>(i));
    Trajectory traj;
    if (tpm == nullptr && !async.force_r) {
      traj = sample_sync(field, grid, c, omega, rng);
    } else {
      traj = sample_async(field, tpm, grid, c, omega, async, rng);
    }
    finals.push_back(traj.final_sample);
    conds.push_back(c);
    out.trajectories.push_back(std::move(traj));
  }
  out.raw = score_batch(rewards, finals, conds).raw;
  out.mean_dev = mean_deviation(out.trajectories);
  return out;
}

AsyncConfig constant_deviation_config(const AsyncConfig& base, double deviation) {
  AsyncConfig cfg = base;
  cfg.bound = BoundMode::standard;
  cfg.stochastic = false;
  cfg.gamma = std::max(1.0, 2.0 * std::abs(deviation));
  cfg.force_r = 0.5 + deviation / cfg.gamma;
  cfg.validate();
  return cfg;
}

DeviationOracle deviation_oracle(const VelocityField& field, const TimeGrid& grid,
                                 double omega, const AsyncConfig& base,
                                 const RewardSpec& rewards,
                                 const std::vector<double>& dev_grid,
                                 const EvalProtocol& protocol) {
  require(!dev_grid.empty(), "deviation_oracle: empty deviation grid");
  DeviationOracle oracle;
  oracle.grid = dev_grid;

  std::vector<Mat> raws;
  raws.reserve(dev_grid.size());
  for (double d : dev_grid) {
    const AsyncConfig cfg = constant_deviation_config(base, d);
    raws.push_back(
        eval_rollouts(field, nullptr, grid, omega, cfg, rewards, protocol).raw);
  }

  Mat pooled(static_cast<Eigen::Index>(raws.size()) * raws.front().rows(),
             raws.front().cols());
  for (std::size_t i = 0; i < raws.size(); ++i)
    pooled.middleRows(static_cast<Eigen::Index>(i) * raws.front().rows(),
                      raws.front().rows()) = raws[i];
  oracle.normalizer = ScoreNormalizer::fit(pooled, rewards.eps_z);

  oracle.mean_reward.resize(dev_grid.size());
  for (std::size_t i = 0; i < raws.size(); ++i) {
    oracle.mean_reward[i] = oracle.normalizer.composite(raws[i]).mean();
    if (oracle.mean_reward[i] > oracle.mean_reward[static_cast<std::size_t>(oracle.best_index)])
      oracle.best_index = static_cast<int>(i);
  }
  oracle.best_deviation = dev_grid[static_cast<std::size_t>(oracle.best_index)];
  oracle.best_reward = oracle.mean_reward[static_cast<std::size_t>(oracle.best_index)];
  return oracle;
}

}  // namespace af
