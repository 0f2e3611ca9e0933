#pragma once

#include <optional>
#include <vector>

#include "asyncflow/grpo.hpp"
#include "asyncflow/rewards.hpp"
#include "asyncflow/sampler.hpp"

namespace af {

// Deterministic evaluation protocol: rollout i uses condition label
// i % n_classes and the stream seed/child(label)/child(i), so separate
// methods see identical noise (common random numbers).
struct EvalProtocol {
  int rollouts = 256;
  int n_classes = 2;
  std::uint64_t seed = 42;
  std::uint64_t stream_label = 0x45564c; // "EVL"
};

struct EvalResult {
  Mat raw;  // rollouts x metrics
  std::vector<Trajectory> trajectories;
  double mean_dev = 0.0;

  // mean frozen-normalizer composite over the rollouts
  double mean_composite(const ScoreNormalizer& n) const;
};

// tpm == nullptr and no forced ratio -> synchronous sampling. A forced ratio
// runs the async sampler without any policy. Otherwise the policy runs in
// deterministic Beta-mode (or stochastic when async.stochastic is set).
EvalResult eval_rollouts(const VelocityField& field, const TpmPolicy* tpm,
                         const TimeGrid& grid, double omega, const AsyncConfig& async,
                         const RewardSpec& rewards, const EvalProtocol& protocol);

// Async configuration that pins the per-step deviation to the constant d by
// choosing (gamma, force_r) with r inside [0, 1].
AsyncConfig constant_deviation_config(const AsyncConfig& base, double deviation);

struct DeviationOracle {
  std::vector<double> grid;         // scanned constant deviations
  std::vector<double> mean_reward;  // pooled-normalizer composite per grid point
  int best_index = 0;
  double best_deviation = 0.0;
  double best_reward = 0.0;
  ScoreNormalizer normalizer;  // fitted on the pooled sweep population
};

// Brute-force grid search over constant deviations: the independent oracle
// for what a trained policy should recover. All grid points share the
// evaluation protocol's noise streams, and the normalizer is fitted on the
// pooled raw scores so composites stay comparable across deviations and
// against later policy evaluations.
DeviationOracle deviation_oracle(const VelocityField& field, const TimeGrid& grid,
                                 double omega, const AsyncConfig& base,
                                 const RewardSpec& rewards,
                                 const std::vector<double>& dev_grid,
                                 const EvalProtocol& protocol);

}  // namespace af
