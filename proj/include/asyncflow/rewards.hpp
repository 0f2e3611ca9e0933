#pragma once

#include <string>
#include <vector>

#include "asyncflow/flow.hpp"

namespace af {

// Toy metric ensemble scored on final samples. Each metric is a pure
// function of (sample, condition, target); higher is better everywhere.
enum class MetricKind {
  target_logdensity,    // log-density under the conditioned target
  noise_penalty,        // negative high-frequency energy along coordinates
  condition_alignment,  // margin to the nearest wrong component mean
  neg_distance,         // negative distance to the conditioned mean
};

std::string metric_name(MetricKind kind);

double metric_target_logdensity(const Vec& y, const Condition& c, const MixtureSpec& target);
// Negative distance of the sample's high-frequency energy sum((y_{i+1}-y_i)^2)
// to a reference smoothness level. The default reference 0 reduces to the
// plain roughness penalty; a positive reference turns the metric into a
// detail-level target.
double metric_noise_penalty(const Vec& y, double reference_roughness = 0.0);
double metric_condition_alignment(const Vec& y, const Condition& c, const MixtureSpec& target);
double metric_neg_distance(const Vec& y, const Condition& c, const MixtureSpec& target);
double metric_score(MetricKind kind, const Vec& y, const Condition& c,
                    const MixtureSpec& target, double reference_roughness = 0.0);

struct RewardSpec {
  std::vector<MetricKind> metrics;  // equal weights 1/|metrics|
  MixtureSpec target;
  double eps_z = 1e-8;
  double noise_reference = 0.0;  // reference smoothness for the detail proxy

  int metric_count() const { return static_cast<int>(metrics.size()); }
  void validate() const;
  static RewardSpec default_four(MixtureSpec target);
};

struct BatchScores {
  std::vector<std::string> names;
  Mat raw;         // samples x metrics
  Mat normalized;  // filled by zscore_normalize
};

BatchScores score_batch(const RewardSpec& spec, const std::vector<Vec>& samples,
                        const std::vector<Condition>& conds);

// Per metric column: subtract the batch mean, divide by population std + eps.
// Requires at least two samples.
void zscore_normalize(BatchScores& scores, double eps_z);

// Per-sample mean over normalized metric columns.
Vec composite_reward(const BatchScores& scores);

// Frozen per-metric affine normalization, for composites that must stay
// comparable across separate runs (oracle sweeps vs. policy evaluation).
struct ScoreNormalizer {
  Vec mean;
  Vec stddev;
  double eps_z = 1e-8;

  static ScoreNormalizer fit(const Mat& raw, double eps_z);
  Vec composite(const Mat& raw) const;
};

}  // namespace af
