#include "asyncflow/rewards.hpp"

#include <cmath>
#include <limits>

namespace af {

std::string metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::target_logdensity: return "logdensity";
    case MetricKind::noise_penalty: return "noise_penalty";
    case MetricKind::condition_alignment: return "alignment";
    case MetricKind::neg_distance: return "neg_distance";
  }
  throw UsageError("unknown metric kind");
}

double metric_target_logdensity(const Vec& y, const Condition& c,
                                const MixtureSpec& target) {
  if (c.is_null()) return target.log_density(y);
  require(c.label < target.components(), "metric: condition label out of range");
  return target.component_log_density(y, c.label);
}

double metric_noise_penalty(const Vec& y, double reference_roughness) {
  require(y.size() >= 2, "metric_noise_penalty: needs dimension >= 2");
  require(reference_roughness >= 0.0,
          "metric_noise_penalty: reference roughness must be >= 0");
  double acc = 0.0;
  for (Eigen::Index i = 0; i + 1 < y.size(); ++i) {
    const double gap = y[i + 1] - y[i];
    acc += gap * gap;
  }
  return -std::abs(acc - reference_roughness);
}

double metric_condition_alignment(const Vec& y, const Condition& c,
                                  const MixtureSpec& target) {
  if (c.is_null()) throw UsageError("metric_condition_alignment: null condition");
  require(c.label < target.components(), "metric: condition label out of range");
  const double own = (y - target.means[static_cast<std::size_t>(c.label)]).norm();
  double nearest_wrong = std::numeric_limits<double>::infinity();
  for (int j = 0; j < target.components(); ++j) {
    if (j == c.label) continue;
    nearest_wrong =
        std::min(nearest_wrong, (y - target.means[static_cast<std::size_t>(j)]).norm());
  }
  require(std::isfinite(nearest_wrong),
          "metric_condition_alignment: needs at least two components");
  return nearest_wrong - own;
}

double metric_neg_distance(const Vec& y, const Condition& c, const MixtureSpec& target) {
  if (c.is_null()) throw UsageError("metric_neg_distance: null condition");
  require(c.label < target.components(), "metric: condition label out of range");
  return -(y - target.means[static_cast<std::size_t>(c.label)]).norm();
}

double metric_score(MetricKind kind, const Vec& y, const Condition& c,
                    const MixtureSpec& target, double reference_roughness) {
  switch (kind) {
    case MetricKind::target_logdensity: return metric_target_logdensity(y, c, target);
    case MetricKind::noise_penalty: return metric_noise_penalty(y, reference_roughness);
    case MetricKind::condition_alignment: return metric_condition_alignment(y, c, target);
    case MetricKind::neg_distance: return metric_neg_distance(y, c, target);
  }
  throw UsageError("unknown metric kind");
}

void RewardSpec::validate() const {
  require(!metrics.empty(), "RewardSpec: needs at least one metric");
  require(eps_z > 0.0, "RewardSpec: eps_z must be positive");
  require(noise_reference >= 0.0, "RewardSpec: noise reference must be >= 0");
  target.validate();
}

RewardSpec RewardSpec::default_four(MixtureSpec target) {
  RewardSpec spec;
  spec.metrics = {MetricKind::target_logdensity, MetricKind::noise_penalty,
                  MetricKind::condition_alignment, MetricKind::neg_distance};
  spec.target = std::move(target);
  return spec;
}

BatchScores score_batch(const RewardSpec& spec, const std::vector<Vec>& samples,
                        const std::vector<Condition>& conds) {
  spec.validate();
  require(samples.size() == conds.size(), "score_batch: sample/condition count mismatch");
  require(!samples.empty(), "score_batch: empty batch");
  BatchScores out;
  out.raw = Mat(static_cast<Eigen::Index>(samples.size()), spec.metric_count());
  for (MetricKind k : spec.metrics) out.names.push_back(metric_name(k));
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (int j = 0; j < spec.metric_count(); ++j)
      out.raw(static_cast<Eigen::Index>(i), j) =
          metric_score(spec.metrics[static_cast<std::size_t>(j)], samples[i], conds[i],
                       spec.target, spec.noise_reference);
  check_finite(out.raw, "raw metric scores");
  return out;
}

void zscore_normalize(BatchScores& scores, double eps_z) {
  const Eigen::Index n = scores.raw.rows();
  if (n < 2) throw UsageError("zscore_normalize: needs at least two samples");
  scores.normalized.resize(n, scores.raw.cols());
  for (Eigen::Index j = 0; j < scores.raw.cols(); ++j) {
    const double mean = scores.raw.col(j).mean();
    const double var = (scores.raw.col(j).array() - mean).square().sum() / double(n);
    scores.normalized.col(j) =
        (scores.raw.col(j).array() - mean) / (std::sqrt(var) + eps_z);
  }
}

Vec composite_reward(const BatchScores& scores) {
  require(scores.normalized.size() > 0, "composite_reward: normalize first");
  return scores.normalized.rowwise().mean();
}

ScoreNormalizer ScoreNormalizer::fit(const Mat& raw, double eps_z) {
  require(raw.rows() >= 2, "ScoreNormalizer: needs at least two samples");
  ScoreNormalizer n;
  n.eps_z = eps_z;
  n.mean = raw.colwise().mean();
  n.stddev.resize(raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    n.stddev[j] = std::sqrt(
        (raw.col(j).array() - n.mean[j]).square().sum() / double(raw.rows()));
  return n;
}

Vec ScoreNormalizer::composite(const Mat& raw) const {
  require(raw.cols() == mean.size(), "ScoreNormalizer: metric count mismatch");
  Vec out = Vec::Zero(raw.rows());
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    out += ((raw.col(j).array() - mean[j]) / (stddev[j] + eps_z)).matrix();
  return out / double(raw.cols());
}

}  // namespace af
