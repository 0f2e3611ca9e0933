#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "asyncflow/rewards.hpp"
#include "test_util.hpp"

using namespace af;

namespace {

MixtureSpec spread_mixture() {
  return MixtureSpec::two_component(Vec::Constant(2, -2.0), Vec::Constant(2, 2.0), 1.0);
}

}  // namespace

TEST_SUITE_BEGIN("rewards");

TEST_CASE("target log-density") {
  MixtureSpec mix = spread_mixture();

  SUBCASE("peak value at the component mean with unit covariance") {
    const double lp = metric_target_logdensity(Vec::Constant(2, 2.0), Condition::of(1), mix);
    CHECK(lp == doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-12));
  }
  SUBCASE("decreases monotonically along a ray from the mean") {
    Vec dir(2);
    dir << 1.0, -0.5;
    double prev = metric_target_logdensity(mix.means[0], Condition::of(0), mix);
    for (double s = 0.5; s < 6.0; s += 0.5) {
      const double cur =
          metric_target_logdensity(mix.means[0] + s * dir, Condition::of(0), mix);
      CHECK(cur < prev);
      prev = cur;
    }
  }
  SUBCASE("matches a direct density recomputation") {
    RngStream rng = RngStream::root(6);
    for (int rep = 0; rep < 20; ++rep) {
      const Vec y = 3.0 * rng.normal_vec(2);
      const int label = rep % 2;
      const Vec& mu = mix.means[static_cast<std::size_t>(label)];
      const Vec& var = mix.variances[static_cast<std::size_t>(label)];
      double expect = 0.0;
      for (int i = 0; i < 2; ++i)
        expect += -0.5 * std::log(2.0 * M_PI * var[i]) -
                  0.5 * (y[i] - mu[i]) * (y[i] - mu[i]) / var[i];
      CHECK(metric_target_logdensity(y, Condition::of(label), mix) ==
            doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("degenerate covariance is a configuration error") {
    MixtureSpec degenerate = MixtureSpec::point(Vec::Constant(2, 0.0));
    CHECK_THROWS_AS(
        metric_target_logdensity(Vec::Zero(2), Condition::of(0), degenerate),
        UsageError);
  }
}

TEST_CASE("noise penalty") {
  SUBCASE("constant vectors carry no penalty") {
    CHECK(metric_noise_penalty(Vec::Constant(5, 3.7)) == 0.0);
  }
  SUBCASE("alternating signs, d = 4") {
    Vec y(4);
    y << 1.0, -1.0, 1.0, -1.0;
    CHECK(metric_noise_penalty(y) == -12.0);
  }
  SUBCASE("invariant to constant shifts") {
    RngStream rng = RngStream::root(3);
    const Vec y = rng.normal_vec(6);
    const Vec shifted = y.array() + 17.5;
    CHECK(metric_noise_penalty(y) ==
          doctest::Approx(metric_noise_penalty(shifted)).epsilon(1e-12));
  }
  SUBCASE("needs at least two coordinates") {
    CHECK_THROWS_AS(metric_noise_penalty(Vec::Constant(1, 0.0)), UsageError);
  }
}

TEST_CASE("condition alignment") {
  MixtureSpec mix = spread_mixture();

  SUBCASE("at the conditioned mean the margin is the inter-mean distance") {
    const double margin =
        metric_condition_alignment(mix.means[1], Condition::of(1), mix);
    CHECK(margin == doctest::Approx((mix.means[1] - mix.means[0]).norm()).epsilon(1e-12));
  }
  SUBCASE("zero on the perpendicular bisector") {
    CHECK(metric_condition_alignment(Vec::Zero(2), Condition::of(0), mix) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("agrees with a brute-force scan over wrong means") {
    MixtureSpec three;
    three.means = {Vec::Constant(2, -2.0), Vec::Constant(2, 0.5), Vec::Constant(2, 3.0)};
    three.variances = {Vec::Constant(2, 1.0), Vec::Constant(2, 1.0), Vec::Constant(2, 1.0)};
    three.weights = {0.25, 0.5, 0.25};
    RngStream rng = RngStream::root(12);
    for (int rep = 0; rep < 30; ++rep) {
      const Vec y = 3.0 * rng.normal_vec(2);
      const int label = rep % 3;
      double nearest_wrong = 1e300;
      for (int j = 0; j < 3; ++j)
        if (j != label)
          nearest_wrong = std::min(nearest_wrong,
                                   (y - three.means[static_cast<std::size_t>(j)]).norm());
      const double expect =
          nearest_wrong - (y - three.means[static_cast<std::size_t>(label)]).norm();
      CHECK(metric_condition_alignment(y, Condition::of(label), three) ==
            doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("null condition is a domain error") {
    CHECK_THROWS_AS(metric_condition_alignment(Vec::Zero(2), Condition::null_cond(), mix),
                    UsageError);
  }
}

TEST_CASE("z-score normalization") {
  RewardSpec spec = RewardSpec::default_four(spread_mixture());

  SUBCASE("the [1, 2, 3] column normalizes with the population std") {
    BatchScores scores;
    scores.names = {"m"};
    scores.raw = Mat(3, 1);
    scores.raw << 1.0, 2.0, 3.0;
    zscore_normalize(scores, 1e-12);  // negligible eps isolates the std choice
    const double expected = std::sqrt(1.5);  // 1 / population std
    CHECK(std::abs(scores.normalized(0, 0) + expected) < 1e-9);
    CHECK(std::abs(scores.normalized(1, 0)) < 1e-9);
    CHECK(std::abs(scores.normalized(2, 0) - expected) < 1e-9);

    zscore_normalize(scores, 1e-8);  // the default eps shifts it only at 1e-8
    CHECK(std::abs(scores.normalized(0, 0) + expected) < 1e-7);
  }
  SUBCASE("constant columns collapse to zero") {
    BatchScores scores;
    scores.names = {"m"};
    scores.raw = Mat::Constant(4, 1, 2.5);
    zscore_normalize(scores, 1e-8);
    CHECK(scores.normalized.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("normalized columns have zero mean and unit variance") {
    RngStream rng = RngStream::root(9);
    BatchScores scores;
    scores.names = {"a", "b"};
    scores.raw = aft::random_mat(64, 2, rng, 3.0);
    zscore_normalize(scores, 1e-8);
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(scores.normalized.col(j).mean()) < 1e-12);
      const double var = scores.normalized.col(j).squaredNorm() / 64.0;
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
  SUBCASE("a single sample is a domain error") {
    BatchScores scores;
    scores.raw = Mat::Constant(1, 1, 1.0);
    CHECK_THROWS_AS(zscore_normalize(scores, 1e-8), UsageError);
  }
  (void)spec;
}

TEST_CASE("composite reward") {
  SUBCASE("identical metrics reduce to any single column") {
    BatchScores scores;
    scores.names = {"a", "b"};
    scores.raw = Mat(4, 2);
    scores.raw << 1, 1, 2, 2, 3, 3, 4, 4;
    zscore_normalize(scores, 1e-8);
    const Vec composite = composite_reward(scores);
    CHECK((composite - scores.normalized.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("perfectly anti-correlated metrics cancel") {
    BatchScores scores;
    scores.names = {"a", "b"};
    scores.raw = Mat(4, 2);
    scores.raw << 1, 4, 2, 3, 3, 2, 4, 1;
    zscore_normalize(scores, 1e-8);
    CHECK(composite_reward(scores).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("equals the quarter-weighted sum for four metrics") {
    RngStream rng = RngStream::root(15);
    BatchScores scores;
    scores.names = {"a", "b", "c", "d"};
    scores.raw = aft::random_mat(16, 4, rng, 2.0);
    zscore_normalize(scores, 1e-8);
    const Vec composite = composite_reward(scores);
    for (int i = 0; i < 16; ++i) {
      double manual = 0.0;
      for (int j = 0; j < 4; ++j) manual += 0.25 * scores.normalized(i, j);
      CHECK(composite[i] == doctest::Approx(manual).epsilon(1e-12));
    }
  }
  SUBCASE("composite rewards sum to zero within a batch") {
    RngStream rng = RngStream::root(16);
    BatchScores scores;
    scores.names = {"a", "b", "c"};
    scores.raw = aft::random_mat(32, 3, rng, 5.0);
    zscore_normalize(scores, 1e-8);
    CHECK(std::abs(composite_reward(scores).sum()) < 1e-10);
  }
}

TEST_CASE("score_batch evaluates the ensemble on final samples") {
  RewardSpec spec = RewardSpec::default_four(spread_mixture());
  RngStream rng = RngStream::root(44);
  std::vector<Vec> samples;
  std::vector<Condition> conds;
  for (int i = 0; i < 8; ++i) {
    samples.push_back(rng.normal_vec(2));
    conds.push_back(Condition::of(i % 2));
  }
  BatchScores scores = score_batch(spec, samples, conds);
  REQUIRE(scores.raw.rows() == 8);
  REQUIRE(scores.raw.cols() == 4);
  CHECK(scores.names == std::vector<std::string>{"logdensity", "noise_penalty",
                                                 "alignment", "neg_distance"});
  for (int i = 0; i < 8; ++i) {
    CHECK(scores.raw(i, 0) == metric_target_logdensity(samples[static_cast<std::size_t>(i)],
                                                       conds[static_cast<std::size_t>(i)],
                                                       spec.target));
    CHECK(scores.raw(i, 3) ==
          -(samples[static_cast<std::size_t>(i)] -
            spec.target.means[static_cast<std::size_t>(i % 2)])
               .norm());
  }
}

TEST_CASE("composite ranking is invariant to positive affine raw rescaling") {
  RewardSpec spec = RewardSpec::default_four(spread_mixture());
  RngStream rng = RngStream::root(77);
  std::vector<Vec> samples;
  std::vector<Condition> conds;
  for (int i = 0; i < 24; ++i) {
    samples.push_back(2.5 * rng.normal_vec(2));
    conds.push_back(Condition::of(i % 2));
  }
  BatchScores scores = score_batch(spec, samples, conds);
  zscore_normalize(scores, 1e-8);
  const Vec base = composite_reward(scores);

  BatchScores rescaled = scores;
  for (int j = 0; j < 4; ++j)
    rescaled.raw.col(j) = (3.0 + j) * scores.raw.col(j).array() + 11.0 * (j + 1);
  zscore_normalize(rescaled, 1e-8);
  const Vec scaled = composite_reward(rescaled);

  Eigen::Index arg_base, arg_scaled;
  base.maxCoeff(&arg_base);
  scaled.maxCoeff(&arg_scaled);
  CHECK(arg_base == arg_scaled);
  CHECK((base - scaled).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("frozen normalizer keeps composites comparable across batches") {
  RngStream rng = RngStream::root(81);
  Mat pop = aft::random_mat(128, 3, rng, 2.0);
  ScoreNormalizer norm = ScoreNormalizer::fit(pop, 1e-8);
  CHECK(std::abs(norm.composite(pop).mean()) < 1e-12);

  // shifting a batch up in every metric raises its composite
  Mat better = pop.topRows(16);
  better.array() += 1.0;
  CHECK(norm.composite(better).mean() > norm.composite(pop.topRows(16)).mean());
}

TEST_SUITE_END();
