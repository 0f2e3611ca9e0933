#include <doctest.h>

#include <cmath>

#include "asyncflow/grpo.hpp"
#include "asyncflow/io.hpp"
#include "test_util.hpp"

using namespace af;

namespace {

struct GrpoFixture {
  MixtureSpec mix;
  MixtureField field;
  TpmPolicy tpm;
  TimeGrid grid;
  AsyncConfig async;
  RewardSpec rewards;

  GrpoFixture()
      : mix(MixtureSpec::two_component(Vec::Constant(2, -1.5), Vec::Constant(2, 1.5),
                                       0.25)),
        field(mix),
        tpm(make_tpm()),
        grid(TimeGrid::uniform(6)),
        rewards(RewardSpec::default_four(mix)) {
    async.k_max = 6;
    async.stochastic = true;
  }

  static TpmPolicy make_tpm() {
    TPMConfig cfg;
    cfg.dim = 2;
    cfg.patch = 4;
    cfg.width = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ff_width = 24;
    cfg.global_tokens = 2;
    cfg.n_classes = 2;
    cfg.k_max = 6;
    RngStream rng = RngStream::root(1001);
    TpmPolicy tpm = TpmPolicy::init(cfg, rng);
    // a slightly asymmetric readout so ratios and advantages are non-trivial
    tpm.store().value("tpm.head.w2") = aft::random_mat(cfg.width, 2, rng, 0.15);
    return tpm;
  }
};

}  // namespace

TEST_SUITE_BEGIN("grpo");

TEST_CASE("trajectory_log_prob") {
  SUBCASE("single step with the symmetric Beta at its mode") {
    Trajectory traj;
    StepRecord s;
    s.beta = BetaParams{2.0, 2.0};
    s.r = 0.5;
    traj.steps = {s};
    CHECK(trajectory_log_prob(traj) == doctest::Approx(std::log(1.5)).epsilon(1e-14));
  }
  SUBCASE("concatenation is additive") {
    StepRecord a;
    a.beta = BetaParams{3.0, 2.0};
    a.r = 0.4;
    StepRecord b;
    b.beta = BetaParams{2.5, 4.0};
    b.r = 0.7;
    Trajectory ta, tb, tab;
    ta.steps = {a};
    tb.steps = {b};
    tab.steps = {a, b};
    CHECK(trajectory_log_prob(tab) ==
          doctest::Approx(trajectory_log_prob(ta) + trajectory_log_prob(tb))
              .epsilon(1e-14));
  }
  SUBCASE("matches per-step densities summed independently") {
    RngStream rng = RngStream::root(5);
    Trajectory traj;
    double expect = 0.0;
    for (int i = 0; i < 7; ++i) {
      StepRecord s;
      s.beta = BetaParams{1.0 + 5.0 * rng.uniform(), 1.0 + 5.0 * rng.uniform()};
      s.r = 0.05 + 0.9 * rng.uniform();
      expect += beta_log_prob(*s.beta, s.r);
      traj.steps.push_back(s);
    }
    StepRecord fin;
    fin.is_final = true;
    traj.steps.push_back(fin);
    CHECK(trajectory_log_prob(traj) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("group_advantages") {
  SUBCASE("equal rewards vanish") {
    CHECK(group_advantages(Vec::Constant(4, 2.2), 1e-8).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("two-reward case against hand arithmetic") {
    Vec r(2);
    r << 0.0, 1.0;
    const Vec adv = group_advantages(r, 1e-12);
    CHECK(adv[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(adv[1] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("advantages always sum to zero") {
    RngStream rng = RngStream::root(7);
    for (int rep = 0; rep < 20; ++rep) {
      Vec r(16);
      for (int i = 0; i < 16; ++i) r[i] = 3.0 * rng.normal();
      const Vec adv = group_advantages(r, 1e-8);
      CHECK(std::abs(adv.sum()) < 1e-12);
      const double var = adv.squaredNorm() / 16.0;
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
  SUBCASE("needs at least two rewards") {
    CHECK_THROWS_AS(group_advantages(Vec::Constant(1, 1.0), 1e-8), UsageError);
  }
}

TEST_CASE("ppo_clip_objective") {
  SUBCASE("on-policy identity") {
    Vec lp = Vec::Constant(3, -1.7);
    Vec adv(3);
    adv << 0.5, -0.25, 1.0;
    for (double eps : {0.1, 0.2, 0.5})
      CHECK(ppo_clip_objective(lp, lp, adv, eps) ==
            doctest::Approx(adv.mean()).epsilon(1e-14));
  }
  SUBCASE("positive advantage clips above") {
    Vec lpn = Vec::Constant(1, std::log(1.5));
    Vec lpo = Vec::Constant(1, 0.0);
    Vec adv = Vec::Constant(1, 1.0);
    CHECK(ppo_clip_objective(lpn, lpo, adv, 0.2) == doctest::Approx(1.2).epsilon(1e-12));
  }
  SUBCASE("negative advantage clips below") {
    Vec lpn = Vec::Constant(1, std::log(0.5));
    Vec lpo = Vec::Constant(1, 0.0);
    Vec adv = Vec::Constant(1, -1.0);
    CHECK(ppo_clip_objective(lpn, lpo, adv, 0.2) ==
          doctest::Approx(-0.8).epsilon(1e-12));
  }
  SUBCASE("clip is inert when all ratios are inside the trust region") {
    RngStream rng = RngStream::root(8);
    for (int rep = 0; rep < 10; ++rep) {
      Vec lpo(4), lpn(4), adv(4);
      for (int i = 0; i < 4; ++i) {
        lpo[i] = rng.normal();
        lpn[i] = lpo[i] + 0.15 * (2.0 * rng.uniform() - 1.0);  // ratio in [0.86, 1.16]
        adv[i] = rng.normal();
      }
      double unclipped = 0.0;
      for (int i = 0; i < 4; ++i) unclipped += std::exp(lpn[i] - lpo[i]) * adv[i];
      unclipped /= 4.0;
      CHECK(ppo_clip_objective(lpn, lpo, adv, 0.2) ==
            doctest::Approx(unclipped).epsilon(1e-12));
    }
  }
}

TEST_CASE("clipped regions carry exactly zero gradient") {
  GrpoFixture fx;
  RngStream roll_rng = RngStream::root(2002);
  AsyncConfig async = fx.async;
  RolloutGroup group = collect_group(fx.field, fx.tpm, fx.grid, Condition::of(0), 1.5,
                                     async, fx.rewards, 4, roll_rng);

  // saturate the clip by faking old log-probs far away from the recomputed
  // ones: positive advantage with ratio >> 1+eps and negative with << 1-eps
  Tape tape;
  std::vector<Var> lpn;
  Vec lpo(4), adv(4);
  for (int g = 0; g < 4; ++g) {
    lpn.push_back(recompute_log_prob(tape, fx.tpm, group.trajectories[static_cast<std::size_t>(g)]));
    const double actual = lpn.back().scalar();
    if (g % 2 == 0) {
      lpo[g] = actual - 1.0;  // ratio e^1 > 1.2
      adv[g] = +1.3;
    } else {
      lpo[g] = actual + 1.0;  // ratio e^-1 < 0.8
      adv[g] = -0.7;
    }
  }
  PpoTapeResult ppo = ppo_clip_objective_on_tape(tape, lpn, lpo, adv, 0.2);
  tape.backward(tape.neg(ppo.objective));
  for (const auto& [name, e] : fx.tpm.store().entries())
    CHECK(e.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ppo gradient matches finite differences away from the clip") {
  GrpoFixture fx;
  RngStream roll_rng = RngStream::root(2003);
  RolloutGroup group = collect_group(fx.field, fx.tpm, fx.grid, Condition::of(1), 1.5,
                                     fx.async, fx.rewards, 4, roll_rng);
  Vec lpo(4), adv(4);
  for (int g = 0; g < 4; ++g) {
    lpo[g] = group.trajectories[static_cast<std::size_t>(g)].old_log_prob;
    adv[g] = 0.3 * (g - 1.5);
  }
  auto loss_fn = [&](Tape& t) {
    std::vector<Var> lpn;
    for (int g = 0; g < 4; ++g)
      lpn.push_back(
          recompute_log_prob(t, fx.tpm, group.trajectories[static_cast<std::size_t>(g)]));
    return t.neg(ppo_clip_objective_on_tape(t, lpn, lpo, adv, 0.2).objective);
  };
  RngStream coord_rng = RngStream::root(2004);
  CHECK(aft::fd_max_rel_error(fx.tpm.store(), loss_fn, coord_rng, 2) < 1e-5);
}

TEST_CASE("collect_group") {
  GrpoFixture fx;
  RngStream roll_rng = RngStream::root(3001);
  RolloutGroup group = collect_group(fx.field, fx.tpm, fx.grid, Condition::of(0), 1.5,
                                     fx.async, fx.rewards, 8, roll_rng);

  SUBCASE("distinct seeds give distinct trajectories") {
    bool any_equal = false;
    for (int a = 0; a < 8; ++a)
      for (int b = a + 1; b < 8; ++b)
        any_equal = any_equal ||
                    latents_bitwise_equal(group.trajectories[static_cast<std::size_t>(a)],
                                          group.trajectories[static_cast<std::size_t>(b)]);
    CHECK_FALSE(any_equal);
  }
  SUBCASE("group composite rewards are zero-mean") {
    CHECK(std::abs(group.rewards.sum()) < 1e-10);
  }
  SUBCASE("old log-probs are frozen at rollout values") {
    for (const Trajectory& t : group.trajectories)
      CHECK(t.old_log_prob == t.sum_log_prob());
  }
  SUBCASE("group statistics recompute from raw trajectory dumps") {
    std::vector<Vec> finals;
    std::vector<Condition> conds;
    for (const Trajectory& t : group.trajectories) {
      const Trajectory parsed = trajectory_from_jsonl(trajectory_to_jsonl(t));
      finals.push_back(parsed.final_sample);
      conds.push_back(parsed.cond);
    }
    BatchScores scores = score_batch(fx.rewards, finals, conds);
    zscore_normalize(scores, fx.rewards.eps_z);
    const Vec recomputed = composite_reward(scores);
    for (int g = 0; g < 8; ++g)
      CHECK(recomputed[g] ==
            doctest::Approx(group.trajectories[static_cast<std::size_t>(g)].reward)
                .epsilon(1e-12));
  }
}

TEST_CASE("recomputed log-probs reproduce rollout values exactly") {
  GrpoFixture fx;
  RngStream roll_rng = RngStream::root(3002);
  RolloutGroup group = collect_group(fx.field, fx.tpm, fx.grid, Condition::of(1), 1.5,
                                     fx.async, fx.rewards, 4, roll_rng);
  Tape tape;
  for (const Trajectory& traj : group.trajectories) {
    Var lp = recompute_log_prob(tape, fx.tpm, traj);
    CHECK(std::abs(lp.scalar() - traj.old_log_prob) < 1e-10);
    const double ratio = std::exp(lp.scalar() - traj.old_log_prob);
    CHECK(std::abs(ratio - 1.0) < 1e-10);
  }
}

TEST_CASE("zero advantages leave the policy untouched") {
  GrpoFixture fx;
  RngStream roll_rng = RngStream::root(3003);
  RolloutGroup group = collect_group(fx.field, fx.tpm, fx.grid, Condition::of(0), 1.5,
                                     fx.async, fx.rewards, 4, roll_rng);
  const auto before = fx.tpm.store().entries();

  Tape tape;
  std::vector<Var> lpn;
  Vec lpo(4);
  for (int g = 0; g < 4; ++g) {
    lpn.push_back(recompute_log_prob(tape, fx.tpm,
                                     group.trajectories[static_cast<std::size_t>(g)]));
    lpo[g] = group.trajectories[static_cast<std::size_t>(g)].old_log_prob;
  }
  PpoTapeResult ppo = ppo_clip_objective_on_tape(tape, lpn, lpo, Vec::Zero(4), 0.2);
  tape.backward(tape.neg(ppo.objective));
  clip_global_norm(fx.tpm.store(), 1.0);
  Adam adam(fx.tpm.store(), AdamConfig{1e-3});
  adam.step();

  for (const auto& [name, e] : fx.tpm.store().entries())
    CHECK(aft::mats_bitwise_equal(e.value, before.at(name).value));
}

TEST_CASE("train_tpm smoke run") {
  GrpoFixture fx;
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.group_size = 8;
  cfg.minibatch = 4;
  cfg.lr = 1e-3;

  // hash of the frozen field parameters must not change
  const Mat field_before = fx.field.mixture().means[0];
  std::vector<TrainLogRow> rows;
  TrainHooks hooks;
  hooks.on_log = [&rows](const TrainLogRow& row) { rows.push_back(row); };

  TrainStats stats = train_tpm(fx.field, fx.tpm, fx.grid, 1.5, fx.async, fx.rewards,
                               cfg, RngStream::root(4242), nullptr, hooks);
  CHECK(stats.rows.size() == 3);
  CHECK(rows.size() == 3);
  CHECK(stats.skipped_groups == 0);
  for (const TrainLogRow& row : rows) {
    CHECK(std::isfinite(row.mean_reward));
    CHECK(std::isfinite(row.mean_deviation));
    CHECK(row.clip_fraction >= 0.0);
    CHECK(row.clip_fraction <= 1.0);
    CHECK(row.lr == 1e-3);
  }
  CHECK((fx.field.mixture().means[0] - field_before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("train_tpm with a learned frozen field leaves it bit-identical") {
  FieldConfig fc{2, 16, 2, 4, 2};
  RngStream frng = RngStream::root(5050);
  LearnedField field = LearnedField::init(fc, frng);
  field.store().value("field.out.w") = aft::random_mat(16, 2, frng, 0.2);
  ParameterStore snapshot;
  for (const auto& [name, e] : field.store().entries()) snapshot.add(name, e.value);

  GrpoFixture fx;
  TrainConfig cfg;
  cfg.iterations = 2;
  cfg.group_size = 4;
  cfg.minibatch = 4;
  train_tpm(field, fx.tpm, fx.grid, 1.5, fx.async, fx.rewards, cfg,
            RngStream::root(6060));
  CHECK(aft::stores_bitwise_equal(field.store(), snapshot));
}

TEST_SUITE_END();
