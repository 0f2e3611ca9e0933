#include "asyncflow/harness.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

namespace af {

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void save_with_optimizer(const std::string& path, const ParameterStore& params,
                         const Adam* optimizer, nlohmann::json meta) {
  ParameterStore merged;
  for (const auto& [name, e] : params.entries()) merged.add(name, e.value);
  if (optimizer) {
    for (const auto& [name, mo] : optimizer->moments()) {
      merged.add("opt.m." + name, mo.m);
      merged.add("opt.v." + name, mo.v);
    }
    meta["adam_step"] = optimizer->step_count();
  }
  save_checkpoint(path, merged, meta);
}

nlohmann::json load_with_optimizer(const std::string& path, ParameterStore& params,
                                   TrainingState* state) {
  ParameterStore merged;
  nlohmann::json meta = load_checkpoint(path, merged);
  for (const auto& [name, e] : merged.entries()) {
    if (name.rfind("opt.m.", 0) == 0) {
      if (state) state->moments[name.substr(6)].m = e.value;
    } else if (name.rfind("opt.v.", 0) == 0) {
      if (state) state->moments[name.substr(6)].v = e.value;
    } else {
      params.add(name, e.value);
    }
  }
  if (state) {
    state->adam_step = meta.value("adam_step", std::int64_t{0});
    state->iterations_done = meta.value("iterations_done", 0);
  }
  return meta;
}

void check_meta(const nlohmann::json& meta, const std::string& key, long expected,
                const std::string& path) {
  if (!meta.contains(key) || meta[key].get<long>() != expected)
    throw IoError("checkpoint " + path + " is incompatible with the configuration (" +
                  key + ")");
}

}  // namespace

FieldHandle build_field(const RunConfig& cfg, const std::string& checkpoint_path) {
  FieldHandle h;
  switch (cfg.field_kind) {
    case FieldKind::analytic_point:
      h.owned = std::make_unique<PointField>(cfg.target.means.front());
      return h;
    case FieldKind::analytic_mixture:
      h.owned = std::make_unique<MixtureField>(cfg.target);
      return h;
    case FieldKind::learned: {
      require(!checkpoint_path.empty(),
              "a learned field needs a checkpoint; run pretrain-field first");
      auto field = std::make_unique<LearnedField>(load_field_checkpoint(checkpoint_path, cfg));
      h.learned = field.get();
      h.owned = std::move(field);
      return h;
    }
  }
  throw UsageError("unknown field kind");
}

void save_field_checkpoint(const std::string& path, const LearnedField& field,
                           const Adam* optimizer, const RunConfig& cfg,
                           int iterations_done) {
  nlohmann::json meta;
  meta["kind"] = "field";
  meta["dim"] = field.config().dim;
  meta["hidden"] = field.config().hidden;
  meta["layers"] = field.config().layers;
  meta["cond_embed"] = field.config().cond_embed;
  meta["n_classes"] = field.config().n_classes;
  meta["iterations_done"] = iterations_done;
  meta["config_hash"] = cfg.content_hash();
  meta["rng"] = {{"key", RngStream::root(cfg.seed).child(kStreamPretrain).key()},
                 {"counter", 0}};
  save_with_optimizer(path, field.store(), optimizer, std::move(meta));
}

LearnedField load_field_checkpoint(const std::string& path, const RunConfig& cfg,
                                   TrainingState* state) {
  ParameterStore store;
  nlohmann::json meta = load_with_optimizer(path, store, state);
  if (meta.value("kind", "") != "field")
    throw IoError("checkpoint " + path + " is not a field checkpoint");
  const FieldConfig fc = cfg.make_field_config();
  check_meta(meta, "dim", fc.dim, path);
  check_meta(meta, "hidden", fc.hidden, path);
  check_meta(meta, "layers", fc.layers, path);
  check_meta(meta, "cond_embed", fc.cond_embed, path);
  check_meta(meta, "n_classes", fc.n_classes, path);
  return LearnedField(fc, std::move(store));
}

void save_tpm_checkpoint(const std::string& path, const TpmPolicy& tpm,
                         const Adam* optimizer, const RunConfig& cfg,
                         int iterations_done) {
  nlohmann::json meta;
  const TPMConfig& tc = tpm.config();
  meta["kind"] = "tpm";
  meta["dim"] = tc.dim;
  meta["patch"] = tc.patch;
  meta["width"] = tc.width;
  meta["layers"] = tc.layers;
  meta["heads"] = tc.heads;
  meta["ff_width"] = tc.ff_width;
  meta["global_tokens"] = tc.global_tokens;
  meta["n_classes"] = tc.n_classes;
  meta["k_max"] = tc.k_max;
  meta["bound"] = bound_mode_name(cfg.bound);
  meta["iterations_done"] = iterations_done;
  meta["config_hash"] = cfg.content_hash();
  meta["rng"] = {{"key", RngStream::root(cfg.seed).child(kStreamTrain).key()},
                 {"counter", 0}};
  save_with_optimizer(path, tpm.store(), optimizer, std::move(meta));
}

TpmPolicy load_tpm_checkpoint(const std::string& path, const RunConfig& cfg,
                              TrainingState* state) {
  ParameterStore store;
  nlohmann::json meta = load_with_optimizer(path, store, state);
  if (meta.value("kind", "") != "tpm")
    throw IoError("checkpoint " + path + " is not a TPM checkpoint");
  const TPMConfig tc = cfg.make_tpm_config();
  check_meta(meta, "dim", tc.dim, path);
  check_meta(meta, "patch", tc.patch, path);
  check_meta(meta, "width", tc.width, path);
  check_meta(meta, "layers", tc.layers, path);
  check_meta(meta, "heads", tc.heads, path);
  check_meta(meta, "ff_width", tc.ff_width, path);
  check_meta(meta, "global_tokens", tc.global_tokens, path);
  check_meta(meta, "n_classes", tc.n_classes, path);
  check_meta(meta, "k_max", tc.k_max, path);
  return TpmPolicy(tc, std::move(store));
}

CsvTable reward_audit_table(const BatchScores& scores, const Vec& composite) {
  CsvTable table;
  table.header.push_back("sample");
  for (const std::string& n : scores.names) table.header.push_back("raw_" + n);
  for (const std::string& n : scores.names) table.header.push_back("norm_" + n);
  table.header.push_back("composite");
  for (Eigen::Index i = 0; i < scores.raw.rows(); ++i) {
    std::vector<std::string> row;
    row.push_back(std::to_string(i));
    for (Eigen::Index j = 0; j < scores.raw.cols(); ++j)
      row.push_back(fmt_float(scores.raw(i, j)));
    for (Eigen::Index j = 0; j < scores.normalized.cols(); ++j)
      row.push_back(fmt_float(scores.normalized(i, j)));
    row.push_back(fmt_float(composite[i]));
    table.add_row(std::move(row));
  }
  return table;
}

PretrainOutputs cmd_pretrain_field(const RunConfig& cfg, const std::string& out_dir,
                                   const std::string& resume_checkpoint) {
  cfg.validate();
  require(cfg.field_kind == FieldKind::learned,
          "pretrain-field only applies to the learned field kind");
  RngStream init_rng = RngStream::root(cfg.seed).child(kStreamFieldInit);
  RngStream train_rng = RngStream::root(cfg.seed).child(kStreamPretrain);

  FieldPretrainConfig pc;
  pc.iterations = cfg.pretrain_iters;
  pc.batch = cfg.pretrain_batch;
  pc.lr = cfg.pretrain_lr;
  pc.cond_drop = cfg.cond_drop;

  LearnedField field = LearnedField::init(cfg.make_field_config(), init_rng);
  TrainingState state;
  const bool resumed = !resume_checkpoint.empty();
  if (resumed) {
    field = load_field_checkpoint(resume_checkpoint, cfg, &state);
    pc.start_iteration = state.iterations_done;
    require(pc.start_iteration <= pc.iterations,
            "resume checkpoint already covers the requested iterations");
  }
  Adam adam(field.store(), AdamConfig{cfg.pretrain_lr});
  if (resumed) adam.restore(std::move(state.moments), state.adam_step);

  PretrainResult result = pretrain_field(field, cfg.target, pc, train_rng, &adam);

  PretrainOutputs out;
  out.checkpoint = join(out_dir, "field.ckpt");
  save_field_checkpoint(out.checkpoint, field, &adam, cfg, pc.iterations);

  CsvTable curve;
  curve.header = {"iter", "loss"};
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
    curve.add_row({std::to_string(pc.start_iteration + static_cast<int>(i)),
                   fmt_float(result.loss_curve[i])});
  out.loss_csv = join(out_dir, "loss_curve.csv");
  write_text_file(out.loss_csv, curve.to_string());
  out.final_loss = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
  return out;
}

TrainTpmOutputs cmd_train_tpm(const RunConfig& cfg, const std::string& field_checkpoint,
                              const std::string& out_dir) {
  cfg.validate();
  FieldHandle field = build_field(cfg, field_checkpoint);

  RngStream init_rng = RngStream::root(cfg.seed).child(kStreamTpmInit);
  TpmPolicy tpm = TpmPolicy::init(cfg.make_tpm_config(), init_rng);
  Adam adam(tpm.store(), AdamConfig{cfg.train.lr});

  AsyncConfig async = cfg.make_async();
  async.stochastic = true;

  std::ostringstream log;
  TrainTpmOutputs out;
  out.checkpoint = join(out_dir, "tpm.ckpt");

  TrainHooks hooks;
  hooks.on_log = [&log](const TrainLogRow& row) {
    nlohmann::json j;
    j["iter"] = row.iter;
    j["mean_reward"] = row.mean_reward;
    j["mean_deviation"] = row.mean_deviation;
    j["clip_fraction"] = row.clip_fraction;
    j["grad_norm"] = row.grad_norm;
    j["lr"] = row.lr;
    log << j.dump() << "\n";
  };
  hooks.on_checkpoint = [&](int iter, TpmPolicy& policy, Adam& opt) {
    save_tpm_checkpoint(join(out_dir, "tpm_iter" + std::to_string(iter) + ".ckpt"),
                        policy, &opt, cfg, iter);
  };
  RolloutGroup last_group;
  hooks.on_group = [&last_group](int, const RolloutGroup& group) { last_group = group; };

  out.stats = train_tpm(field.get(), tpm, cfg.make_grid(), cfg.guidance, async,
                        cfg.make_reward_spec(), cfg.train,
                        RngStream::root(cfg.seed).child(kStreamTrain), &adam, hooks);

  save_tpm_checkpoint(out.checkpoint, tpm, &adam, cfg, cfg.train.iterations);
  out.log_path = join(out_dir, "train_log.jsonl");
  write_text_file(out.log_path, log.str());

  if (!last_group.trajectories.empty()) {
    out.audit_csv = join(out_dir, "reward_audit.csv");
    write_text_file(out.audit_csv,
                    reward_audit_table(last_group.scores, last_group.rewards).to_string());
  }
  return out;
}

namespace {

CsvTable per_sample_table(const RunConfig& cfg, const EvalResult& result,
                          const RewardSpec& rewards) {
  CsvTable t;
  t.header = {"sample", "label"};
  for (MetricKind m : rewards.metrics) t.header.push_back(metric_name(m));
  t.header.push_back("mean_deviation");
  for (Eigen::Index i = 0; i < result.raw.rows(); ++i) {
    const Trajectory& traj = result.trajectories[static_cast<std::size_t>(i)];
    std::vector<std::string> row;
    row.push_back(std::to_string(i));
    row.push_back(std::to_string(traj.cond.label));
    for (Eigen::Index j = 0; j < result.raw.cols(); ++j)
      row.push_back(fmt_float(result.raw(i, j)));
    row.push_back(fmt_float(mean_deviation({traj})));
    t.add_row(std::move(row));
  }
  (void)cfg;
  return t;
}

std::vector<std::string> aggregate_row(const std::string& method, const Mat& raw,
                                       double mean_dev) {
  std::vector<std::string> row{method};
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    row.push_back(fmt_float(raw.col(j).mean()));
  row.push_back(fmt_float(mean_dev));
  return row;
}

}  // namespace

EvaluateOutputs cmd_evaluate(const RunConfig& cfg, const std::string& field_checkpoint,
                             const std::string& tpm_checkpoint,
                             const std::string& out_dir) {
  cfg.validate();
  FieldHandle field = build_field(cfg, field_checkpoint);
  std::optional<TpmPolicy> tpm;
  if (!tpm_checkpoint.empty()) tpm = load_tpm_checkpoint(tpm_checkpoint, cfg);

  const RewardSpec rewards = cfg.make_reward_spec();
  EvalProtocol protocol{cfg.eval_rollouts, cfg.target.components(), cfg.seed,
                        kStreamEval};
  AsyncConfig async = cfg.make_async();  // deterministic Beta-mode evaluation

  EvaluateOutputs out;
  out.result = eval_rollouts(field.get(), tpm ? &*tpm : nullptr, cfg.make_grid(),
                             cfg.guidance, async, rewards, protocol);

  out.per_sample_csv = join(out_dir, "per_sample.csv");
  write_text_file(out.per_sample_csv,
                  per_sample_table(cfg, out.result, rewards).to_string());

  CsvTable agg;
  agg.header = {"method"};
  for (MetricKind m : rewards.metrics) agg.header.push_back(metric_name(m));
  agg.header.push_back("mean_deviation");
  agg.add_row(aggregate_row(tpm ? "async" : "sync", out.result.raw, out.result.mean_dev));
  out.aggregate_csv = join(out_dir, "aggregate.csv");
  write_text_file(out.aggregate_csv, agg.to_string());
  return out;
}

SweepOutputs cmd_sweep_gamma(const RunConfig& cfg, const std::string& field_checkpoint,
                             const std::string& tpm_checkpoint,
                             const std::vector<double>& gammas,
                             const std::string& lifted_tpm_checkpoint,
                             const std::string& out_dir) {
  cfg.validate();
  require(!gammas.empty(), "sweep-gamma: empty gamma list");
  FieldHandle field = build_field(cfg, field_checkpoint);
  TpmPolicy tpm = load_tpm_checkpoint(tpm_checkpoint, cfg);

  const RewardSpec rewards = cfg.make_reward_spec();
  EvalProtocol protocol{cfg.eval_rollouts, cfg.target.components(), cfg.seed,
                        kStreamEval};
  const TimeGrid grid = cfg.make_grid();

  struct Row {
    std::string mode;
    double gamma;
    EvalResult result;
  };
  std::vector<Row> rows;
  rows.push_back({"sync", 0.0,
                  eval_rollouts(field.get(), nullptr, grid, cfg.guidance,
                                cfg.make_async(), rewards, protocol)});
  for (double g : gammas) {
    AsyncConfig async = cfg.make_async();
    async.gamma = g;
    rows.push_back({"async", g,
                    eval_rollouts(field.get(), &tpm, grid, cfg.guidance, async,
                                  rewards, protocol)});
  }
  if (!lifted_tpm_checkpoint.empty()) {
    RunConfig lifted_cfg = cfg;
    lifted_cfg.bound = BoundMode::lifted;
    TpmPolicy lifted = load_tpm_checkpoint(lifted_tpm_checkpoint, lifted_cfg);
    AsyncConfig async = lifted_cfg.make_async();
    async.gamma = 1.0;
    rows.push_back({"lifted", 1.0,
                    eval_rollouts(field.get(), &lifted, grid, cfg.guidance, async,
                                  rewards, protocol)});
  }

  Mat pooled(static_cast<Eigen::Index>(rows.size()) * protocol.rollouts,
             rows.front().result.raw.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    pooled.middleRows(static_cast<Eigen::Index>(i) * protocol.rollouts,
                      protocol.rollouts) = rows[i].result.raw;
  const ScoreNormalizer normalizer = ScoreNormalizer::fit(pooled, rewards.eps_z);

  SweepOutputs out;
  CsvTable table;
  table.header = {"mode", "gamma", "composite"};
  for (MetricKind m : rewards.metrics) table.header.push_back(metric_name(m));
  table.header.push_back("mean_deviation");
  table.header.push_back("seed");
  for (const Row& r : rows) {
    const double composite = r.result.mean_composite(normalizer);
    out.composite.push_back(composite);
    std::vector<std::string> row{r.mode, fmt_float(r.gamma), fmt_float(composite)};
    for (Eigen::Index j = 0; j < r.result.raw.cols(); ++j)
      row.push_back(fmt_float(r.result.raw.col(j).mean()));
    row.push_back(fmt_float(r.result.mean_dev));
    row.push_back(std::to_string(cfg.seed));
    table.add_row(std::move(row));
  }
  out.csv = join(out_dir, "sweep.csv");
  write_text_file(out.csv, table.to_string());
  out.gammas = gammas;

  // one chart per metric plus the composite, async rows only
  std::vector<double> xs;
  for (const Row& r : rows)
    if (r.mode == "async") xs.push_back(r.gamma);
  for (Eigen::Index j = 0; j < rows.front().result.raw.cols(); ++j) {
    Series s;
    s.name = rewards.metrics.size() > static_cast<std::size_t>(j)
                 ? metric_name(rewards.metrics[static_cast<std::size_t>(j)])
                 : "metric";
    for (const Row& r : rows)
      if (r.mode == "async") {
        s.x.push_back(r.gamma);
        s.y.push_back(r.result.raw.col(j).mean());
      }
    const std::string path = join(out_dir, "sweep_" + s.name + ".svg");
    write_line_chart_svg(path, s.name + " vs gamma", "gamma", s.name, {s});
    out.svgs.push_back(path);
  }
  Series comp;
  comp.name = "composite";
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].mode == "async") {
      comp.x.push_back(rows[i].gamma);
      comp.y.push_back(out.composite[i]);
    }
  const std::string comp_path = join(out_dir, "sweep_composite.svg");
  write_line_chart_svg(comp_path, "composite vs gamma", "gamma", "composite", {comp});
  out.svgs.push_back(comp_path);
  return out;
}

CompareOutputs cmd_compare_alternative(const RunConfig& cfg,
                                       const std::string& field_checkpoint,
                                       const std::string& out_dir) {
  cfg.validate();
  FieldHandle field = build_field(cfg, field_checkpoint);
  const RewardSpec rewards = cfg.make_reward_spec();
  EvalProtocol protocol{cfg.eval_rollouts, cfg.target.components(), cfg.seed,
                        kStreamEval};
  const TimeGrid grid = cfg.make_grid();

  const std::vector<double> knobs = {0.5, 0.75, 1.0, 1.25, 1.5};

  struct Row {
    std::string mode;
    double knob;
    Mat raw;
  };
  std::vector<Row> rows;
  rows.push_back({"sync", 1.0,
                  eval_rollouts(field.get(), nullptr, grid, cfg.guidance,
                                cfg.make_async(), rewards, protocol).raw});

  RngStream base = RngStream::root(protocol.seed).child(protocol.stream_label);
  for (double w : knobs) {
    std::vector<Vec> finals;
    std::vector<Condition> conds;
    for (int i = 0; i < protocol.rollouts; ++i) {
      const Condition c = Condition::of(i % protocol.n_classes);
      RngStream rng = base.child(static_cast<std::uint64_t>(c.label))
                          .child(static_cast<std::uint64_t>(i));
      finals.push_back(
          sample_alternative(field.get(), grid, c, cfg.guidance, w, rng).final_sample);
      conds.push_back(c);
    }
    rows.push_back({"alternative", w, score_batch(rewards, finals, conds).raw});
  }
  for (double w : knobs) {
    const double deviation = w - 1.0;  // matched de-synchronization strength
    const AsyncConfig async = constant_deviation_config(cfg.make_async(), deviation);
    rows.push_back({"async", deviation,
                    eval_rollouts(field.get(), nullptr, grid, cfg.guidance, async,
                                  rewards, protocol).raw});
  }

  Mat pooled(static_cast<Eigen::Index>(rows.size()) * protocol.rollouts,
             rows.front().raw.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    pooled.middleRows(static_cast<Eigen::Index>(i) * protocol.rollouts,
                      protocol.rollouts) = rows[i].raw;
  const ScoreNormalizer normalizer = ScoreNormalizer::fit(pooled, rewards.eps_z);

  // column order matches the rewards spec: noise penalty and alignment are
  // reported alongside the composite
  int noise_col = -1, align_col = -1;
  for (std::size_t j = 0; j < rewards.metrics.size(); ++j) {
    if (rewards.metrics[j] == MetricKind::noise_penalty) noise_col = static_cast<int>(j);
    if (rewards.metrics[j] == MetricKind::condition_alignment)
      align_col = static_cast<int>(j);
  }
  require(noise_col >= 0 && align_col >= 0,
          "compare-alternative: reward spec must include noise_penalty and alignment");

  CsvTable table;
  table.header = {"mode", "knob", "composite", "noise_penalty", "alignment"};
  for (const Row& r : rows) {
    table.add_row({r.mode, fmt_float(r.knob),
                   fmt_float(normalizer.composite(r.raw).mean()),
                   fmt_float(r.raw.col(noise_col).mean()),
                   fmt_float(r.raw.col(align_col).mean())});
  }
  CompareOutputs out;
  out.csv = join(out_dir, "compare.csv");
  write_text_file(out.csv, table.to_string());
  return out;
}

DumpOutputs cmd_dump_trajectory(const RunConfig& cfg, const std::string& field_checkpoint,
                                const std::string& tpm_checkpoint,
                                const std::string& out_dir) {
  cfg.validate();
  FieldHandle field = build_field(cfg, field_checkpoint);
  std::optional<TpmPolicy> tpm;
  if (!tpm_checkpoint.empty()) tpm = load_tpm_checkpoint(tpm_checkpoint, cfg);

  RngStream rng = RngStream::root(cfg.seed).child(kStreamDump);
  const Condition c = Condition::of(0);
  DumpOutputs out;
  if (tpm) {
    out.trajectory = sample_async(field.get(), &*tpm, cfg.make_grid(), c,
                                  cfg.guidance, cfg.make_async(), rng);
  } else {
    out.trajectory = sample_sync(field.get(), cfg.make_grid(), c, cfg.guidance, rng);
  }
  out.jsonl = join(out_dir, "trajectory.jsonl");
  write_text_file(out.jsonl, trajectory_to_jsonl(out.trajectory));

  Series dev;
  dev.name = "deviation";
  for (const StepRecord& s : out.trajectory.steps)
    if (!s.is_final) {
      dev.x.push_back(double(s.k));
      dev.y.push_back(s.deviation);
    }
  out.svg = join(out_dir, "deviation.svg");
  write_line_chart_svg(out.svg, "deviation per step", "step", "deviation", {dev});
  return out;
}

}  // namespace af
