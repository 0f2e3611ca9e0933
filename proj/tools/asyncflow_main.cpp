#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "asyncflow/harness.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool out_set = false;
};

af::RunConfig resolve_config(const GlobalArgs& args) {
  af::RunConfig cfg;
  if (!args.config_path.empty()) cfg = af::RunConfig::load(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (args.out_set) cfg.out_dir = args.out_dir;
  cfg.validate();
  return cfg;
}

std::string command_dir(const af::RunConfig& cfg, const std::string& label) {
  return af::make_run_dir(cfg.out_dir, label, cfg.content_hash());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-matching sampler with a learned asynchronous conditioning schedule"};
  app.require_subcommand(1);

  GlobalArgs args;
  app.add_option("--config", args.config_path, "run configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", args.seed, "override the config seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
  app.add_option("--out", args.out_dir, "override the output directory")
      ->each([&args](const std::string&) { args.out_set = true; });

  std::string field_ckpt, tpm_ckpt, lifted_ckpt, resume_ckpt;
  std::vector<double> gammas = {0.0, 0.5, 1.0, 2.0};

  CLI::App* pretrain = app.add_subcommand("pretrain-field", "train the velocity field");
  pretrain->add_option("--resume", resume_ckpt, "continue from a field checkpoint");

  CLI::App* train = app.add_subcommand("train-tpm", "train the timestep policy");
  train->add_option("--field", field_ckpt, "field checkpoint");

  CLI::App* evaluate = app.add_subcommand("evaluate", "fixed-seed evaluation rollouts");
  evaluate->add_option("--field", field_ckpt, "field checkpoint");
  evaluate->add_option("--tpm", tpm_ckpt, "policy checkpoint (omit for synchronous)");

  CLI::App* sweep = app.add_subcommand("sweep-gamma", "deviation-scale sweep");
  sweep->add_option("--field", field_ckpt, "field checkpoint");
  sweep->add_option("--tpm", tpm_ckpt, "policy checkpoint")->required();
  sweep->add_option("--lifted-tpm", lifted_ckpt, "lifted-bound policy for the comparator row");
  sweep->add_option("--gammas", gammas, "deviation scales to evaluate");

  CLI::App* compare = app.add_subcommand("compare-alternative",
                                         "velocity scaling vs. matched de-synchronization");
  compare->add_option("--field", field_ckpt, "field checkpoint");

  CLI::App* dump = app.add_subcommand("dump-trajectory", "full step records for one rollout");
  dump->add_option("--field", field_ckpt, "field checkpoint");
  dump->add_option("--tpm", tpm_ckpt, "policy checkpoint (omit for synchronous)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const af::RunConfig cfg = resolve_config(args);
    if (pretrain->parsed()) {
      const std::string dir = command_dir(cfg, "pretrain-field");
      const auto out = af::cmd_pretrain_field(cfg, dir, resume_ckpt);
      std::cout << "checkpoint: " << out.checkpoint << "\n"
                << "loss curve: " << out.loss_csv << "\n"
                << "final loss: " << af::fmt_float(out.final_loss) << "\n";
    } else if (train->parsed()) {
      const std::string dir = command_dir(cfg, "train-tpm");
      const auto out = af::cmd_train_tpm(cfg, field_ckpt, dir);
      std::cout << "checkpoint: " << out.checkpoint << "\n"
                << "training log: " << out.log_path << "\n";
      if (!out.stats.rows.empty())
        std::cout << "final mean deviation: "
                  << af::fmt_float(out.stats.rows.back().mean_deviation) << "\n";
    } else if (evaluate->parsed()) {
      const std::string dir = command_dir(cfg, "evaluate");
      const auto out = af::cmd_evaluate(cfg, field_ckpt, tpm_ckpt, dir);
      std::cout << "per-sample: " << out.per_sample_csv << "\n"
                << "aggregate: " << out.aggregate_csv << "\n"
                << "mean deviation: " << af::fmt_float(out.result.mean_dev) << "\n";
    } else if (sweep->parsed()) {
      const std::string dir = command_dir(cfg, "sweep-gamma");
      const auto out = af::cmd_sweep_gamma(cfg, field_ckpt, tpm_ckpt, gammas,
                                           lifted_ckpt, dir);
      std::cout << "sweep: " << out.csv << "\n";
    } else if (compare->parsed()) {
      const std::string dir = command_dir(cfg, "compare-alternative");
      const auto out = af::cmd_compare_alternative(cfg, field_ckpt, dir);
      std::cout << "comparison: " << out.csv << "\n";
    } else if (dump->parsed()) {
      const std::string dir = command_dir(cfg, "dump-trajectory");
      const auto out = af::cmd_dump_trajectory(cfg, field_ckpt, tpm_ckpt, dir);
      std::cout << "trajectory: " << out.jsonl << "\n"
                << "chart: " << out.svg << "\n";
    }
  } catch (const af::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const af::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const af::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
