#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "asyncflow/config.hpp"
#include "asyncflow/experiment.hpp"
#include "asyncflow/io.hpp"

namespace af {

// Velocity field resolved from the run configuration: an analytic oracle
// built from the target spec, or a learned field loaded from a checkpoint.
struct FieldHandle {
  std::unique_ptr<VelocityField> owned;
  LearnedField* learned = nullptr;  // set when the field kind is learned
  const VelocityField& get() const { return *owned; }
};

FieldHandle build_field(const RunConfig& cfg, const std::string& checkpoint_path);

// Checkpoint helpers. Optimizer moments ride along inside the same file under
// the opt.m. / opt.v. prefixes; the sidecar carries config and RNG state.
struct TrainingState {
  std::map<std::string, Adam::Moments> moments;
  std::int64_t adam_step = 0;
  int iterations_done = 0;
};

void save_field_checkpoint(const std::string& path, const LearnedField& field,
                           const Adam* optimizer, const RunConfig& cfg,
                           int iterations_done);
LearnedField load_field_checkpoint(const std::string& path, const RunConfig& cfg,
                                   TrainingState* state = nullptr);

void save_tpm_checkpoint(const std::string& path, const TpmPolicy& tpm,
                         const Adam* optimizer, const RunConfig& cfg,
                         int iterations_done);
TpmPolicy load_tpm_checkpoint(const std::string& path, const RunConfig& cfg,
                              TrainingState* state = nullptr);

CsvTable reward_audit_table(const BatchScores& scores, const Vec& composite);

// --- CLI commands. Each writes its artifacts under out_dir and is
// deterministic given (config, seed). ---

struct PretrainOutputs {
  std::string checkpoint;
  std::string loss_csv;
  double final_loss = 0.0;
};
PretrainOutputs cmd_pretrain_field(const RunConfig& cfg, const std::string& out_dir,
                                   const std::string& resume_checkpoint = "");

struct TrainTpmOutputs {
  std::string checkpoint;
  std::string log_path;
  std::string audit_csv;
  TrainStats stats;
};
TrainTpmOutputs cmd_train_tpm(const RunConfig& cfg, const std::string& field_checkpoint,
                              const std::string& out_dir);

struct EvaluateOutputs {
  std::string per_sample_csv;
  std::string aggregate_csv;
  EvalResult result;
};
EvaluateOutputs cmd_evaluate(const RunConfig& cfg, const std::string& field_checkpoint,
                             const std::string& tpm_checkpoint,
                             const std::string& out_dir);

struct SweepOutputs {
  std::string csv;
  std::vector<std::string> svgs;
  std::vector<double> gammas;
  std::vector<double> composite;  // one per CSV row, baseline first
};
SweepOutputs cmd_sweep_gamma(const RunConfig& cfg, const std::string& field_checkpoint,
                             const std::string& tpm_checkpoint,
                             const std::vector<double>& gammas,
                             const std::string& lifted_tpm_checkpoint,
                             const std::string& out_dir);

struct CompareOutputs {
  std::string csv;
};
CompareOutputs cmd_compare_alternative(const RunConfig& cfg,
                                       const std::string& field_checkpoint,
                                       const std::string& out_dir);

struct DumpOutputs {
  std::string jsonl;
  std::string svg;
  Trajectory trajectory;
};
DumpOutputs cmd_dump_trajectory(const RunConfig& cfg, const std::string& field_checkpoint,
                                const std::string& tpm_checkpoint,
                                const std::string& out_dir);

// Stream labels so every command consumes an independent child of the seed.
inline constexpr std::uint64_t kStreamFieldInit = 1;
inline constexpr std::uint64_t kStreamPretrain = 2;
inline constexpr std::uint64_t kStreamTpmInit = 3;
inline constexpr std::uint64_t kStreamTrain = 4;
inline constexpr std::uint64_t kStreamEval = 5;
inline constexpr std::uint64_t kStreamDump = 6;
inline constexpr std::uint64_t kStreamOracle = 7;

}  // namespace af
