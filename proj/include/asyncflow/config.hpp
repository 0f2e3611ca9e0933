#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asyncflow/flow.hpp"
#include "asyncflow/grpo.hpp"
#include "asyncflow/rewards.hpp"
#include "asyncflow/sampler.hpp"
#include "asyncflow/tpm.hpp"

namespace af {

enum class FieldKind { learned, analytic_point, analytic_mixture };
enum class GridKind { uniform, shifted };

// Everything a run needs, parsed from a sectioned key = value file. Unknown
// sections or keys are hard errors; parse -> serialize -> parse is the
// identity.
struct RunConfig {
  // [run]
  std::uint64_t seed = 42;
  std::string out_dir = "out";

  // [target]
  MixtureSpec target = MixtureSpec::two_component(
      Vec::Constant(2, -1.5), Vec::Constant(2, 1.5), 0.25);

  // [field]
  FieldKind field_kind = FieldKind::learned;
  int field_hidden = 128;
  int field_layers = 3;
  int field_cond_embed = 8;
  int pretrain_iters = 3000;
  int pretrain_batch = 64;
  double pretrain_lr = 1e-3;
  double cond_drop = 0.1;

  // [grid]
  int grid_steps = 10;
  GridKind grid_kind = GridKind::uniform;
  double grid_shift = 3.0;

  // [sampler]
  int k_max = 10;
  double sigma_min = 1e-3;
  double guidance = 5.0;
  double gamma = 1.0;
  BoundMode bound = BoundMode::standard;

  // [tpm]
  int tpm_patch = 4;
  int tpm_width = 32;
  int tpm_layers = 4;
  int tpm_heads = 4;
  int tpm_ff_width = 64;
  int tpm_global_tokens = 2;

  // [train]
  TrainConfig train;

  // [rewards]
  double noise_reference = 0.0;

  // [eval]
  int eval_rollouts = 256;

  void validate() const;

  TimeGrid make_grid() const;
  AsyncConfig make_async() const;
  TPMConfig make_tpm_config() const;
  FieldConfig make_field_config() const;
  RewardSpec make_reward_spec() const;

  std::string serialize() const;        // canonical text form
  std::uint64_t content_hash() const;   // FNV-1a over the canonical form

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
};

std::string field_kind_name(FieldKind k);
std::string bound_mode_name(BoundMode m);

}  // namespace af
