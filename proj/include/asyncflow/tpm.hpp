#pragma once

#include <utility>

#include "asyncflow/beta.hpp"
#include "asyncflow/encoder.hpp"
#include "asyncflow/flow.hpp"

namespace af {

struct TPMConfig {
  int dim = 2;        // latent dimension d
  int patch = 4;      // patch length p along the latent vector
  int width = 32;     // token embedding width
  int layers = 4;
  int heads = 4;
  int ff_width = 64;
  int global_tokens = 2;
  int n_classes = 2;
  int k_max = 10;           // step-index featurization uses k / k_max
  bool pad_streams = true;  // zero-pad streams to a whole number of patches
  // smooth bound on the head's raw scalars before the positivity map; keeps
  // Beta concentrations and their log-density gradients well-conditioned
  double readout_bound = 4.0;

  int padded_dim() const {
    if (dim % patch == 0) return dim;
    require(pad_streams,
            "TPMConfig: dimension not divisible by patch size and padding disabled");
    return (dim / patch + 1) * patch;
  }
  int patches_per_stream() const { return padded_dim() / patch; }
  // 3 patched streams + condition + temporal + step tokens + global read-outs
  int token_count() const { return 3 * patches_per_stream() + 3 + global_tokens; }
  EncoderConfig encoder() const { return EncoderConfig{layers, width, heads, ff_width}; }
  void validate() const;
};

struct TPMInput {
  Vec x;        // current latent
  Vec v;        // current guided velocity
  Vec x0_hat;   // clean estimate x - t_k * v
  double t_star = 1.0;  // previous conditioning pseudo-timestep
  Condition c;
  int k = 0;    // step index on the update grid
};

// Token-centric policy head: patches of (x, v, x0_hat) plus condition,
// temporal, step-index and learned global tokens feed a shallow encoder; the
// flattened global tokens map through an MLP to two scalars which the
// positivity map turns into Beta parameters. The readout layer starts at
// zero, so a fresh policy emits Beta(2, 2) and its mode reproduces the
// synchronous schedule.
class TpmPolicy {
 public:
  TpmPolicy(TPMConfig cfg, ParameterStore store);
  static TpmPolicy init(const TPMConfig& cfg, RngStream& rng);

  BetaParams forward(const TPMInput& input) const;

  // Trainable forward for the policy-gradient recompute path. Identical
  // arithmetic to forward(), so recomputed values match rollouts bit for bit.
  std::pair<Var, Var> forward_on_tape(Tape& tape, const TPMInput& input);

  Var tokens_on_tape(Tape& tape, const ParamGetter& p, const TPMInput& input) const;
  std::pair<Var, Var> head_on_tape(Tape& tape, const ParamGetter& p, Var enc_out) const;

  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const TPMConfig& config() const { return cfg_; }

 private:
  std::pair<Var, Var> compose(Tape& tape, const ParamGetter& p, const TPMInput& input) const;
  TPMConfig cfg_;
  ParameterStore store_;
};

}  // namespace af
