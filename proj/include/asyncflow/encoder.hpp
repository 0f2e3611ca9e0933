#pragma once

#include <functional>
#include <string>

#include "asyncflow/params.hpp"
#include "asyncflow/tape.hpp"

namespace af {

struct EncoderConfig {
  int layers = 4;
  int width = 32;
  int heads = 4;
  int ff_width = 64;
  void validate() const {
    require(layers > 0 && width > 0 && heads > 0 && ff_width > 0,
            "EncoderConfig: all extents must be positive");
    require(width % heads == 0, "EncoderConfig: width must divide by head count");
  }
};

// Parameter names live under <prefix>.l<k>.{wq,bq,wk,bk,wv,bv,wo,bo,w1,b1,w2,b2}.
void init_encoder_params(ParameterStore& store, const std::string& prefix,
                         const EncoderConfig& cfg, RngStream& rng);

// Residual attention + feed-forward stack over a token matrix
// (n_tok x width). Dropout and layer normalization are absent by design, so
// a zero-weight encoder is the identity map on tokens.
Var encoder_forward(Tape& tape, const ParamGetter& p, const std::string& prefix,
                    const EncoderConfig& cfg, Var tokens);

}  // namespace af
