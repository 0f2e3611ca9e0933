#include "asyncflow/encoder.hpp"

namespace af {

void init_encoder_params(ParameterStore& store, const std::string& prefix,
                         const EncoderConfig& cfg, RngStream& rng) {
  cfg.validate();
  const int w = cfg.width;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = prefix + ".l" + std::to_string(l) + ".";
    for (const char* name : {"wq", "wk", "wv", "wo"})
      store.add(base + name, fan_in_uniform(w, w, rng));
    for (const char* name : {"bq", "bk", "bv", "bo"})
      store.add(base + name, Mat::Zero(1, w));
    store.add(base + "w1", fan_in_uniform(w, cfg.ff_width, rng));
    store.add(base + "b1", Mat::Zero(1, cfg.ff_width));
    store.add(base + "w2", fan_in_uniform(cfg.ff_width, w, rng));
    store.add(base + "b2", Mat::Zero(1, w));
  }
}

Var encoder_forward(Tape& tape, const ParamGetter& p, const std::string& prefix,
                    const EncoderConfig& cfg, Var tokens) {
  cfg.validate();
  require(tokens.cols() == cfg.width, "encoder_forward: token width mismatch");
  Var x = tokens;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = prefix + ".l" + std::to_string(l) + ".";
    Var q = dense(tape, x, p(base + "wq"), p(base + "bq"));
    Var k = dense(tape, x, p(base + "wk"), p(base + "bk"));
    Var v = dense(tape, x, p(base + "wv"), p(base + "bv"));
    Var attn = tape.attention(q, k, v, cfg.heads);
    x = tape.add(x, dense(tape, attn, p(base + "wo"), p(base + "bo")));
    Var h = tape.silu(dense(tape, x, p(base + "w1"), p(base + "b1")));
    x = tape.add(x, dense(tape, h, p(base + "w2"), p(base + "b2")));
    if (!x.value().allFinite())
      throw NumericError("encoder_forward: non-finite tokens after layer " +
                         std::to_string(l));
  }
  return x;
}

}  // namespace af
