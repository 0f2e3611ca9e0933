#include "asyncflow/tpm.hpp"

namespace af {

void TPMConfig::validate() const {
  require(dim > 0 && patch > 0 && width > 0 && layers > 0 && heads > 0 &&
              ff_width > 0 && global_tokens > 0 && n_classes > 0 && k_max > 0,
          "TPMConfig: all extents must be positive");
  require(readout_bound > 0.0, "TPMConfig: readout bound must be positive");
  encoder().validate();
  (void)padded_dim();  // throws when padding is required but disabled
}

TpmPolicy::TpmPolicy(TPMConfig cfg, ParameterStore store)
    : cfg_(cfg), store_(std::move(store)) {
  cfg_.validate();
}

TpmPolicy TpmPolicy::init(const TPMConfig& cfg, RngStream& rng) {
  cfg.validate();
  ParameterStore store;
  const int w = cfg.width;
  store.add("tpm.tok.px", fan_in_uniform(cfg.patch, w, rng));
  store.add("tpm.tok.pv", fan_in_uniform(cfg.patch, w, rng));
  store.add("tpm.tok.px0", fan_in_uniform(cfg.patch, w, rng));
  store.add("tpm.tok.stream", 0.1 * fan_in_uniform(3, w, rng));
  store.add("tpm.tok.cond", fan_in_uniform(cfg.n_classes, w, rng));
  store.add("tpm.tok.time_w", fan_in_uniform(kTimeEmbedDim, w, rng));
  store.add("tpm.tok.time_b", Mat::Zero(1, w));
  store.add("tpm.tok.step_w", fan_in_uniform(kTimeEmbedDim, w, rng));
  store.add("tpm.tok.step_b", Mat::Zero(1, w));
  store.add("tpm.tok.global", 0.1 * fan_in_uniform(cfg.global_tokens, w, rng));
  store.add("tpm.tok.pos", 0.1 * fan_in_uniform(cfg.token_count(), w, rng));
  init_encoder_params(store, "tpm.enc", cfg.encoder(), rng);
  store.add("tpm.head.w1", fan_in_uniform(cfg.global_tokens * w, w, rng));
  store.add("tpm.head.b1", Mat::Zero(1, w));
  // zero readout: raw scalars start at (0, 0) and phi maps them to (2, 2)
  store.add("tpm.head.w2", Mat::Zero(w, 2));
  store.add("tpm.head.b2", Mat::Zero(1, 2));
  return TpmPolicy(cfg, std::move(store));
}

Var TpmPolicy::tokens_on_tape(Tape& tape, const ParamGetter& p,
                              const TPMInput& input) const {
  require(input.x.size() == cfg_.dim && input.v.size() == cfg_.dim &&
              input.x0_hat.size() == cfg_.dim,
          "TpmPolicy: input dimension mismatch");
  require(input.k >= 0 && input.k < cfg_.k_max, "TpmPolicy: step index out of range");
  const int pd = cfg_.padded_dim();
  const int m = cfg_.patches_per_stream();

  auto patches = [&](const Vec& stream) {
    Mat rows = Mat::Zero(m, cfg_.patch);
    for (int i = 0; i < pd; ++i)
      if (i < cfg_.dim) rows(i / cfg_.patch, i % cfg_.patch) = stream[i];
    return rows;
  };

  Var stream_emb = p("tpm.tok.stream");
  auto stream_tokens = [&](const Vec& data, const char* proj, int stream_idx) {
    Var projected = tape.matmul(tape.constant(patches(data)), p(proj));
    Var type_row = tape.slice_rows(stream_emb, stream_idx, 1);
    // every patch token of a stream shares that stream's type embedding
    Var stacked = type_row;
    if (m > 1) {
      std::vector<Var> rows(static_cast<std::size_t>(m), type_row);
      stacked = tape.vstack(rows);
    }
    return tape.add(projected, stacked);
  };

  std::vector<Var> parts;
  parts.push_back(stream_tokens(input.x, "tpm.tok.px", 0));
  parts.push_back(stream_tokens(input.v, "tpm.tok.pv", 1));
  parts.push_back(stream_tokens(input.x0_hat, "tpm.tok.px0", 2));

  if (input.c.is_null()) {
    parts.push_back(tape.constant(Mat::Zero(1, cfg_.width)));
  } else {
    require(input.c.label < cfg_.n_classes, "TpmPolicy: condition label out of range");
    Var cond_table = p("tpm.tok.cond");
    parts.push_back(tape.slice_rows(cond_table, input.c.label, 1));
  }

  Mat t_emb(1, kTimeEmbedDim);
  t_emb.row(0) = time_embedding(input.t_star).transpose();
  parts.push_back(dense(tape, tape.constant(std::move(t_emb)), p("tpm.tok.time_w"),
                        p("tpm.tok.time_b")));

  Mat k_emb(1, kTimeEmbedDim);
  k_emb.row(0) = time_embedding(double(input.k) / double(cfg_.k_max)).transpose();
  parts.push_back(dense(tape, tape.constant(std::move(k_emb)), p("tpm.tok.step_w"),
                        p("tpm.tok.step_b")));

  parts.push_back(p("tpm.tok.global"));

  return tape.add(tape.vstack(parts), p("tpm.tok.pos"));
}

std::pair<Var, Var> TpmPolicy::head_on_tape(Tape& tape, const ParamGetter& p,
                                            Var enc_out) const {
  const int n = cfg_.token_count();
  Var global = tape.slice_rows(enc_out, n - cfg_.global_tokens, cfg_.global_tokens);
  Var flat = tape.flatten_to_row(global);
  Var h = tape.silu(dense(tape, flat, p("tpm.head.w1"), p("tpm.head.b1")));
  Var raw = dense(tape, h, p("tpm.head.w2"), p("tpm.head.b2"));
  const double s = cfg_.readout_bound;
  Var bounded = tape.scale(tape.tanh(tape.scale(raw, 1.0 / s)), s);
  Var mapped = tape.phi_map(bounded);
  if (!mapped.value().allFinite())
    throw NumericError("TpmPolicy: non-finite Beta parameters");
  return {tape.slice_cols(mapped, 0, 1), tape.slice_cols(mapped, 1, 1)};
}

std::pair<Var, Var> TpmPolicy::compose(Tape& tape, const ParamGetter& p,
                                       const TPMInput& input) const {
  Var tokens = tokens_on_tape(tape, p, input);
  Var enc = encoder_forward(tape, p, "tpm.enc", cfg_.encoder(), tokens);
  return head_on_tape(tape, p, enc);
}

BetaParams TpmPolicy::forward(const TPMInput& input) const {
  Tape tape;
  auto [a, b] = compose(tape, frozen_params(tape, store_), input);
  return BetaParams{a.scalar(), b.scalar()};
}

std::pair<Var, Var> TpmPolicy::forward_on_tape(Tape& tape, const TPMInput& input) {
  return compose(tape, trainable_params(tape, store_), input);
}

}  // namespace af
