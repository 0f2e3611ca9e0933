#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "asyncflow/encoder.hpp"
#include "asyncflow/optim.hpp"
#include "asyncflow/params.hpp"
#include "asyncflow/rng.hpp"
#include "asyncflow/tape.hpp"
#include "test_util.hpp"

using namespace af;

TEST_SUITE_BEGIN("nn");

TEST_CASE("rng streams are deterministic and splittable") {
  RngStream a = RngStream::root(42);
  RngStream b = RngStream::root(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c0 = RngStream::root(42).child(0);
  RngStream c1 = RngStream::root(42).child(1);
  CHECK(c0.next_u64() != c1.next_u64());

  RngStream n = RngStream::root(7);
  double mean = 0.0, var = 0.0;
  const int N = 20000;
  for (int i = 0; i < N; ++i) {
    const double x = n.normal();
    mean += x;
    var += x * x;
  }
  mean /= N;
  var = var / N - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("rng counter state restores exactly") {
  RngStream a = RngStream::root(3).child(5);
  for (int i = 0; i < 17; ++i) a.next_u64();
  RngStream b(a.key());
  b.set_counter(a.counter());
  for (int i = 0; i < 50; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("dense layer identity and zero maps") {
  Tape tape;
  Mat w = Mat::Identity(2, 2);
  Mat in(1, 2);
  in << 1.0, 2.0;
  Var out = dense(tape, tape.constant(in), tape.constant(w), tape.constant(Mat::Zero(1, 2)));
  CHECK(out.value()(0, 0) == 1.0);
  CHECK(out.value()(0, 1) == 2.0);

  Tape tape2;
  Mat bias(1, 1);
  bias << 3.0;
  Mat in2(1, 1);
  in2 << 5.0;
  Var out2 = dense(tape2, tape2.constant(in2), tape2.constant(Mat::Zero(1, 1)),
                   tape2.constant(bias));
  CHECK(out2.value()(0, 0) == 3.0);
}

TEST_CASE("dense layer matches a triple-loop matmul oracle") {
  RngStream rng = RngStream::root(11);
  Mat x = aft::random_mat(4, 3, rng);
  Mat w = aft::random_mat(3, 2, rng);
  Mat b = aft::random_mat(1, 2, rng);
  Tape tape;
  Var out = dense(tape, tape.constant(x), tape.constant(w), tape.constant(b));
  Mat expect = Mat::Zero(4, 2);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < 3; ++k) expect(i, j) += x(i, k) * w(k, j);
      expect(i, j) += b(0, j);
    }
  CHECK((out.value() - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward on linear and quadratic losses") {
  ParameterStore store;
  RngStream rng = RngStream::root(5);
  store.add("w", aft::random_mat(3, 4, rng));

  // loss = sum(w): every gradient element is 1
  {
    Tape tape;
    Var w = tape.param(store, "w");
    Var ones = tape.constant(Mat::Ones(12, 1));
    Var loss = tape.matmul(tape.flatten_to_row(w), ones);
    tape.backward(loss);
    CHECK((store.grad("w").array() - 1.0).abs().maxCoeff() == 0.0);
  }
  // loss = ||w||^2 / 2: gradient equals w
  {
    Tape tape;
    Var w = tape.param(store, "w");
    Var loss = tape.scale(tape.sum_squared(w), 0.5);
    tape.backward(loss);
    CHECK((store.grad("w") - store.value("w")).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("tape gradients match finite differences per primitive") {
  RngStream rng = RngStream::root(99);
  for (int rep = 0; rep < 5; ++rep) {
    ParameterStore store;
    store.add("a", aft::random_mat(3, 4, rng, 0.7));
    store.add("b", aft::random_mat(4, 3, rng, 0.7));
    store.add("bias", aft::random_mat(1, 3, rng, 0.3));
    auto loss_fn = [&](Tape& t) {
      Var a = t.param(store, "a");
      Var b = t.param(store, "b");
      Var h = t.add_row_broadcast(t.matmul(a, b), t.param(store, "bias"));
      h = t.silu(h);
      h = t.softmax_rows(h);
      Var s = t.sub(h, t.scale(h, 0.25));
      Var m = t.mul(s, s);
      return t.scale(t.sum_squared(t.add_scalar(m, 0.1)), 0.5);
    };
    RngStream coord_rng = rng.child(static_cast<std::uint64_t>(rep));
    CHECK(aft::fd_max_rel_error(store, loss_fn, coord_rng, 6) < 1e-5);
  }
}

TEST_CASE("attention block matches finite differences") {
  RngStream rng = RngStream::root(123);
  for (int rep = 0; rep < 3; ++rep) {
    ParameterStore store;
    const int n = 5, w = 8, heads = 2;
    store.add("x", aft::random_mat(n, w, rng, 0.5));
    store.add("wq", aft::random_mat(w, w, rng, 0.4));
    store.add("wk", aft::random_mat(w, w, rng, 0.4));
    store.add("wv", aft::random_mat(w, w, rng, 0.4));
    auto loss_fn = [&](Tape& t) {
      Var x = t.param(store, "x");
      Var q = t.matmul(x, t.param(store, "wq"));
      Var k = t.matmul(x, t.param(store, "wk"));
      Var v = t.matmul(x, t.param(store, "wv"));
      return t.sum_squared(t.attention(q, k, v, heads));
    };
    RngStream coord_rng = rng.child(static_cast<std::uint64_t>(rep));
    CHECK(aft::fd_max_rel_error(store, loss_fn, coord_rng, 6) < 1e-5);
  }
}

TEST_CASE("encoder with zero weights is the identity on tokens") {
  EncoderConfig cfg{2, 8, 2, 16};
  ParameterStore store;
  RngStream rng = RngStream::root(1);
  init_encoder_params(store, "enc", cfg, rng);
  for (auto& [name, e] : store.entries()) e.value.setZero();

  Mat tokens = aft::random_mat(5, 8, rng);
  Tape tape;
  Var out = encoder_forward(tape, trainable_params(tape, store), "enc", cfg,
                            tape.constant(tokens));
  CHECK(aft::mats_bitwise_equal(out.value(), tokens));
}

TEST_CASE("attention over a single token returns its value projection") {
  // softmax over one key is 1, so the head output equals V itself
  RngStream rng = RngStream::root(2);
  Mat q = aft::random_mat(1, 6, rng);
  Mat k = aft::random_mat(1, 6, rng);
  Mat v = aft::random_mat(1, 6, rng);
  Tape tape;
  Var out = tape.attention(tape.constant(q), tape.constant(k), tape.constant(v), 1);
  CHECK((out.value() - v).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder is permutation-equivariant without positional structure") {
  EncoderConfig cfg{3, 8, 4, 12};
  ParameterStore store;
  RngStream rng = RngStream::root(17);
  init_encoder_params(store, "enc", cfg, rng);

  Mat tokens = aft::random_mat(6, 8, rng);
  Mat permuted = tokens;
  permuted.row(1) = tokens.row(4);
  permuted.row(4) = tokens.row(1);

  Tape t1, t2;
  Mat out = encoder_forward(t1, trainable_params(t1, store), "enc", cfg,
                            t1.constant(tokens))
                .value();
  Mat out_p = encoder_forward(t2, trainable_params(t2, store), "enc", cfg,
                              t2.constant(permuted))
                  .value();
  CHECK((out.row(1) - out_p.row(4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.row(4) - out_p.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out.row(0) - out_p.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("forward and backward are bitwise deterministic") {
  auto run = [](std::uint64_t seed) {
    RngStream rng = RngStream::root(seed);
    ParameterStore store;
    EncoderConfig cfg{2, 8, 2, 16};
    init_encoder_params(store, "enc", cfg, rng);
    Mat tokens = aft::random_mat(4, 8, rng);
    Tape tape;
    Var out = encoder_forward(tape, trainable_params(tape, store), "enc", cfg,
                              tape.constant(tokens));
    Var loss = tape.sum_squared(out);
    tape.backward(loss);
    return std::make_pair(loss.scalar(), store.grad("enc.l0.wq"));
  };
  auto [l1, g1] = run(33);
  auto [l2, g2] = run(33);
  CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
  CHECK(aft::mats_bitwise_equal(g1, g2));
}

TEST_CASE("clip_global_norm") {
  ParameterStore store;
  store.add("a", Mat::Zero(2, 2));
  store.add("b", Mat::Zero(1, 3));

  SUBCASE("below threshold is untouched") {
    store.grad("a")(0, 0) = 0.3;
    store.grad("b")(0, 1) = 0.4;  // norm 0.5
    CHECK(clip_global_norm(store, 1.0) == 1.0);
    CHECK(store.grad("a")(0, 0) == 0.3);
  }
  SUBCASE("scales exactly to the cap") {
    store.grad("a")(0, 0) = 2.0;  // norm 2
    CHECK(clip_global_norm(store, 1.0) == 0.5);
    CHECK(store.grad("a")(0, 0) == 1.0);
  }
  SUBCASE("post-clip norm equals min(pre, cap)") {
    RngStream rng = RngStream::root(4);
    store.grad("a") = aft::random_mat(2, 2, rng);
    store.grad("b") = aft::random_mat(1, 3, rng);
    const double pre = global_grad_norm(store);
    clip_global_norm(store, 1.0);
    CHECK(global_grad_norm(store) == doctest::Approx(std::min(pre, 1.0)).epsilon(1e-12));
  }
  SUBCASE("never increases the norm") {
    RngStream rng = RngStream::root(8);
    for (int rep = 0; rep < 20; ++rep) {
      store.grad("a") = aft::random_mat(2, 2, rng, 0.2);
      store.grad("b") = aft::random_mat(1, 3, rng, 0.2);
      const double pre = global_grad_norm(store);
      clip_global_norm(store, 1.0);
      CHECK(global_grad_norm(store) <= pre * (1.0 + 1e-15));
    }
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradients leave parameters unchanged") {
    ParameterStore store;
    store.add("w", Mat::Ones(2, 2));
    Adam adam(store, AdamConfig{0.1});
    adam.step();
    CHECK((store.value("w").array() - 1.0).abs().maxCoeff() == 0.0);
  }
  SUBCASE("single step matches the hand-computed update") {
    ParameterStore store;
    Mat w(1, 1);
    w << 1.0;
    store.add("w", w);
    store.grad("w")(0, 0) = 0.3;
    const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
    Adam adam(store, cfg);
    adam.step();
    const double m_hat = (0.1 * 0.3) / (1.0 - 0.9);
    const double v_hat = (0.001 * 0.09) / (1.0 - 0.999);
    const double expect = 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(store.value("w")(0, 0) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("identical state gives identical results") {
    auto run = []() {
      ParameterStore store;
      RngStream rng = RngStream::root(10);
      store.add("w", aft::random_mat(3, 3, rng));
      store.grad("w") = aft::random_mat(3, 3, rng);
      Adam adam(store, AdamConfig{0.01});
      for (int i = 0; i < 5; ++i) adam.step();
      return store.value("w").eval();
    };
    CHECK(aft::mats_bitwise_equal(run(), run()));
  }
  SUBCASE("rejects a non-positive learning rate") {
    ParameterStore store;
    store.add("w", Mat::Ones(1, 1));
    CHECK_THROWS_AS(Adam(store, AdamConfig{0.0}), UsageError);
  }
}

TEST_CASE("checkpoint round-trip is bitwise and order-stable") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "af_test_ckpt.bin").string();
  ParameterStore store;
  RngStream rng = RngStream::root(21);
  store.add("zeta", aft::random_mat(3, 5, rng));
  store.add("alpha", aft::random_mat(1, 7, rng));
  store.add("mid.key", aft::random_mat(4, 1, rng));

  nlohmann::json meta;
  meta["kind"] = "test";
  meta["rng"] = {{"key", 12345}, {"counter", 678}};
  save_checkpoint(path, store, meta);

  ParameterStore loaded;
  nlohmann::json meta2 = load_checkpoint(path, loaded);
  CHECK(meta2["kind"] == "test");
  CHECK(meta2["rng"]["counter"] == 678);
  CHECK(aft::stores_bitwise_equal(store, loaded));

  std::vector<std::string> names;
  for (const auto& [name, e] : loaded.entries()) names.push_back(name);
  CHECK(names == std::vector<std::string>{"alpha", "mid.key", "zeta"});

  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}

TEST_CASE("checkpoint loader rejects corrupt files") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "af_bad_ckpt.bin").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOTACKPT", f);
    std::fclose(f);
  }
  ParameterStore store;
  CHECK_THROWS_AS(load_checkpoint(path, store), IoError);
  std::filesystem::remove(path);
}

TEST_SUITE_END();
