#include <catch2/catch_amalgamated.hpp>

#include "nvem/encoder.hpp"
#include "support/fd_check.hpp"

using namespace nvem;
using ad::Mat;
using ad::Tape;
using ad::Var;

TEST_CASE("soft_attn basics with a bilinear form") {
  nn::ParamStore store(5);
  auto& W = store.create("W", 6, 4, nn::Init::FanIn);

  Tape t;
  Mat q = Mat::Random(6, 1);

  // identical keys -> uniform weights, context equals the key
  Mat keys(4, 5);
  Mat one_key = Mat::Random(4, 1);
  for (int i = 0; i < 5; ++i) keys.col(i) = one_key;
  auto r = soft_attn(t, t.constant(W.value), t.constant(q), t.constant(keys));
  for (int i = 0; i < 5; ++i)
    CHECK(t.val(r.weights)(i, 0) == Catch::Approx(0.2).epsilon(1e-12));
  for (int i = 0; i < 4; ++i)
    CHECK(t.val(r.context)(i, 0) == Catch::Approx(one_key(i, 0)).epsilon(1e-12));

  // a single unmasked key takes all the weight
  Mat keys2 = Mat::Random(4, 5);
  std::vector<std::uint8_t> mask = {0, 0, 0, 1, 0};
  auto r2 = soft_attn(t, t.constant(W.value), t.constant(q), t.constant(keys2), &mask);
  CHECK(t.val(r2.weights)(3, 0) == 1.0);
  CHECK(t.val(r2.weights)(0, 0) == 0.0);

  // weights sum to one and are non-negative
  auto r3 = soft_attn(t, t.constant(W.value), t.constant(q), t.constant(keys2));
  CHECK(t.val(r3.weights).sum() == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(t.val(r3.weights).minCoeff() >= 0.0);
}

TEST_CASE("soft_attn gradient w.r.t. the query matches finite differences") {
  nn::ParamStore store(6);
  auto& W = store.create("W", 6, 4, nn::Init::FanIn);
  Mat keys = Mat::Random(4, 7);
  Mat q = Mat::Random(6, 1);
  Mat probe = Mat::Random(4, 1);
  Mat q_grad = Mat::Zero(6, 1);

  auto eval = [&](bool grad) {
    Tape t;
    Var qv = t.leaf(q, &q_grad);
    auto r = soft_attn(t, t.constant(W.value), qv, t.constant(keys));
    Var loss = t.sum(t.cmul(r.context, t.constant(probe)));
    if (grad) t.backward(loss);
    return t.val(loss)(0, 0);
  };
  eval(true);
  double err = nvem::test::fd_max_rel_err(q, q_grad, [&] { return eval(false); });
  CHECK(err <= 1e-4);
}

TEST_CASE("encode_instruction shapes, masking, and determinism") {
  nn::ParamStore store(9);
  InstructionEncoder enc(store, 20, 8, 12, 16);

  Tape t;
  nn::ParamBinding P;
  P.reset(&t);

  auto single = enc.encode(t, P, {5});
  CHECK(t.cols(single.states) == 1);
  CHECK(t.rows(single.states) == 12);
  REQUIRE(single.mask.size() == 1);
  CHECK(single.mask[0] == 1);

  std::vector<int> tokens = {3, 7, 5, 9, 2};
  auto a = enc.encode(t, P, tokens);
  auto b = enc.encode(t, P, tokens);
  CHECK(t.val(a.states) == t.val(b.states));  // determinism

  std::vector<int> rev(tokens.rbegin(), tokens.rend());
  auto c = enc.encode(t, P, rev);
  CHECK(t.val(a.states) != t.val(c.states));  // order matters both directions

  // pad tokens are masked out
  auto d = enc.encode(t, P, {3, Vocab::kPad, 5});
  CHECK(d.mask[1] == 0);
  CHECK(d.mask[0] == 1);

  CHECK_THROWS_AS(enc.encode(t, P, std::vector<int>(17, 3)), std::invalid_argument);
  CHECK_THROWS_AS(enc.encode(t, P, {}), std::invalid_argument);
}

TEST_CASE("encoder gradients match finite differences") {
  nn::ParamStore store(10);
  InstructionEncoder enc(store, 12, 6, 8, 16);
  std::vector<int> tokens = {1, 4, 7, 2};
  Mat probe = Mat::Random(8, 4);

  auto eval = [&](bool grad) {
    Tape t;
    nn::ParamBinding P;
    P.reset(&t);
    auto e = enc.encode(t, P, tokens);
    Var loss = t.add(t.sum(t.cmul(e.states, t.constant(probe))),
                     t.sum(t.square(e.c_init)));
    if (grad) t.backward(loss);
    return t.val(loss)(0, 0);
  };
  store.zero_grad();
  eval(true);
  for (const char* name : {"embed.token", "enc.fwd.W_hh", "enc.bwd.W_ih",
                           "enc.proj.W", "enc.c2d.W"}) {
    auto& p = store.at(name);
    double err = nvem::test::fd_max_rel_err(p.value, p.grad,
                                            [&] { return eval(false); }, 1e-5, 60);
    INFO(name);
    CHECK(err <= 1e-4);
  }
}
