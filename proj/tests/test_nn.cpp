#include <catch2/catch_amalgamated.hpp>

#include "nvem/nn.hpp"
#include "support/fd_check.hpp"

using namespace nvem;
using ad::Mat;
using ad::Tape;
using ad::Var;

TEST_CASE("parameter init depends only on store seed and name") {
  nn::ParamStore a(42), b(42), c(43);
  // creation order differs between a and b
  a.create("x.W", 4, 6, nn::Init::FanIn);
  a.create("y.W", 3, 3, nn::Init::FanIn);
  b.create("y.W", 3, 3, nn::Init::FanIn);
  b.create("x.W", 4, 6, nn::Init::FanIn);
  c.create("x.W", 4, 6, nn::Init::FanIn);
  CHECK(a.at("x.W").value == b.at("x.W").value);
  CHECK(a.at("y.W").value == b.at("y.W").value);
  CHECK(a.at("x.W").value != c.at("x.W").value);

  double bound = 1.0 / std::sqrt(6.0);
  CHECK(a.at("x.W").value.maxCoeff() <= bound);
  CHECK(a.at("x.W").value.minCoeff() >= -bound);
}

TEST_CASE("rmsprop step with zero gradient leaves parameters unchanged") {
  nn::ParamStore store(1);
  auto& p = store.create("w", 3, 3, nn::Init::FanIn);
  Mat before = p.value;
  store.zero_grad();
  nn::RmsProp opt;
  opt.step(store);
  opt.step(store);
  CHECK(p.value == before);
}

TEST_CASE("gradient clipping rescales to the max norm") {
  nn::ParamStore store(2);
  auto& p = store.create("w", 2, 2, nn::Init::FanIn);
  p.grad = Mat::Constant(2, 2, 10.0);  // norm 20
  store.clip_grad(5.0);
  CHECK(store.grad_norm() == Catch::Approx(5.0));
  store.zero_grad();
  p.grad = Mat::Constant(2, 2, 0.1);  // norm 0.2, under the cap
  Mat g = p.grad;
  store.clip_grad(5.0);
  CHECK(p.grad == g);
}

TEST_CASE("parameter json round-trip and shape verification") {
  nn::ParamStore store(3);
  store.create("a", 2, 3, nn::Init::FanIn);
  store.create("b", 1, 4, nn::Init::Embedding);
  auto j = store.values_to_json();

  nn::ParamStore loaded(99);
  loaded.create("a", 2, 3, nn::Init::Zero);
  loaded.create("b", 1, 4, nn::Init::Zero);
  loaded.values_from_json(j);
  CHECK(loaded.at("a").value == store.at("a").value);
  CHECK(loaded.at("b").value == store.at("b").value);

  nn::ParamStore wrong(99);
  wrong.create("a", 3, 2, nn::Init::Zero);
  wrong.create("b", 1, 4, nn::Init::Zero);
  CHECK_THROWS_AS(wrong.values_from_json(j), std::runtime_error);

  nn::ParamStore missing(99);
  missing.create("a", 2, 3, nn::Init::Zero);
  CHECK_THROWS_AS(missing.values_from_json(j), std::runtime_error);
}

TEST_CASE("lstm cell gradients match finite differences") {
  nn::ParamStore store(7);
  int H = 5, in = 4;
  nn::LstmCellParams cell{&store.create("l.W_ih", 4 * H, in, nn::Init::FanIn),
                          &store.create("l.W_hh", 4 * H, H, nn::Init::FanIn),
                          &store.create("l.b", 4 * H, 1, nn::Init::Zero)};
  Mat x = Mat::Random(in, 1), h0 = Mat::Random(H, 1), c0 = Mat::Random(H, 1);

  auto eval = [&](bool grad) {
    Tape tape;
    nn::ParamBinding P;
    P.reset(&tape);
    auto st = nn::lstm_cell(tape, P, cell, tape.constant(x), tape.constant(h0),
                            tape.constant(c0));
    // two chained steps to exercise state reuse
    auto st2 = nn::lstm_cell(tape, P, cell, tape.constant(x), st.h, st.c);
    Var loss = tape.sum(tape.cmul(st2.h, st2.h));
    if (grad) tape.backward(loss);
    return tape.val(loss)(0, 0);
  };

  store.zero_grad();
  eval(true);
  for (const char* name : {"l.W_ih", "l.W_hh", "l.b"}) {
    auto& p = store.at(name);
    double err =
        nvem::test::fd_max_rel_err(p.value, p.grad, [&] { return eval(false); });
    INFO(name);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("rmsprop fits a small least-squares problem") {
  nn::ParamStore store(11);
  auto& w = store.create("w", 1, 3, nn::Init::FanIn);
  Mat X = Mat::Random(3, 16);
  Mat target = Mat::Random(1, 3);
  Mat y = target * X;

  nn::RmsProp opt;
  opt.lr = 1e-2;
  double loss0 = 0.0, loss_end = 0.0;
  for (int it = 0; it < 400; ++it) {
    Tape tape;
    Var pred = tape.matmul(tape.leaf(w.value, &w.grad), tape.constant(X));
    Var err = tape.sub(pred, tape.constant(y));
    Var loss = tape.sum(tape.square(err));
    store.zero_grad();
    tape.backward(loss);
    opt.step(store);
    if (it == 0) loss0 = tape.val(loss)(0, 0);
    loss_end = tape.val(loss)(0, 0);
  }
  CHECK(loss_end < 1e-3 * loss0);
}
