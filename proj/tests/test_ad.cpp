#include <catch2/catch_amalgamated.hpp>

#include "nvem/ad.hpp"
#include "support/fd_check.hpp"

#include <random>

using namespace nvem;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

Mat randm(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

// Checks d(sum(W .* f(inputs)))/d(input_k) for every input against central
// finite differences.
void check_op(std::vector<Mat> inputs,
              const std::function<Var(Tape&, std::vector<Var>&)>& build,
              double tol = 1e-7) {
  std::vector<Mat> sinks;
  auto eval = [&](bool want_grad) -> double {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t k = 0; k < inputs.size(); ++k)
      vars.push_back(tape.leaf(inputs[k], &sinks[k]));
    Var out = build(tape, vars);
    Mat w = randm(tape.rows(out), tape.cols(out), 77);
    Var loss = tape.sum(tape.cmul(out, tape.constant(w)));
    if (want_grad) tape.backward(loss);
    return tape.val(loss)(0, 0);
  };
  sinks.clear();
  for (auto& in : inputs) sinks.push_back(Mat::Zero(in.rows(), in.cols()));
  eval(true);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double err = nvem::test::fd_max_rel_err(
        inputs[k], sinks[k], [&] { return eval(false); });
    INFO("input " << k);
    CHECK(err < tol);
  }
}

}  // namespace

TEST_CASE("ad arithmetic ops match finite differences") {
  check_op({randm(3, 4, 1), randm(3, 4, 2)},
           [](Tape& t, std::vector<Var>& v) { return t.add(v[0], v[1]); });
  check_op({randm(3, 4, 3), randm(3, 4, 4)},
           [](Tape& t, std::vector<Var>& v) { return t.sub(v[0], v[1]); });
  check_op({randm(3, 4, 5)},
           [](Tape& t, std::vector<Var>& v) { return t.scale(v[0], -2.5); });
  check_op({randm(3, 4, 6), randm(3, 4, 7)},
           [](Tape& t, std::vector<Var>& v) { return t.cmul(v[0], v[1]); });
  check_op({randm(1, 1, 8), randm(3, 4, 9)},
           [](Tape& t, std::vector<Var>& v) { return t.smul(v[0], v[1]); });
}

TEST_CASE("ad matmul variants match finite differences") {
  check_op({randm(3, 4, 10), randm(4, 5, 11)},
           [](Tape& t, std::vector<Var>& v) { return t.matmul(v[0], v[1]); });
  check_op({randm(4, 3, 12), randm(4, 5, 13)},
           [](Tape& t, std::vector<Var>& v) { return t.matmul_tn(v[0], v[1]); });
  check_op({randm(3, 4, 14), randm(5, 4, 15)},
           [](Tape& t, std::vector<Var>& v) { return t.matmul_nt(v[0], v[1]); });
}

TEST_CASE("ad shape ops match finite differences") {
  check_op({randm(3, 4, 16), randm(2, 4, 17)},
           [](Tape& t, std::vector<Var>& v) { return t.vcat(v[0], v[1]); });
  check_op({randm(6, 4, 18)},
           [](Tape& t, std::vector<Var>& v) { return t.rows(v[0], 1, 3); });
  check_op({randm(4, 6, 19)},
           [](Tape& t, std::vector<Var>& v) { return t.cols(v[0], 2, 3); });
  check_op({randm(3, 2, 20), randm(3, 4, 21), randm(3, 1, 22)},
           [](Tape& t, std::vector<Var>& v) {
             return t.concat_cols({v[0], v[1], v[2]});
           });
  check_op({randm(4, 7, 23)}, [](Tape& t, std::vector<Var>& v) {
    return t.gather_cols(v[0], {0, 3, 3, 6, 1});
  });
  check_op({randm(3, 5, 24), randm(3, 1, 25)},
           [](Tape& t, std::vector<Var>& v) { return t.add_colbias(v[0], v[1]); });
}

TEST_CASE("ad nonlinearities match finite differences") {
  check_op({randm(3, 4, 26)},
           [](Tape& t, std::vector<Var>& v) { return t.tanh(v[0]); });
  check_op({randm(3, 4, 27)},
           [](Tape& t, std::vector<Var>& v) { return t.sigmoid(v[0]); });
  check_op({randm(3, 4, 28)},
           [](Tape& t, std::vector<Var>& v) { return t.square(v[0]); });
}

TEST_CASE("ad softmax family matches finite differences") {
  check_op({randm(6, 1, 29)},
           [](Tape& t, std::vector<Var>& v) { return t.softmax_masked(v[0]); });
  static const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0, 1};
  check_op({randm(6, 1, 30)}, [](Tape& t, std::vector<Var>& v) {
    return t.softmax_masked(v[0], &mask);
  });
  check_op({randm(6, 1, 31)},
           [](Tape& t, std::vector<Var>& v) { return t.log_softmax(v[0]); });
}

TEST_CASE("ad reductions match finite differences") {
  check_op({randm(3, 4, 32)},
           [](Tape& t, std::vector<Var>& v) { return t.sum(v[0]); });
  check_op({randm(5, 1, 33), randm(5, 1, 34)},
           [](Tape& t, std::vector<Var>& v) { return t.dot(v[0], v[1]); });
  check_op({randm(4, 3, 35)},
           [](Tape& t, std::vector<Var>& v) { return t.pick(v[0], 2, 1); });
}

TEST_CASE("ad handles fan-out (a var consumed twice)") {
  check_op({randm(3, 3, 36)}, [](Tape& t, std::vector<Var>& v) {
    return t.add(t.tanh(v[0]), t.matmul(v[0], v[0]));
  });
}

TEST_CASE("ad softmax properties") {
  Tape tape;
  Mat s = randm(5, 1, 40);
  Var w = tape.softmax_masked(tape.constant(s));
  CHECK(tape.val(w).sum() == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(tape.val(w).minCoeff() > 0.0);

  // shift invariance
  Var w2 = tape.softmax_masked(tape.constant(Mat(s.array() + 3.7)));
  for (int i = 0; i < 5; ++i)
    CHECK(tape.val(w2)(i, 0) == Catch::Approx(tape.val(w)(i, 0)).epsilon(1e-12));

  // identical scores -> uniform
  Var w3 = tape.softmax_masked(tape.constant(Mat::Constant(4, 1, 0.3)));
  for (int i = 0; i < 4; ++i)
    CHECK(tape.val(w3)(i, 0) == Catch::Approx(0.25).epsilon(1e-12));

  // masked slots carry exactly zero weight
  std::vector<std::uint8_t> mask = {1, 0, 1, 0, 1};
  Var w4 = tape.softmax_masked(tape.constant(s), &mask);
  CHECK(tape.val(w4)(1, 0) == 0.0);
  CHECK(tape.val(w4)(3, 0) == 0.0);
  CHECK(tape.val(w4).sum() == Catch::Approx(1.0).epsilon(1e-12));

  // one unmasked slot -> all weight on it
  std::vector<std::uint8_t> single = {0, 0, 1, 0, 0};
  Var w5 = tape.softmax_masked(tape.constant(s), &single);
  CHECK(tape.val(w5)(2, 0) == 1.0);

  // all masked is fatal
  std::vector<std::uint8_t> none = {0, 0, 0, 0, 0};
  CHECK_THROWS_AS(tape.softmax_masked(tape.constant(s), &none), std::domain_error);
}

TEST_CASE("ad stop_grad blocks gradient flow") {
  Tape tape;
  Mat x = randm(3, 1, 41);
  Mat sink = Mat::Zero(3, 1);
  Var v = tape.leaf(x, &sink);
  Var loss = tape.sum(tape.cmul(tape.stop_grad(v), v));
  tape.backward(loss);
  // d/dx sum(c .* x) with c = stop_grad(x): gradient is x itself, not 2x.
  for (int i = 0; i < 3; ++i) CHECK(sink(i, 0) == Catch::Approx(x(i, 0)));
}

TEST_CASE("ad shape mismatches throw") {
  Tape tape;
  Var a = tape.constant(Mat::Zero(2, 3));
  Var b = tape.constant(Mat::Zero(3, 2));
  CHECK_THROWS_AS(tape.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tape.matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(tape.backward(a), std::invalid_argument);
}
