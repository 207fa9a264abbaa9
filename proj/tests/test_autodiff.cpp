#include "doctest.h"

#include <cmath>

#include "confopt/gradcheck.hpp"
#include "confopt/ops.hpp"
#include "confopt/optim.hpp"
#include "confopt/primops.hpp"
#include "confopt/rng.hpp"

using namespace confopt;

namespace {

Tensor<double> rand_tensor(std::vector<int> shape, Philox& rng) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("identity preserves values and adds a tape node") {
  Tape<double> tape;
  Philox rng(7, 0);
  Var x = tape.leaf(rand_tensor({1, 2, 3, 3}, rng), true);
  size_t before = tape.size();
  Var y = ops::identity(tape, x);
  CHECK(tape.size() == before + 1);
  CHECK(tape.value(y).data == tape.value(x).data);
}

TEST_CASE("zero op yields zeros of the right shape") {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::full({1, 4, 8, 8}, 3.5), true);
  Var z = ops::zero_op(tape, x);
  CHECK(tape.value(z).shape == std::vector<int>{1, 4, 8, 8});
  for (double v : tape.value(z).data) CHECK(v == 0.0);

  // gradient to the input is identically zero
  Var loss = ops::sum(tape, z);
  tape.backward(loss);
  for (double v : tape.grad(x).data) CHECK(v == 0.0);
}

TEST_CASE("avg_pool 3x3 stride 1 pad 1 on a constant matches brute force") {
  // brute-force oracle over a 5x5 grid, zero padding counted in the divisor
  const int H = 5;
  const double c = 2.0;
  auto oracle = [&](int ho, int wo) {
    double acc = 0;
    for (int i = -1; i <= 1; ++i)
      for (int j = -1; j <= 1; ++j) {
        int h = ho + i, w = wo + j;
        if (h >= 0 && h < H && w >= 0 && w < H) acc += c;
      }
    return acc / 9.0;
  };
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::full({1, 1, H, H}, c), false);
  Var y = ops::avg_pool2d(tape, x, 3, 1, 1);
  for (int ho = 0; ho < H; ++ho)
    for (int wo = 0; wo < H; ++wo)
      CHECK(tape.value(y).data[ho * H + wo] == doctest::Approx(oracle(ho, wo)));
  // interior equals the constant
  CHECK(tape.value(y).data[2 * H + 2] == doctest::Approx(c));
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Tape<double> tape;
  Philox rng(3, 0);
  Var x = tape.leaf(rand_tensor({2, 3}, rng), true);
  tape.backward(ops::sum(tape, x));
  for (double v : tape.grad(x).data) CHECK(v == 1.0);
}

TEST_CASE("detached constant loss yields zero gradients") {
  Tape<double> tape;
  Philox rng(3, 1);
  Var x = tape.leaf(rand_tensor({2, 3}, rng), true);
  Var c = tape.leaf(Tensor<double>::scalar(0.0), false);
  tape.backward(c);
  for (double v : tape.grad(x).data) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::zeros({2, 2}), true);
  CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("conv shape mismatch names the op") {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>::zeros({1, 3, 5, 5}), true);
  Var w = tape.leaf(Tensor<double>::zeros({4, 2, 3, 3}), true);
  CHECK_THROWS_WITH_AS(ops::conv2d(tape, x, w, 1, 1), doctest::Contains("conv2d"),
                       std::invalid_argument);
}

TEST_CASE("two-layer conv-relu-linear network passes finite differences") {
  Philox rng(11, 0);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(rand_tensor({2, 2, 5, 5}, rng));   // x
  inputs.push_back(rand_tensor({3, 2, 3, 3}, rng));   // conv1 w
  inputs.push_back(rand_tensor({4, 3, 3, 3}, rng));   // conv2 w
  inputs.push_back(rand_tensor({2, 4}, rng));         // linear w
  GraphBuilder build = [](Tape<double>& t, const std::vector<Var>& v) {
    Var h1 = ops::relu(t, ops::conv2d(t, v[0], v[1], 1, 1));
    Var h2 = ops::relu(t, ops::conv2d(t, h1, v[2], 1, 1));
    Var pooled = ops::global_avg_pool(t, h2);
    Var logits = ops::linear(t, pooled, v[3]);
    return ops::cross_entropy(t, logits, {0, 1});
  };
  CHECK(finite_diff_max_rel_error(inputs, build) <= 1e-4);
}

TEST_CASE("grad_check covers every primitive at 1e-4") {
  for (const auto& report : grad_check_all(20, 1e-4)) {
    INFO("op: ", report.op, " err: ", report.max_rel_error);
    CHECK(report.passed(1e-4));
  }
}

TEST_CASE("grad_check identity error is at finite-difference rounding noise") {
  // analytic gradient is exact; the residual is the FD stencil's rounding
  CHECK(grad_check(PrimOp::kIdentity, 3, 1e-4).max_rel_error <= 1e-8);
}

TEST_CASE("softmax rows are positive and sum to one") {
  Philox rng(5, 0);
  Tape<double> tape;
  Var x = tape.leaf(rand_tensor({4, 7}, rng), false);
  Var p = ops::softmax_rows(tape, x);
  for (int n = 0; n < 4; ++n) {
    double s = 0;
    for (int c = 0; c < 7; ++c) {
      double v = tape.value(p).data[n * 7 + c];
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("cross entropy matches closed forms") {
  SUBCASE("uniform logits give ln(C)") {
    Tape<double> tape;
    Var logits = tape.leaf(Tensor<double>::zeros({1, 5}), false);
    Var loss = ops::cross_entropy(tape, logits, {3});
    CHECK(tape.value(loss).data[0] == doctest::Approx(std::log(5.0)));
  }
  SUBCASE("saturated true class gives ~0") {
    Tape<double> tape;
    Tensor<double> l = Tensor<double>::zeros({1, 3});
    l.data[1] = 100.0;
    Var loss = ops::cross_entropy(tape, tape.leaf(l, false), {1});
    CHECK(tape.value(loss).data[0] == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("logits [[1,2]] label 0 gives ln(1+e)") {
    Tape<double> tape;
    Var loss = ops::cross_entropy(tape, tape.leaf(Tensor<double>({1, 2}, {1.0, 2.0}), false), {0});
    CHECK(tape.value(loss).data[0] == doctest::Approx(std::log(1.0 + std::exp(1.0))));
  }
  SUBCASE("label out of range rejected") {
    Tape<double> tape;
    Var logits = tape.leaf(Tensor<double>::zeros({1, 3}), false);
    CHECK_THROWS_AS(ops::cross_entropy(tape, logits, {3}), std::invalid_argument);
  }
}

TEST_CASE("sgd step without momentum is a plain gradient step") {
  ParamSet params;
  int id = params.add("w", Tensor<float>({1}, {2.0f}));
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgd;
  cfg.lr = 1.0;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  Optimizer opt(cfg, {id});
  GradMap g(1);
  g.grads[0] = Tensor<float>({1}, {0.5f});
  opt.step(params, g);
  CHECK(params.value(id).data[0] == doctest::Approx(1.5f));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("sgd momentum accumulates velocity across steps") {
  ParamSet params;
  int id = params.add("w", Tensor<float>({1}, {0.0f}));
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgd;
  cfg.lr = 1.0;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  Optimizer opt(cfg, {id});
  GradMap g(1);
  g.grads[0] = Tensor<float>({1}, {0.5f});
  opt.step(params, g);
  float after_first = params.value(id).data[0];
  CHECK(after_first == doctest::Approx(-0.5f));
  opt.step(params, g);
  // second velocity: 0.5 + 0.9 * 0.5 = 0.95
  CHECK(params.value(id).data[0] - after_first == doctest::Approx(-0.95f));
}

TEST_CASE("adam step magnitude approaches lr under a constant gradient") {
  // scalar oracle over 100 steps
  ParamSet params;
  int id = params.add("w", Tensor<float>({1}, {0.0f}));
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kAdam;
  cfg.lr = 1e-3;
  cfg.beta1 = 0.5;
  cfg.beta2 = 0.999;
  cfg.weight_decay = 0.0;
  Optimizer opt(cfg, {id});
  GradMap g(1);
  g.grads[0] = Tensor<float>({1}, {0.3f});
  float prev = 0.0f;
  float last_step = 0.0f;
  for (int i = 0; i < 100; ++i) {
    opt.step(params, g);
    last_step = params.value(id).data[0] - prev;
    prev = params.value(id).data[0];
  }
  CHECK(std::fabs(last_step) == doctest::Approx(1e-3).epsilon(0.02));
  CHECK(last_step < 0.0f);
}

TEST_CASE("optimizer rejects a missing gradient entry") {
  ParamSet params;
  int id = params.add("w", Tensor<float>({1}, {1.0f}));
  Optimizer opt(OptimizerConfig{}, {id});
  GradMap g(1);
  CHECK_THROWS_AS(opt.step(params, g), std::invalid_argument);
}

TEST_CASE("cosine schedule hits the closed form") {
  LrSchedule s{LrSchedule::Kind::kCosineAnnealing, 0.1, 0.0, 10};
  CHECK(cosine_lr(0, s) == doctest::Approx(0.1));
  CHECK(cosine_lr(10, s) == doctest::Approx(0.0));
  CHECK(cosine_lr(5, s) == doctest::Approx(0.05));
  CHECK_THROWS_AS(cosine_lr(11, s), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(-1, s), std::invalid_argument);
}

TEST_CASE("philox streams are reproducible and distinct") {
  Philox a(42, 1), b(42, 1), c(42, 2);
  for (int i = 0; i < 100; ++i) {
    uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
  // state round-trip resumes the sequence
  Philox d(7, 3);
  for (int i = 0; i < 17; ++i) d.next_u32();
  auto st = d.state();
  std::vector<uint64_t> expect;
  for (int i = 0; i < 20; ++i) expect.push_back(d.next_u64());
  Philox e;
  e.set_state(st);
  for (int i = 0; i < 20; ++i) CHECK(e.next_u64() == expect[i]);
}

TEST_CASE("philox uniform_int is roughly uniform") {
  Philox rng(123, 0);
  std::vector<int> counts(8, 0);
  for (int i = 0; i < 80000; ++i) counts[rng.uniform_int(8)]++;
  for (int c : counts) CHECK(std::fabs(c - 10000) < 400);
}
