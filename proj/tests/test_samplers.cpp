#include "doctest.h"

#include <cmath>

#include "confopt/gradcheck.hpp"
#include "confopt/mathutil.hpp"
#include "confopt/samplers.hpp"

using namespace confopt;

TEST_CASE("darts weights: symmetry, log-weights, overflow guard") {
  auto w = darts_weights({0, 0, 0, 0});
  for (double v : w) CHECK(v == doctest::Approx(0.25));

  w = darts_weights({std::log(1.0), std::log(3.0)});
  CHECK(w[0] == doctest::Approx(0.25));
  CHECK(w[1] == doctest::Approx(0.75));

  w = darts_weights({1000.0, 0.0});
  CHECK(std::isfinite(w[0]));
  CHECK(w[0] == doctest::Approx(1.0));
  CHECK(w[1] == doctest::Approx(0.0));
}

TEST_CASE("darts weights sum to one for random rows") {
  Philox rng(99, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> row(8);
    for (auto& v : row) v = rng.uniform(-5.0, 5.0);
    auto w = darts_weights(row);
    double s = 0;
    for (double v : w) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("fairdarts weights: sigmoid values, saturation, no normalization") {
  auto w = fairdarts_weights({0.0, 0.0});
  CHECK(w[0] == doctest::Approx(0.5));
  CHECK(w[1] == doctest::Approx(0.5));

  w = fairdarts_weights({-100.0});
  CHECK(w[0] == doctest::Approx(0.0));
  CHECK(std::isfinite(w[0]));

  w = fairdarts_weights({std::log(3.0)});
  CHECK(w[0] == doctest::Approx(0.75));
}

TEST_CASE("fairdarts is order preserving") {
  Philox rng(5, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> row(6);
    for (auto& v : row) v = rng.uniform(-3.0, 3.0);
    auto w = fairdarts_weights(row);
    for (size_t i = 0; i < row.size(); ++i)
      for (size_t j = 0; j < row.size(); ++j)
        if (row[i] < row[j]) CHECK(w[i] < w[j]);
  }
}

TEST_CASE("gdas zero-noise draw is the argmax") {
  Philox rng(1, 0);
  std::vector<double> zero_noise = {0, 0, 0};
  auto draw = gdas_draw({1.0, 2.0, 3.0}, 1.0, rng, &zero_noise);
  CHECK(draw.chosen_index == 2);
}

TEST_CASE("gdas rejects non-positive tau") {
  Philox rng(1, 0);
  CHECK_THROWS_AS(gdas_draw({0.0, 1.0}, 0.0, rng), std::invalid_argument);
  Tape<double> tape;
  Var row = tape.leaf(Tensor<double>({2}, {0.0, 1.0}), true);
  CHECK_THROWS_AS(gdas_weights_on_tape(tape, row, -1.0, rng), std::invalid_argument);
}

TEST_CASE("gdas choice frequency under uniform alpha is uniform within 2%") {
  Philox rng(2024, 0);
  int counts[2] = {0, 0};
  for (int i = 0; i < 10000; ++i) {
    counts[gdas_draw({0.0, 0.0}, 1.0, rng).chosen_index]++;
  }
  CHECK(std::fabs(counts[0] / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("gdas straight-through: one-hot forward, soft gradient") {
  Philox rng(7, 0);
  Tensor<double> alpha({4}, {0.3, -0.2, 0.9, 0.1});
  // fixed noise so both paths see the same draw
  std::vector<double> noise = {0.11, 0.42, -0.3, 0.25};
  double tau = 2.0;

  Tape<double> tape;
  Var row = tape.leaf(alpha, true);
  auto [chosen, st] = gdas_weights_on_tape(tape, row, tau, rng, &noise);

  // forward is exactly one-hot
  for (int i = 0; i < 4; ++i) {
    CHECK(tape.value(st).data[i] == (i == chosen ? 1.0 : 0.0));
  }

  // gradient of a probe loss through st equals the gradient through an
  // explicit soft-path tape
  Tensor<double> probe({4}, {0.7, -1.3, 2.1, 0.4});
  Var loss = ops::sum(tape, ops::mul(tape, st, tape.leaf(probe, false)));
  tape.backward(loss);
  Tensor<double> grad_st = tape.grad(row);

  Tape<double> soft_tape;
  Var row2 = soft_tape.leaf(alpha, true);
  Tensor<double> noise_t({4}, {noise[0], noise[1], noise[2], noise[3]});
  Var soft = ops::softmax1d(
      soft_tape, ops::scale_const(soft_tape, ops::add_noise(soft_tape, row2, noise_t), 1.0 / tau));
  Var loss2 = ops::sum(soft_tape, ops::mul(soft_tape, soft, soft_tape.leaf(probe, false)));
  soft_tape.backward(loss2);
  Tensor<double> grad_soft = soft_tape.grad(row2);

  for (int i = 0; i < 4; ++i) CHECK(grad_st.data[i] == doctest::Approx(grad_soft.data[i]));
}

TEST_CASE("dirichlet draws are simplex points") {
  Philox rng(3, 0);
  for (int trial = 0; trial < 100; ++trial) {
    auto d = drnas_sample_plain({0.5, -0.3, 1.2}, rng);
    double s = 0;
    for (double v : d) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::fabs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("dirichlet empirical means match concentration ratios") {
  Philox rng(41, 0);
  SUBCASE("uniform concentration [1,1,1]") {
    std::vector<double> mean(3, 0.0);
    for (int i = 0; i < 10000; ++i) {
      auto d = drnas_sample_plain({0.0, 0.0, 0.0}, rng);
      for (int k = 0; k < 3; ++k) mean[k] += d[k];
    }
    for (int k = 0; k < 3; ++k) CHECK(std::fabs(mean[k] / 10000.0 - 1.0 / 3.0) < 0.02);
  }
  SUBCASE("concentration [100, 1]") {
    double mean0 = 0.0;
    for (int i = 0; i < 10000; ++i) mean0 += drnas_sample_plain({std::log(100.0), 0.0}, rng)[0];
    CHECK(std::fabs(mean0 / 10000.0 - 100.0 / 101.0) < 0.01);
  }
}

TEST_CASE("drnas rejects non-finite concentration") {
  Philox rng(0, 0);
  CHECK_THROWS_AS(drnas_sample_plain({std::nan("")}, rng), std::invalid_argument);
}

TEST_CASE("gamma implicit gradient matches inverse-CDF finite differences") {
  // oracle: z(a) = P^{-1}(a, u) at fixed u; dz/da by central difference
  Philox rng(17, 0);
  for (double a : {0.7, 1.0, 2.5, 8.0}) {
    double z = sample_gamma(a, rng);
    double u = gammp(a, z);
    if (u < 1e-6 || u > 1.0 - 1e-6) continue;
    double h = 1e-4 * std::max(1.0, a);
    double numeric = (inv_gammp(a + h, u) - inv_gammp(a - h, u)) / (2.0 * h);
    double analytic = gamma_implicit_grad(a, z);
    CHECK(analytic == doctest::Approx(numeric).epsilon(1e-3));
  }
}

TEST_CASE("drnas weights on tape are differentiable and normalized") {
  Philox rng(23, 0);
  Tape<double> tape;
  Var row = tape.leaf(Tensor<double>({3}, {0.2, -0.1, 0.4}), true);
  Var w = drnas_weights_on_tape(tape, row, rng);
  double s = 0;
  for (double v : tape.value(w).data) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  Var loss = ops::sum(tape, ops::mul(tape, w, w));
  tape.backward(loss);
  for (double g : tape.grad(row).data) CHECK(std::isfinite(g));
}

TEST_CASE("edge normalization mixes node inputs by softmax(beta)") {
  Tape<double> tape;
  auto edge_out = [&](double c) { return tape.leaf(Tensor<double>::full({1, 2, 3, 3}, c), false); };

  SUBCASE("single incoming edge is the identity") {
    Var beta = tape.leaf(Tensor<double>({1}, {0.42}), true);
    Var out = edge_normalization(tape, beta, {edge_out(1.5)});
    for (double v : tape.value(out).data) CHECK(v == doctest::Approx(1.5));
  }
  SUBCASE("equal beta over k edges mixes uniformly") {
    Var beta = tape.leaf(Tensor<double>::zeros({3}), true);
    Var out = edge_normalization(tape, beta, {edge_out(3.0), edge_out(6.0), edge_out(9.0)});
    for (double v : tape.value(out).data) CHECK(v == doctest::Approx(6.0));
  }
  SUBCASE("beta [ln1, ln3] gives 0.25a + 0.75b") {
    Var beta = tape.leaf(Tensor<double>({2}, {std::log(1.0), std::log(3.0)}), true);
    Var out = edge_normalization(tape, beta, {edge_out(1.0), edge_out(2.0)});
    for (double v : tape.value(out).data) CHECK(v == doctest::Approx(0.25 * 1.0 + 0.75 * 2.0));
  }
  SUBCASE("length mismatch rejected") {
    Var beta = tape.leaf(Tensor<double>::zeros({2}), true);
    CHECK_THROWS_AS(edge_normalization(tape, beta, {edge_out(1.0)}), std::invalid_argument);
  }
}

TEST_CASE("edge normalization gradient passes finite differences") {
  Philox rng(31, 0);
  std::vector<Tensor<double>> inputs;
  inputs.push_back(Tensor<double>({3}, {0.3, -0.5, 0.2}));  // beta
  for (int e = 0; e < 3; ++e) {
    auto t = Tensor<double>::zeros({1, 2, 2, 2});
    for (auto& v : t.data) v = rng.uniform(-1.0, 1.0);
    inputs.push_back(t);
  }
  GraphBuilder build = [](Tape<double>& t, const std::vector<Var>& v) {
    Var out = edge_normalization(t, v[0], {v[1], v[2], v[3]});
    return ops::sum(t, ops::mul(t, out, out));
  };
  CHECK(finite_diff_max_rel_error(inputs, build) <= 1e-4);
}

TEST_CASE("gdas tau anneals linearly from tau_start to tau_end") {
  SamplerConfig cfg;
  cfg.tau_start = 10.0;
  cfg.tau_end = 0.1;
  CHECK(gdas_tau(cfg, 0, 100) == doctest::Approx(10.0));
  CHECK(gdas_tau(cfg, 99, 100) == doctest::Approx(0.1));
  CHECK(gdas_tau(cfg, 50, 100) > 0.1);
  CHECK(gdas_tau(cfg, 50, 100) < 10.0);
}
