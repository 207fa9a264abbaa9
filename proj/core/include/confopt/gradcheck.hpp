#pragma once

// Central finite-difference gradient checks, always in 64-bit.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "confopt/primops.hpp"
#include "confopt/rng.hpp"
#include "confopt/tape.hpp"

namespace confopt {

// Builds a scalar loss from leaf vars (one per input tensor).
using GraphBuilder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

// Max relative error between analytic and central finite-difference
// gradients over all elements of all inputs. Error is scaled by
// max(|analytic|, |numeric|, 1e-3) so tiny gradients do not divide by noise.
inline double finite_diff_max_rel_error(std::vector<Tensor<double>> inputs,
                                        const GraphBuilder& build, double h = 1e-5) {
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> tape;
    std::vector<Var> leaves;
    leaves.reserve(xs.size());
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, false));
    Var loss = build(tape, leaves);
    return tape.value(loss).data.at(0);
  };

  Tape<double> tape;
  std::vector<Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x, true));
  Var loss = build(tape, leaves);
  tape.backward(loss);

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& g = tape.grad(leaves[i]);
    for (size_t j = 0; j < inputs[i].data.size(); ++j) {
      double orig = inputs[i].data[j];
      inputs[i].data[j] = orig + h;
      double fp = eval(inputs);
      inputs[i].data[j] = orig - h;
      double fm = eval(inputs);
      inputs[i].data[j] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double analytic = g.data[j];
      double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
      worst = std::max(worst, std::fabs(analytic - numeric) / scale);
    }
  }
  return worst;
}

struct GradCheckReport {
  std::string op;
  int trials = 0;
  double max_rel_error = 0.0;
  bool passed(double tol) const { return max_rel_error <= tol; }
};

// Random small instances (all dims <= 6) of a primitive op, checked through
// a sum-of-outputs loss. ReLU inputs are pushed away from the kink.
GradCheckReport grad_check(PrimOp kind, int trials, double tol, uint64_t seed = 1234);

// All primitives at once.
std::vector<GradCheckReport> grad_check_all(int trials, double tol, uint64_t seed = 1234);

}  // namespace confopt
