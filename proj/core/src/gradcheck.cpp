#include "confopt/gradcheck.hpp"

#include <stdexcept>

namespace confopt {

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Philox& rng, double away_from_zero = 0.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (auto& v : t.data) {
    v = rng.uniform(-1.0, 1.0);
    if (away_from_zero > 0.0) {
      // push away from the relu kink so the FD stencil stays one-sided
      if (std::fabs(v) < away_from_zero) v = v < 0 ? -away_from_zero : away_from_zero;
    }
  }
  return t;
}

}  // namespace

GradCheckReport grad_check(PrimOp kind, int trials, double tol, uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("grad_check: trials >= 1 required");
  (void)tol;
  GradCheckReport report;
  report.op = prim_op_name(kind);
  report.trials = trials;

  Philox rng(seed, hash_string(report.op));
  for (int trial = 0; trial < trials; ++trial) {
    int n = 1 + static_cast<int>(rng.uniform_int(2));
    int c = 2 + static_cast<int>(rng.uniform_int(3));
    int hw = 4 + static_cast<int>(rng.uniform_int(3));
    std::vector<Tensor<double>> inputs;
    size_t n_params = 0;
    switch (kind) {
      case PrimOp::kConv2d: {
        int co = 1 + static_cast<int>(rng.uniform_int(4));
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        inputs.push_back(random_tensor({co, c, 3, 3}, rng));
        n_params = 1;
        break;
      }
      case PrimOp::kDepthwiseConv2d:
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        inputs.push_back(random_tensor({c, 1, 3, 3}, rng));
        n_params = 1;
        break;
      case PrimOp::kPointwiseConv2d: {
        int co = 1 + static_cast<int>(rng.uniform_int(4));
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        inputs.push_back(random_tensor({co, c, 1, 1}, rng));
        n_params = 1;
        break;
      }
      case PrimOp::kDilatedConv2d:
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        inputs.push_back(random_tensor({c, 1, 3, 3}, rng));
        n_params = 1;
        break;
      case PrimOp::kMaxPool:
        // distinct values keep the argmax stable under the FD perturbation
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        for (size_t i = 0; i < inputs[0].data.size(); ++i) inputs[0].data[i] += 1e-3 * static_cast<double>(i);
        break;
      case PrimOp::kRelu:
        inputs.push_back(random_tensor({n, c, hw, hw}, rng, 1e-2));
        break;
      case PrimOp::kAvgPool:
      case PrimOp::kIdentity:
      case PrimOp::kZero:
      case PrimOp::kGlobalAvgPool:
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        break;
      case PrimOp::kBatchNorm:
        inputs.push_back(random_tensor({2, c, hw, hw}, rng));
        inputs.push_back(random_tensor({c}, rng));
        inputs.push_back(random_tensor({c}, rng));
        n_params = 2;
        break;
      case PrimOp::kLinear: {
        int f = 2 + static_cast<int>(rng.uniform_int(4));
        int o = 1 + static_cast<int>(rng.uniform_int(4));
        inputs.push_back(random_tensor({n + 1, f}, rng));
        inputs.push_back(random_tensor({o, f}, rng));
        inputs.push_back(random_tensor({o}, rng));
        n_params = 2;
        break;
      }
      case PrimOp::kSoftmax:
        inputs.push_back(random_tensor({n + 1, c}, rng));
        break;
      case PrimOp::kAdd:
      case PrimOp::kConcatChannels:
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        n_params = 1;
        break;
      case PrimOp::kScalarMul:
        inputs.push_back(random_tensor({n, c, hw, hw}, rng));
        inputs.push_back(random_tensor({1}, rng));
        n_params = 1;
        break;
    }

    // Random linear readout: distinct per-element weights catch permuted or
    // missing gradients that a plain sum would cancel out.
    uint64_t probe_seed = rng.next_u64();
    GraphBuilder build = [&, probe_seed](Tape<double>& tape, const std::vector<Var>& leaves) {
      std::vector<Var> params(leaves.begin() + 1, leaves.begin() + 1 + n_params);
      Var out = forward_op(tape, kind, params, leaves[0]);
      Philox probe_rng(probe_seed, 0);
      Tensor<double> probe = Tensor<double>::zeros(tape.value(out).shape);
      for (auto& v : probe.data) v = probe_rng.uniform(0.5, 1.5);
      Var probe_leaf = tape.leaf(std::move(probe), false);
      return ops::sum(tape, ops::mul(tape, out, probe_leaf));
    };
    double err = finite_diff_max_rel_error(inputs, build);
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  return report;
}

std::vector<GradCheckReport> grad_check_all(int trials, double tol, uint64_t seed) {
  std::vector<GradCheckReport> reports;
  for (const auto& [kind, name] : prim_op_names()) {
    (void)name;
    reports.push_back(grad_check(kind, trials, tol, seed));
  }
  return reports;
}

}  // namespace confopt
