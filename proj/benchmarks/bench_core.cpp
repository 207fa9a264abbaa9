#include <benchmark/benchmark.h>

#include "confopt/ops.hpp"
#include "confopt/searchspace.hpp"

using namespace confopt;

namespace {

Tensor<float> random_tensor(std::vector<int> shape, Philox& rng) {
  Tensor<float> t = Tensor<float>::zeros(shape);
  for (auto& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  int C = static_cast<int>(state.range(0));
  Philox rng(1, 0);
  Tensor<float> x = random_tensor({8, C, 8, 8}, rng);
  Tensor<float> w = random_tensor({C, C, 3, 3}, rng);
  for (auto _ : state) {
    Tape<float> tape;
    Var xv = tape.leaf(x, false);
    Var wv = tape.leaf(w, true);
    Var y = ops::conv2d(tape, xv, wv, 1, 1);
    Var loss = ops::sum(tape, y);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(wv).data.data());
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(8)->Arg(16);

void BM_SupernetForward(benchmark::State& state) {
  SupernetVariant variant = make_variant(VariantKind::kWide);
  OperationSet opset = make_operation_set(OpSetKind::kRegular);
  Supernet net(variant, opset, 10, 8, 1, false, 0);
  Philox arng(0, 0);
  net.reset_arch(SamplerKind::kDarts, arng);

  Philox drng(2, 0);
  Tensor<float> images = random_tensor({4, 3, 8, 8}, drng);
  for (auto _ : state) {
    Tape<float> tape;
    ForwardOptions opts;
    opts.weights_require_grad = false;
    opts.arch_requires_grad = false;
    ForwardResult r = net.forward(tape, images, opts);
    benchmark::DoNotOptimize(tape.value(r.logits).data.data());
  }
}
BENCHMARK(BM_SupernetForward);

void BM_SupernetBilevelGradients(benchmark::State& state) {
  SupernetVariant variant = make_variant(VariantKind::kWide);
  OperationSet opset = make_operation_set(OpSetKind::kRegular);
  Supernet net(variant, opset, 10, 8, 1, false, 0);
  Philox arng(0, 0);
  net.reset_arch(SamplerKind::kDarts, arng);

  Philox drng(2, 0);
  Tensor<float> images = random_tensor({4, 3, 8, 8}, drng);
  std::vector<int> labels = {0, 1, 2, 3};
  for (auto _ : state) {
    Tape<float> tape;
    ForwardResult r = net.forward(tape, images, {});
    Var loss = ops::cross_entropy(tape, r.logits, labels);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(r.alpha_var[0]).data.data());
  }
}
BENCHMARK(BM_SupernetBilevelGradients);

}  // namespace

BENCHMARK_MAIN();
