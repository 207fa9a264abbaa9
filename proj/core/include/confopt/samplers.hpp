#pragma once

// Architecture-parameter sampling strategies: the activation that turns a
// row of architecture parameters into mixture weights for one edge.
//  - darts:     softmax(alpha)
//  - gdas:      hard Gumbel-softmax with a straight-through gradient
//  - drnas:     one Dirichlet draw, concentrations exp(alpha)
//  - fairdarts: elementwise sigmoid (not normalized)
// Plain-value variants exist alongside the tape variants for discretization
// and statistical tests.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "confopt/mathutil.hpp"
#include "confopt/ops.hpp"
#include "confopt/rng.hpp"
#include "confopt/tape.hpp"

namespace confopt {

enum class SamplerKind { kDarts, kGdas, kDrnas, kFairdarts };

std::string sampler_kind_name(SamplerKind k);
SamplerKind parse_sampler_kind(const std::string& s);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kDarts;
  double tau_start = 10.0;  // GDAS temperature, annealed linearly
  double tau_end = 0.1;
  uint64_t seed = 0;
};

// Linear anneal of the Gumbel temperature over the search epochs.
double gdas_tau(const SamplerConfig& cfg, int epoch, int total_epochs);

// ---------------------------------------------------------------------------
// Plain-value activations (no tape)

std::vector<double> darts_weights(const std::vector<double>& alpha_row);
std::vector<double> fairdarts_weights(const std::vector<double>& alpha_row);

// One Dirichlet draw with concentrations exp(log_conc_row).
std::vector<double> drnas_sample_plain(const std::vector<double>& log_conc_row, Philox& rng);

struct GdasDraw {
  int chosen_index = 0;
  std::vector<double> soft;  // softmax((alpha + g) / tau)
};
// noise_override, when non-null, replaces the Gumbel draw (test hook).
GdasDraw gdas_draw(const std::vector<double>& alpha_row, double tau, Philox& rng,
                   const std::vector<double>* noise_override = nullptr);

// Activation used to rank ops at discretization/pruning time. For drnas the
// ranking weight is the Dirichlet mean; gdas ranks by softmax(alpha).
std::vector<double> ranking_weights(SamplerKind kind, const std::vector<double>& alpha_row);

// Marsaglia-Tsang Gamma(a, 1) sampler.
double sample_gamma(double a, Philox& rng);

// ---------------------------------------------------------------------------
// Tape variants

template <typename T>
Var darts_weights_on_tape(Tape<T>& tape, Var alpha_row) {
  return ops::softmax1d(tape, alpha_row);
}

template <typename T>
Var fairdarts_weights_on_tape(Tape<T>& tape, Var alpha_row) {
  return ops::sigmoid(tape, alpha_row);
}

// Gamma draws z_i ~ Gamma(exp-free concentration conc_i, 1) with the
// implicit reparameterization gradient dz/dconc stored at sample time.
template <typename T>
Var gamma_sample(Tape<T>& tape, Var conc, Philox& rng) {
  const Tensor<T>& cv = tape.value(conc);
  ops::require(cv.rank() == 1, "gamma_sample", "expected vector, got " + shape_str(cv.shape));
  int K = cv.shape[0];
  Tensor<T> z = Tensor<T>::zeros(cv.shape);
  std::vector<double> dz(K);
  for (int i = 0; i < K; ++i) {
    double a = static_cast<double>(cv.data[i]);
    if (!std::isfinite(a) || a <= 0.0) {
      throw std::invalid_argument("gamma_sample: non-finite or non-positive concentration");
    }
    double draw = sample_gamma(a, rng);
    draw = std::max(draw, 1e-20);
    z.data[i] = static_cast<T>(draw);
    dz[i] = gamma_implicit_grad(a, draw);
  }
  return tape.node(std::move(z), {conc}, [conc, dz, K](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gc = g;
    for (int i = 0; i < K; ++i) gc.data[i] *= static_cast<T>(dz[i]);
    t.accumulate(conc, gc);
  });
}

// Full DrNAS edge activation: dirichlet = gamma draws / sum.
template <typename T>
Var drnas_weights_on_tape(Tape<T>& tape, Var log_conc_row, Philox& rng) {
  Var conc = ops::exp_op(tape, log_conc_row);
  Var z = gamma_sample(tape, conc, rng);
  Var s = ops::sum(tape, z);
  return ops::div_by_scalar(tape, z, s);
}

// GDAS on tape: returns (chosen index, straight-through weight vector).
// Forward value of the weights is exactly one-hot; the gradient flows
// through the soft Gumbel-softmax path.
template <typename T>
std::pair<int, Var> gdas_weights_on_tape(Tape<T>& tape, Var alpha_row, double tau, Philox& rng,
                                         const std::vector<double>* noise_override = nullptr) {
  if (tau <= 0.0) throw std::invalid_argument("gdas: tau must be positive");
  const Tensor<T>& av = tape.value(alpha_row);
  int K = av.shape.at(0);
  Tensor<T> noise = Tensor<T>::zeros({K});
  for (int i = 0; i < K; ++i) {
    noise.data[i] = static_cast<T>(noise_override ? (*noise_override)[i] : rng.gumbel());
  }
  Var noisy = ops::add_noise(tape, alpha_row, noise);
  Var scaled = ops::scale_const(tape, noisy, static_cast<T>(1.0 / tau));
  Var soft = ops::softmax1d(tape, scaled);
  const auto& sv = tape.value(soft).data;
  int chosen = 0;
  for (int i = 1; i < K; ++i)
    if (sv[i] > sv[chosen]) chosen = i;
  Var st = ops::straight_through_onehot(tape, soft, chosen);
  return {chosen, st};
}

// PC-DARTS edge normalization: node input = sum_e softmax(beta)[e] * out_e.
template <typename T>
Var edge_normalization(Tape<T>& tape, Var beta_row, const std::vector<Var>& edge_outputs) {
  const Tensor<T>& bv = tape.value(beta_row);
  ops::require(bv.rank() == 1 && bv.shape[0] == static_cast<int>(edge_outputs.size()),
               "edge_normalization",
               "beta " + shape_str(bv.shape) + " vs " + std::to_string(edge_outputs.size()) + " edges");
  Var w = ops::softmax1d(tape, beta_row);
  Var acc = -1;
  for (size_t e = 0; e < edge_outputs.size(); ++e) {
    Var term = ops::scale_by_element(tape, edge_outputs[e], w, static_cast<int>(e));
    acc = acc < 0 ? term : ops::add(tape, acc, term);
  }
  return acc;
}

}  // namespace confopt
