#pragma once

// Supernet mutations, applied independently of the sampler: partial channel
// connections, arch-parameter perturbations, and operation pruning.

#include <vector>

#include "confopt/rng.hpp"
#include "confopt/searchspace.hpp"
#include "confopt/tensor.hpp"

namespace confopt {

enum class PerturbMode { kNone, kRandom, kAdversarial };

struct MutationConfig {
  bool partial_connection = false;
  int K = 1;  // channel divisor
  PerturbMode perturbation = PerturbMode::kNone;
  double epsilon = 0.0;
  std::vector<int> prune_epochs;
  std::vector<double> prune_fractions;

  void validate() const;
};

// A 1/K channel subset passes through the weighted op mixture, the rest
// bypasses unchanged; outputs are re-concatenated and group-interleave
// shuffled (groups = K). The subset is resampled from `rng` per call.
// The edge must have been built at channels / K.
Var partial_channel_forward(NetContext& ctx, const MixedEdge& edge, Var x, Var weights,
                            const std::vector<int>& active, int chosen, int K, Philox& rng);

// Plain-weight convenience over the full op list.
Var partial_channel_forward_plain(NetContext& ctx, const MixedEdge& edge, Var x,
                                  const std::vector<double>& weights, int K, Philox& rng);

// Perturbed copy of alpha for the weight-update forward pass; the caller
// keeps the original for the arch-optimizer update. Random mode adds
// Uniform(-eps, eps) noise; adversarial takes one sign-ascent step along
// `val_grad` (the gradient of the validation loss w.r.t. alpha).
Tensor<float> perturb_alpha(const Tensor<float>& alpha, PerturbMode mode, double epsilon,
                            Philox& rng, const Tensor<float>* val_grad = nullptr);

// All-active masks for a fresh supernet.
PruneState make_prune_state(const OperationSet& opset, int edges_per_cell, bool has_reduce);

// Deactivate, per edge, the floor(fraction * active) active ops with the
// lowest sampler-activated weight. Never deactivates the last non-zero op;
// masks only ever shrink.
void prune(PruneState& state, const OperationSet& opset, const Tensor<float>& alpha_normal,
           const Tensor<float>* alpha_reduce, double fraction, SamplerKind sampler);

}  // namespace confopt
