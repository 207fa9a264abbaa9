#include "confopt/mutations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "confopt/ops.hpp"

namespace confopt {

void MutationConfig::validate() const {
  if (K < 1) throw std::invalid_argument("mutation config: K >= 1 required");
  if (epsilon < 0) throw std::invalid_argument("mutation config: epsilon >= 0 required");
  if (prune_epochs.size() != prune_fractions.size()) {
    throw std::invalid_argument("mutation config: prune_epochs and prune_fractions must match");
  }
  for (size_t i = 0; i < prune_epochs.size(); ++i) {
    if (i > 0 && prune_epochs[i] <= prune_epochs[i - 1]) {
      throw std::invalid_argument("mutation config: prune_epochs must be strictly increasing");
    }
    if (prune_fractions[i] <= 0.0 || prune_fractions[i] >= 1.0) {
      throw std::invalid_argument("mutation config: prune fractions must be in (0,1)");
    }
  }
}

Var partial_channel_forward(NetContext& ctx, const MixedEdge& edge, Var x, Var weights,
                            const std::vector<int>& active, int chosen, int K, Philox& rng) {
  if (K < 1) throw std::invalid_argument("partial_channel_forward: K >= 1 required");
  if (K == 1) return edge.forward(ctx, x, weights, active, chosen);
  const auto& xs = ctx.tape.value(x).shape;
  if (xs.size() != 4) {
    throw std::invalid_argument("partial_channel_forward: expected NCHW, got " + shape_str(xs));
  }
  int C = xs[1];
  int m = C / K;
  if (m < 1) throw std::invalid_argument("partial_channel_forward: K exceeds channel count");
  if (edge.channels != m) {
    throw std::invalid_argument("partial_channel_forward: edge built at " +
                                std::to_string(edge.channels) + " channels, subset is " +
                                std::to_string(m));
  }
  auto perm = rng.permutation(C);
  std::vector<int> main_idx(perm.begin(), perm.begin() + m);
  std::vector<int> rest_idx(perm.begin() + m, perm.end());

  Var xm = ops::gather_channels(ctx.tape, x, main_idx);
  Var ym = edge.forward(ctx, xm, weights, active, chosen);
  Var xr = ops::gather_channels(ctx.tape, x, rest_idx);
  if (edge.stride > 1) xr = ops::max_pool2d(ctx.tape, xr, 2, edge.stride, 0);
  Var cat = ops::concat_channels(ctx.tape, {ym, xr});

  // group interleave over the first K*m channels; a remainder tail (when K
  // does not divide C) stays in place
  std::vector<int> shuffle(C);
  for (int j = 0; j < K * m; ++j) shuffle[j] = (j % K) * m + j / K;
  for (int j = K * m; j < C; ++j) shuffle[j] = j;
  return ops::gather_channels(ctx.tape, cat, shuffle);
}

Var partial_channel_forward_plain(NetContext& ctx, const MixedEdge& edge, Var x,
                                  const std::vector<double>& weights, int K, Philox& rng) {
  if (weights.size() != edge.ops.size()) {
    throw std::invalid_argument("partial_channel_forward: " + std::to_string(weights.size()) +
                                " weights vs " + std::to_string(edge.ops.size()) + " ops");
  }
  Tensor<float> w = Tensor<float>::zeros({static_cast<int>(weights.size())});
  for (size_t i = 0; i < weights.size(); ++i) w.data[i] = static_cast<float>(weights[i]);
  return partial_channel_forward(ctx, edge, x, ctx.tape.leaf(std::move(w), false),
                                 edge.all_active(), -1, K, rng);
}

Tensor<float> perturb_alpha(const Tensor<float>& alpha, PerturbMode mode, double epsilon,
                            Philox& rng, const Tensor<float>* val_grad) {
  if (epsilon < 0) throw std::invalid_argument("perturb: epsilon >= 0 required");
  Tensor<float> out = alpha;
  if (mode == PerturbMode::kNone || epsilon == 0.0) return out;
  if (mode == PerturbMode::kRandom) {
    for (auto& v : out.data) v += static_cast<float>(rng.uniform(-epsilon, epsilon));
    return out;
  }
  if (!val_grad) {
    throw std::invalid_argument("perturb: adversarial mode needs a validation gradient");
  }
  if (!val_grad->same_shape(alpha)) {
    throw std::invalid_argument("perturb: gradient shape " + shape_str(val_grad->shape) +
                                " vs alpha " + shape_str(alpha.shape));
  }
  for (size_t i = 0; i < out.data.size(); ++i) {
    float g = val_grad->data[i];
    out.data[i] += static_cast<float>(epsilon) * (g > 0 ? 1.0f : (g < 0 ? -1.0f : 0.0f));
  }
  return out;
}

PruneState make_prune_state(const OperationSet& opset, int edges_per_cell, bool has_reduce) {
  PruneState state;
  state.normal.assign(edges_per_cell, std::vector<char>(opset.size(), 1));
  if (has_reduce) state.reduce.assign(edges_per_cell, std::vector<char>(opset.size(), 1));
  return state;
}

namespace {

void prune_cell(std::vector<std::vector<char>>& masks, const OperationSet& opset,
                const Tensor<float>& alpha, double fraction, SamplerKind sampler) {
  int n_edges = static_cast<int>(masks.size());
  if (alpha.rank() != 2 || alpha.shape[0] != n_edges || alpha.shape[1] != opset.size()) {
    throw std::invalid_argument("prune: alpha shape " + shape_str(alpha.shape));
  }
  int zero = opset.zero_index();
  for (int e = 0; e < n_edges; ++e) {
    std::vector<int> active;
    for (int o = 0; o < opset.size(); ++o)
      if (masks[e][o]) active.push_back(o);
    int n_drop = static_cast<int>(std::floor(fraction * static_cast<double>(active.size())));
    if (n_drop <= 0) continue;

    std::vector<double> row;
    for (int o : active) row.push_back(alpha.data[static_cast<size_t>(e) * opset.size() + o]);
    auto w = ranking_weights(sampler, row);
    std::vector<int> order(active.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return w[a] < w[b]; });

    int nonzero_left = 0;
    for (int o : active)
      if (o != zero) ++nonzero_left;
    for (int pos : order) {
      if (n_drop == 0) break;
      int op = active[pos];
      if (op != zero && nonzero_left <= 1) continue;  // protect the last real op
      masks[e][op] = 0;
      if (op != zero) --nonzero_left;
      --n_drop;
    }
  }
}

}  // namespace

void prune(PruneState& state, const OperationSet& opset, const Tensor<float>& alpha_normal,
           const Tensor<float>* alpha_reduce, double fraction, SamplerKind sampler) {
  if (fraction <= 0.0 || fraction >= 1.0) {
    throw std::invalid_argument("prune: fraction must be in (0,1)");
  }
  prune_cell(state.normal, opset, alpha_normal, fraction, sampler);
  if (!state.reduce.empty()) {
    if (!alpha_reduce) throw std::invalid_argument("prune: missing reduce alpha");
    prune_cell(state.reduce, opset, *alpha_reduce, fraction, sampler);
  }
}

}  // namespace confopt
