#pragma once

// Cell-based search spaces: candidate operation sets, the supernet that
// relaxes them continuously, discretization into genotypes, and the discrete
// target model rebuilt from a genotype at the same depth and width.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "confopt/params.hpp"
#include "confopt/rng.hpp"
#include "confopt/samplers.hpp"
#include "confopt/tape.hpp"
#include "confopt/tensor.hpp"

namespace confopt {

// ---------------------------------------------------------------------------
// Operation sets

enum class OpSetKind { kRegular, kNoSkip, kAllSkip };

std::string opset_kind_name(OpSetKind k);
OpSetKind parse_opset_kind(const std::string& s);

struct OperationSet {
  OpSetKind kind = OpSetKind::kRegular;
  std::vector<std::string> ops;  // fixed order; index i always names the same op

  int size() const { return static_cast<int>(ops.size()); }
  int index_of(const std::string& name) const;
  int zero_index() const { return index_of("zero"); }
};

OperationSet make_operation_set(OpSetKind kind);

// ---------------------------------------------------------------------------
// Supernet variants

enum class VariantKind { kDarts, kWide, kDeep, kSingleCell };

std::string variant_name(VariantKind v);
VariantKind parse_variant_kind(const std::string& s);

struct SupernetVariant {
  VariantKind name = VariantKind::kDarts;
  int cells = 8;
  int initial_channels = 16;
  int intermediate_nodes = 4;
  int edges_per_cell = 14;
};

SupernetVariant make_variant(VariantKind v);

// Number of mixed edges in a cell with n intermediate nodes: node k has
// k + 2 incoming edges (two cell inputs plus the earlier nodes).
int cell_edge_count(int intermediate_nodes);

// Flattened edge order inside a cell: grouped by destination node, then by
// source state index (states 0 and 1 are the two cell inputs).
struct EdgeRef {
  int node = 0;  // intermediate node index, 0-based
  int src = 0;   // source state index in [0, node + 2)
};
std::vector<EdgeRef> cell_edges(int intermediate_nodes);

// ---------------------------------------------------------------------------
// Genotypes

enum class CellType { kNormal, kReduce };

std::string cell_type_name(CellType t);

struct GenotypeEdge {
  CellType cell = CellType::kNormal;
  int src = 0;  // source state index
  int dst = 2;  // destination state index (first intermediate node is 2)
  std::string op;

  bool operator==(const GenotypeEdge&) const = default;
};

struct Genotype {
  std::vector<GenotypeEdge> edges;  // kept sorted by (cell, dst, src)

  bool operator==(const Genotype&) const = default;
  std::string serialize() const;
  static Genotype parse(const std::string& text);
};

enum class DiscretizePolicy { kDartsTop2, kAllEdges };

// Active-op masks per cell type, indexed [edge][op]; empty vector = all
// active. See the pruning operations for how masks evolve.
struct PruneState {
  std::vector<std::vector<char>> normal;
  std::vector<std::vector<char>> reduce;

  const std::vector<std::vector<char>>& masks(CellType t) const {
    return t == CellType::kNormal ? normal : reduce;
  }
  std::vector<std::vector<char>>& masks(CellType t) {
    return t == CellType::kNormal ? normal : reduce;
  }
};

// Per edge: argmax of the sampler's activation over active non-zero ops,
// then per node keep the top-2 incoming edges by best-op weight (or all).
// alpha_reduce may be null for variants without reduction cells.
Genotype discretize(const OperationSet& opset, int intermediate_nodes,
                    const Tensor<float>& alpha_normal, const Tensor<float>* alpha_reduce,
                    SamplerKind sampler, DiscretizePolicy policy,
                    const PruneState* prune = nullptr);

// ---------------------------------------------------------------------------
// Network building blocks

// Per-forward state threaded through the modules: the tape, lazily created
// parameter leaves, the BN mode, and an op-evaluation counter.
struct NetContext {
  Tape<float>& tape;
  ParamSet& params;
  bool training = true;
  bool weights_require_grad = true;
  long long op_evals = 0;  // candidate-op forward passes (pruning speed checks)

  NetContext(Tape<float>& t, ParamSet& p) : tape(t), params(p), vars_(p.count(), -1) {}

  // Leaf for parameter `id`, created on first use.
  Var var(int id) {
    if (static_cast<size_t>(id) >= vars_.size()) vars_.resize(params.count(), -1);
    if (vars_[id] < 0) vars_[id] = tape.leaf(params.value(id), weights_require_grad);
    return vars_[id];
  }
  Var var_if_used(int id) const {
    return static_cast<size_t>(id) < vars_.size() ? vars_[id] : -1;
  }

 private:
  std::vector<Var> vars_;
};

class OpModule {
 public:
  virtual ~OpModule() = default;
  virtual Var forward(NetContext& ctx, Var x) = 0;
  virtual void collect_params(std::vector<int>& out) const = 0;
};
using OpPtr = std::unique_ptr<OpModule>;

// One candidate operation instance. `affine` enables BN scale/shift and
// running statistics (retrain mode); search-mode BN uses batch statistics.
OpPtr make_candidate_op(const std::string& name, int channels, int stride, bool affine,
                        ParamSet& params, Philox& init_rng, const std::string& prefix);

// A mixed edge: all candidate ops of one operation set instantiated at the
// same channel count and stride.
struct MixedEdge {
  int channels = 0;
  int stride = 1;
  std::vector<std::string> op_names;
  std::vector<OpPtr> ops;

  static MixedEdge build(const OperationSet& opset, int channels, int stride, bool affine,
                         ParamSet& params, Philox& init_rng, const std::string& prefix);

  // Weighted mixture over the `active` subset (indices into ops). `weights`
  // is a tape vector of length |active|. When chosen >= 0 (hard sampling)
  // only ops[active[chosen]] is evaluated and scaled by weights[chosen].
  Var forward(NetContext& ctx, Var x, Var weights, const std::vector<int>& active,
              int chosen = -1) const;

  // Convenience: plain weights over the full op list.
  Var forward_plain(NetContext& ctx, Var x, const std::vector<double>& weights) const;

  std::vector<int> all_active() const;
};

// ---------------------------------------------------------------------------
// Supernet

struct ForwardOptions {
  bool training = true;
  bool weights_require_grad = true;
  bool arch_requires_grad = true;
  SamplerKind sampler = SamplerKind::kDarts;
  double tau = 1.0;            // gdas temperature
  Philox* sample_rng = nullptr;   // gdas gumbel / drnas gamma draws
  Philox* channel_rng = nullptr;  // partial-channel subsets (required when K > 1)
  const PruneState* prune = nullptr;
  // Perturbed copies consumed by the weight step; arch gradients are
  // normally disabled alongside. Index [0]=normal, [1]=reduce.
  const Tensor<float>* alpha_override[2] = {nullptr, nullptr};
};

struct ForwardResult {
  Var logits = -1;
  Var alpha_var[2] = {-1, -1};  // leaves the weights were computed from
  Var beta_var[2] = {-1, -1};
  long long op_evals = 0;
  std::vector<Var> param_vars;  // id -> leaf var, -1 when unused this pass
};

class Supernet {
 public:
  // partial_k > 1 builds candidate ops at channels/partial_k (partial
  // channel connections); edge_norm adds the per-edge beta parameters.
  Supernet(const SupernetVariant& variant, const OperationSet& opset, int num_classes,
           int channel_override = 0, int partial_k = 1, bool edge_norm = false,
           uint64_t init_seed = 0);
  ~Supernet();
  Supernet(const Supernet&) = delete;
  Supernet& operator=(const Supernet&) = delete;

  ForwardResult forward(Tape<float>& tape, const Tensor<float>& images,
                        const ForwardOptions& opts);

  const SupernetVariant& variant() const { return variant_; }
  const OperationSet& opset() const { return opset_; }
  bool has_reduce() const { return has_reduce_; }
  int partial_k() const { return partial_k_; }
  bool edge_norm() const { return edge_norm_; }

  int alpha_id(CellType t) const { return alpha_id_[t == CellType::kReduce]; }
  int beta_id(CellType t) const { return beta_id_[t == CellType::kReduce]; }
  std::vector<int> arch_ids() const;
  const std::vector<int>& weight_ids() const { return weight_ids_; }

  // Param ids per (cell type, edge, op), aggregated over the cells of that
  // type; the freeze granularity of gradient-matching early stopping.
  const std::vector<std::vector<std::vector<int>>>& op_params(CellType t) const {
    return op_params_[t == CellType::kReduce];
  }

  // Re-initialize arch parameters for a sampler: zero log-concentrations
  // for drnas, Normal(0, 1e-3) otherwise.
  void reset_arch(SamplerKind kind, Philox& rng);

  size_t weight_scalar_count() const;

  ParamSet params;

 private:
  struct Impl;
  SupernetVariant variant_;
  OperationSet opset_;
  bool has_reduce_ = false;
  int partial_k_ = 1;
  bool edge_norm_ = false;
  int alpha_id_[2] = {-1, -1};
  int beta_id_[2] = {-1, -1};
  std::vector<int> weight_ids_;
  std::vector<std::vector<std::vector<int>>> op_params_[2];
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Discrete model

class DiscreteModel {
 public:
  DiscreteModel(const Genotype& genotype, const SupernetVariant& variant,
                const OperationSet& opset, int num_classes, int channel_override = 0,
                uint64_t init_seed = 0);
  ~DiscreteModel();
  DiscreteModel(const DiscreteModel&) = delete;
  DiscreteModel& operator=(const DiscreteModel&) = delete;

  // training=true uses batch statistics and updates running stats;
  // training=false normalizes with the running statistics.
  Var forward(Tape<float>& tape, const Tensor<float>& images, bool training,
              std::vector<Var>* param_vars = nullptr);

  const std::vector<int>& weight_ids() const { return weight_ids_; }
  size_t weight_scalar_count() const;

  ParamSet params;

 private:
  struct Impl;
  std::vector<int> weight_ids_;
  std::unique_ptr<Impl> impl_;
};

// Total trainable scalar count of a parameter group.
size_t count_parameters(const ParamSet& params, const std::vector<int>& ids);

}  // namespace confopt
