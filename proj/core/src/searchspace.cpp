#include "confopt/searchspace.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "confopt/mutations.hpp"
#include "confopt/ops.hpp"

namespace confopt {

namespace {

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;
constexpr int kStemMultiplier = 3;

// ---------------------------------------------------------------------------
// Initialization

Tensor<float> kaiming_conv(int cout, int cin_g, int k, Philox& rng) {
  double bound = std::sqrt(6.0 / (static_cast<double>(cin_g) * k * k));
  Tensor<float> w = Tensor<float>::zeros({cout, cin_g, k, k});
  for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
  return w;
}

// ---------------------------------------------------------------------------
// Small layers

struct Conv {
  int w = -1;
  int stride = 1, pad = 0, dilation = 1, groups = 1;

  void init(ParamSet& params, const std::string& name, int cout, int cin, int k, int stride_,
            int pad_, int dilation_, int groups_, Philox& rng) {
    stride = stride_;
    pad = pad_;
    dilation = dilation_;
    groups = groups_;
    w = params.add(name, kaiming_conv(cout, cin / groups_, k, rng));
  }
  Var forward(NetContext& ctx, Var x) const {
    return ops::conv2d(ctx.tape, x, ctx.var(w), stride, pad, dilation, groups);
  }
};

struct Bn {
  int channels = 0;
  bool affine = false;
  int gamma = -1, beta = -1;
  std::vector<float> rmean, rvar;

  void init(ParamSet& params, const std::string& name, int c, bool affine_) {
    channels = c;
    affine = affine_;
    if (affine) {
      gamma = params.add(name + ".gamma", Tensor<float>::full({c}, 1.0f));
      beta = params.add(name + ".beta", Tensor<float>::zeros({c}));
      rmean.assign(c, 0.0f);
      rvar.assign(c, 1.0f);
    }
  }
  Var forward(NetContext& ctx, Var x) {
    Var g = affine ? ctx.var(gamma) : -1;
    Var b = affine ? ctx.var(beta) : -1;
    if (!affine || ctx.training) {
      std::vector<float> mu, var;
      Var out = ops::batch_norm(ctx.tape, x, g, b, kBnEps, affine ? &mu : nullptr,
                                affine ? &var : nullptr);
      if (affine && ctx.training) {
        for (int c = 0; c < channels; ++c) {
          rmean[c] = (1.0f - kBnMomentum) * rmean[c] + kBnMomentum * mu[c];
          rvar[c] = (1.0f - kBnMomentum) * rvar[c] + kBnMomentum * var[c];
        }
      }
      return out;
    }
    return ops::batch_norm_eval(ctx.tape, x, g, b, rmean, rvar, kBnEps);
  }
  void collect(std::vector<int>& out) const {
    if (affine) {
      out.push_back(gamma);
      out.push_back(beta);
    }
  }
};

// relu -> conv -> bn (preprocessing and conv candidates share it)
struct ReluConvBn {
  Conv conv;
  Bn bn;

  void init(ParamSet& params, const std::string& name, int cout, int cin, int k, int stride,
            int pad, bool affine, Philox& rng) {
    conv.init(params, name + ".w", cout, cin, k, stride, pad, 1, 1, rng);
    bn.init(params, name + ".bn", cout, affine);
  }
  Var forward(NetContext& ctx, Var x) {
    return bn.forward(ctx, conv.forward(ctx, ops::relu(ctx.tape, x)));
  }
  void collect(std::vector<int>& out) const {
    out.push_back(conv.w);
    bn.collect(out);
  }
};

// relu -> 1x1 stride-2 conv -> bn; the skip path across a spatial reduction
struct FactorizedReduce {
  Conv conv;
  Bn bn;

  void init(ParamSet& params, const std::string& name, int cout, int cin, bool affine,
            Philox& rng) {
    conv.init(params, name + ".w", cout, cin, 1, 2, 0, 1, 1, rng);
    bn.init(params, name + ".bn", cout, affine);
  }
  Var forward(NetContext& ctx, Var x) {
    return bn.forward(ctx, conv.forward(ctx, ops::relu(ctx.tape, x)));
  }
  void collect(std::vector<int>& out) const {
    out.push_back(conv.w);
    bn.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Candidate op modules

struct ZeroMod : OpModule {
  int stride;
  explicit ZeroMod(int s) : stride(s) {}
  Var forward(NetContext& ctx, Var x) override { return ops::zero_op(ctx.tape, x, stride); }
  void collect_params(std::vector<int>&) const override {}
};

struct SkipMod : OpModule {
  Var forward(NetContext& ctx, Var x) override { return ops::identity(ctx.tape, x); }
  void collect_params(std::vector<int>&) const override {}
};

struct SkipReduceMod : OpModule {
  FactorizedReduce fr;
  SkipReduceMod(int c, bool affine, ParamSet& params, Philox& rng, const std::string& prefix) {
    fr.init(params, prefix, c, c, affine, rng);
  }
  Var forward(NetContext& ctx, Var x) override { return fr.forward(ctx, x); }
  void collect_params(std::vector<int>& out) const override { fr.collect(out); }
};

struct PoolMod : OpModule {
  bool is_max;
  int stride;
  Bn bn;
  PoolMod(bool is_max_, int c, int s, bool affine, ParamSet& params, const std::string& prefix)
      : is_max(is_max_), stride(s) {
    bn.init(params, prefix + ".bn", c, affine);
  }
  Var forward(NetContext& ctx, Var x) override {
    Var p = is_max ? ops::max_pool2d(ctx.tape, x, 3, stride, 1)
                   : ops::avg_pool2d(ctx.tape, x, 3, stride, 1);
    return bn.forward(ctx, p);
  }
  void collect_params(std::vector<int>& out) const override { bn.collect(out); }
};

// relu -> depthwise(k, stride) -> pointwise -> bn, twice (second at stride 1)
struct SepConvMod : OpModule {
  Conv dw1, pw1, dw2, pw2;
  Bn bn1, bn2;
  SepConvMod(int c, int k, int s, bool affine, ParamSet& params, Philox& rng,
             const std::string& prefix) {
    int pad = (k - 1) / 2;
    dw1.init(params, prefix + ".dw1", c, c, k, s, pad, 1, c, rng);
    pw1.init(params, prefix + ".pw1", c, c, 1, 1, 0, 1, 1, rng);
    bn1.init(params, prefix + ".bn1", c, affine);
    dw2.init(params, prefix + ".dw2", c, c, k, 1, pad, 1, c, rng);
    pw2.init(params, prefix + ".pw2", c, c, 1, 1, 0, 1, 1, rng);
    bn2.init(params, prefix + ".bn2", c, affine);
  }
  Var forward(NetContext& ctx, Var x) override {
    Var h = bn1.forward(ctx, pw1.forward(ctx, dw1.forward(ctx, ops::relu(ctx.tape, x))));
    return bn2.forward(ctx, pw2.forward(ctx, dw2.forward(ctx, ops::relu(ctx.tape, h))));
  }
  void collect_params(std::vector<int>& out) const override {
    out.push_back(dw1.w);
    out.push_back(pw1.w);
    bn1.collect(out);
    out.push_back(dw2.w);
    out.push_back(pw2.w);
    bn2.collect(out);
  }
};

// relu -> depthwise(k, stride, dilation 2) -> pointwise -> bn
struct DilConvMod : OpModule {
  Conv dw, pw;
  Bn bn;
  DilConvMod(int c, int k, int s, bool affine, ParamSet& params, Philox& rng,
             const std::string& prefix) {
    int pad = k - 1;  // dilation 2 keeps the stride-1 output size with this pad
    dw.init(params, prefix + ".dw", c, c, k, s, pad, 2, c, rng);
    pw.init(params, prefix + ".pw", c, c, 1, 1, 0, 1, 1, rng);
    bn.init(params, prefix + ".bn", c, affine);
  }
  Var forward(NetContext& ctx, Var x) override {
    return bn.forward(ctx, pw.forward(ctx, dw.forward(ctx, ops::relu(ctx.tape, x))));
  }
  void collect_params(std::vector<int>& out) const override {
    out.push_back(dw.w);
    out.push_back(pw.w);
    bn.collect(out);
  }
};

// o(x) + x, the auxiliary skip wrapper; subsamples x on stride-2 edges
struct AuxSkipMod : OpModule {
  OpPtr inner;
  int stride;
  AuxSkipMod(OpPtr inner_, int s) : inner(std::move(inner_)), stride(s) {}
  Var forward(NetContext& ctx, Var x) override {
    Var y = inner->forward(ctx, x);
    Var s = stride == 1 ? x : ops::subsample(ctx.tape, x, stride);
    return ops::add(ctx.tape, y, s);
  }
  void collect_params(std::vector<int>& out) const override { inner->collect_params(out); }
};

}  // namespace

// ---------------------------------------------------------------------------
// Operation sets / variants

std::string opset_kind_name(OpSetKind k) {
  switch (k) {
    case OpSetKind::kRegular:
      return "regular";
    case OpSetKind::kNoSkip:
      return "no_skip";
    case OpSetKind::kAllSkip:
      return "all_skip";
  }
  throw std::invalid_argument("unknown opset kind");
}

OpSetKind parse_opset_kind(const std::string& s) {
  if (s == "regular") return OpSetKind::kRegular;
  if (s == "no_skip") return OpSetKind::kNoSkip;
  if (s == "all_skip") return OpSetKind::kAllSkip;
  throw std::invalid_argument("unknown opset kind: " + s);
}

int OperationSet::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (ops[i] == name) return i;
  return -1;
}

OperationSet make_operation_set(OpSetKind kind) {
  OperationSet set;
  set.kind = kind;
  set.ops = {"zero",         "skip_connect", "max_pool_3x3", "avg_pool_3x3",
             "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5"};
  if (kind == OpSetKind::kNoSkip) {
    set.ops.erase(set.ops.begin() + 1);
  }
  // all_skip keeps the same names; the aux-skip wrapping happens at op
  // construction so indices stay aligned with regular
  return set;
}

std::string variant_name(VariantKind v) {
  switch (v) {
    case VariantKind::kDarts:
      return "darts";
    case VariantKind::kWide:
      return "wide";
    case VariantKind::kDeep:
      return "deep";
    case VariantKind::kSingleCell:
      return "single_cell";
  }
  throw std::invalid_argument("unknown variant");
}

VariantKind parse_variant_kind(const std::string& s) {
  if (s == "darts") return VariantKind::kDarts;
  if (s == "wide") return VariantKind::kWide;
  if (s == "deep") return VariantKind::kDeep;
  if (s == "single_cell") return VariantKind::kSingleCell;
  throw std::invalid_argument("unknown variant: " + s);
}

SupernetVariant make_variant(VariantKind v) {
  SupernetVariant var;
  var.name = v;
  switch (v) {
    case VariantKind::kDarts:
      var.cells = 8;
      var.initial_channels = 16;
      var.intermediate_nodes = 4;
      break;
    case VariantKind::kWide:
      var.cells = 4;
      var.initial_channels = 18;
      var.intermediate_nodes = 4;
      break;
    case VariantKind::kDeep:
      var.cells = 16;
      var.initial_channels = 7;
      var.intermediate_nodes = 4;
      break;
    case VariantKind::kSingleCell:
      var.cells = 1;
      var.initial_channels = 26;
      var.intermediate_nodes = 8;
      break;
  }
  var.edges_per_cell = cell_edge_count(var.intermediate_nodes);
  return var;
}

int cell_edge_count(int intermediate_nodes) {
  if (intermediate_nodes < 1) {
    throw std::invalid_argument("cell_edge_count: need at least one intermediate node");
  }
  int total = 0;
  for (int k = 0; k < intermediate_nodes; ++k) total += k + 2;
  return total;
}

std::vector<EdgeRef> cell_edges(int intermediate_nodes) {
  std::vector<EdgeRef> edges;
  for (int node = 0; node < intermediate_nodes; ++node)
    for (int src = 0; src < node + 2; ++src) edges.push_back({node, src});
  return edges;
}

// ---------------------------------------------------------------------------
// Genotype serialization

std::string cell_type_name(CellType t) { return t == CellType::kNormal ? "normal" : "reduce"; }

namespace {

void sort_genotype(std::vector<GenotypeEdge>& edges) {
  std::sort(edges.begin(), edges.end(), [](const GenotypeEdge& a, const GenotypeEdge& b) {
    if (a.cell != b.cell) return cell_type_name(a.cell) < cell_type_name(b.cell);
    if (a.dst != b.dst) return a.dst < b.dst;
    return a.src < b.src;
  });
}

}  // namespace

std::string Genotype::serialize() const {
  std::vector<GenotypeEdge> sorted = edges;
  sort_genotype(sorted);
  std::string out;
  for (const auto& e : sorted) {
    out += "v1 " + cell_type_name(e.cell) + " edge src=" + std::to_string(e.src) +
           " dst=" + std::to_string(e.dst) + " op=" + e.op + "\n";
  }
  return out;
}

Genotype Genotype::parse(const std::string& text) {
  Genotype g;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string version, cell, kw, src_tok, dst_tok, op_tok;
    ls >> version >> cell >> kw >> src_tok >> dst_tok >> op_tok;
    auto fail = [&](const std::string& why) -> std::invalid_argument {
      return std::invalid_argument("genotype line " + std::to_string(lineno) + ": " + why);
    };
    if (version != "v1") throw fail("unsupported version '" + version + "'");
    if (kw != "edge") throw fail("expected 'edge'");
    GenotypeEdge e;
    if (cell == "normal") {
      e.cell = CellType::kNormal;
    } else if (cell == "reduce") {
      e.cell = CellType::kReduce;
    } else {
      throw fail("unknown cell type '" + cell + "'");
    }
    if (src_tok.rfind("src=", 0) != 0 || dst_tok.rfind("dst=", 0) != 0 ||
        op_tok.rfind("op=", 0) != 0) {
      throw fail("expected src=<int> dst=<int> op=<name>");
    }
    try {
      e.src = std::stoi(src_tok.substr(4));
      e.dst = std::stoi(dst_tok.substr(4));
    } catch (const std::exception&) {
      throw fail("bad integer field");
    }
    e.op = op_tok.substr(3);
    if (e.op.empty()) throw fail("empty op name");
    if (e.src < 0 || e.dst < 2 || e.src >= e.dst) throw fail("invalid edge endpoints");
    g.edges.push_back(e);
  }
  sort_genotype(g.edges);
  return g;
}

// ---------------------------------------------------------------------------
// Discretization

namespace {

std::vector<int> active_ops(const OperationSet& opset, const PruneState* prune, CellType ct,
                            int edge) {
  std::vector<int> active;
  for (int o = 0; o < opset.size(); ++o) {
    bool on = true;
    if (prune) {
      const auto& masks = prune->masks(ct);
      if (!masks.empty()) on = masks.at(edge).at(o) != 0;
    }
    if (on) active.push_back(o);
  }
  return active;
}

}  // namespace

Genotype discretize(const OperationSet& opset, int intermediate_nodes,
                    const Tensor<float>& alpha_normal, const Tensor<float>* alpha_reduce,
                    SamplerKind sampler, DiscretizePolicy policy, const PruneState* prune) {
  int n_edges = cell_edge_count(intermediate_nodes);
  auto edges = cell_edges(intermediate_nodes);
  Genotype g;

  auto one_cell = [&](CellType ct, const Tensor<float>& alpha) {
    if (alpha.rank() != 2 || alpha.shape[0] != n_edges || alpha.shape[1] != opset.size()) {
      throw std::invalid_argument("discretize: alpha shape " + shape_str(alpha.shape) +
                                  ", expected [" + std::to_string(n_edges) + "," +
                                  std::to_string(opset.size()) + "]");
    }
    if (!alpha.all_finite()) throw std::invalid_argument("discretize: non-finite alpha");
    int zero = opset.zero_index();

    struct Best {
      int op = -1;
      double weight = 0.0;
    };
    std::vector<Best> best(n_edges);
    for (int e = 0; e < n_edges; ++e) {
      auto active = active_ops(opset, prune, ct, e);
      std::vector<double> row;
      for (int o : active) row.push_back(alpha.data[static_cast<size_t>(e) * opset.size() + o]);
      auto w = ranking_weights(sampler, row);
      for (size_t i = 0; i < active.size(); ++i) {
        if (active[i] == zero) continue;
        if (best[e].op < 0 || w[i] > best[e].weight) {
          best[e].op = active[i];
          best[e].weight = w[i];
        }
      }
      if (best[e].op < 0) {
        throw std::invalid_argument("discretize: every non-zero op pruned on edge " +
                                    std::to_string(e));
      }
    }

    int off = 0;
    for (int node = 0; node < intermediate_nodes; ++node) {
      int fan_in = node + 2;
      std::vector<int> idx(fan_in);
      for (int i = 0; i < fan_in; ++i) idx[i] = off + i;
      if (policy == DiscretizePolicy::kDartsTop2 && fan_in > 2) {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](int a, int b) { return best[a].weight > best[b].weight; });
        idx.resize(2);
      }
      for (int e : idx) {
        g.edges.push_back({ct, edges[e].src, node + 2, opset.ops[best[e].op]});
      }
      off += fan_in;
    }
  };

  one_cell(CellType::kNormal, alpha_normal);
  if (alpha_reduce) one_cell(CellType::kReduce, *alpha_reduce);
  sort_genotype(g.edges);
  return g;
}

// ---------------------------------------------------------------------------
// Candidate op factory / mixed edge

OpPtr make_candidate_op(const std::string& name, int channels, int stride, bool affine,
                        ParamSet& params, Philox& rng, const std::string& prefix) {
  if (name == "zero") return std::make_unique<ZeroMod>(stride);
  if (name == "skip_connect") {
    if (stride == 1) return std::make_unique<SkipMod>();
    return std::make_unique<SkipReduceMod>(channels, affine, params, rng, prefix);
  }
  if (name == "max_pool_3x3")
    return std::make_unique<PoolMod>(true, channels, stride, affine, params, prefix);
  if (name == "avg_pool_3x3")
    return std::make_unique<PoolMod>(false, channels, stride, affine, params, prefix);
  if (name == "sep_conv_3x3")
    return std::make_unique<SepConvMod>(channels, 3, stride, affine, params, rng, prefix);
  if (name == "sep_conv_5x5")
    return std::make_unique<SepConvMod>(channels, 5, stride, affine, params, rng, prefix);
  if (name == "dil_conv_3x3")
    return std::make_unique<DilConvMod>(channels, 3, stride, affine, params, rng, prefix);
  if (name == "dil_conv_5x5")
    return std::make_unique<DilConvMod>(channels, 5, stride, affine, params, rng, prefix);
  throw std::invalid_argument("unknown op name: " + name);
}

namespace {

bool is_parametric(const std::string& name) { return name.find("conv") != std::string::npos; }

OpPtr make_set_op(const OperationSet& opset, int index, int channels, int stride, bool affine,
                  ParamSet& params, Philox& rng, const std::string& prefix) {
  const std::string& name = opset.ops[index];
  OpPtr op = make_candidate_op(name, channels, stride, affine, params, rng, prefix);
  if (opset.kind == OpSetKind::kAllSkip && is_parametric(name)) {
    return std::make_unique<AuxSkipMod>(std::move(op), stride);
  }
  return op;
}

}  // namespace

MixedEdge MixedEdge::build(const OperationSet& opset, int channels, int stride, bool affine,
                           ParamSet& params, Philox& rng, const std::string& prefix) {
  MixedEdge edge;
  edge.channels = channels;
  edge.stride = stride;
  edge.op_names = opset.ops;
  for (int o = 0; o < opset.size(); ++o) {
    edge.ops.push_back(
        make_set_op(opset, o, channels, stride, affine, params, rng, prefix + "." + opset.ops[o]));
  }
  return edge;
}

std::vector<int> MixedEdge::all_active() const {
  std::vector<int> a(ops.size());
  for (size_t i = 0; i < a.size(); ++i) a[i] = static_cast<int>(i);
  return a;
}

Var MixedEdge::forward(NetContext& ctx, Var x, Var weights, const std::vector<int>& active,
                       int chosen) const {
  const Tensor<float>& wv = ctx.tape.value(weights);
  if (wv.rank() != 1 || wv.shape[0] != static_cast<int>(active.size())) {
    throw std::invalid_argument("mixed_edge_forward: weights " + shape_str(wv.shape) + " vs " +
                                std::to_string(active.size()) + " active ops");
  }
  if (active.empty()) throw std::invalid_argument("mixed_edge_forward: no active ops");
  if (chosen >= 0) {
    // hard sampling: exactly one op evaluated, scaled by its ST weight
    ++ctx.op_evals;
    Var y = ops[active[chosen]]->forward(ctx, x);
    return ops::scale_by_element(ctx.tape, y, weights, chosen);
  }
  Var acc = -1;
  for (size_t i = 0; i < active.size(); ++i) {
    ++ctx.op_evals;
    Var y = ops[active[i]]->forward(ctx, x);
    Var term = ops::scale_by_element(ctx.tape, y, weights, static_cast<int>(i));
    acc = acc < 0 ? term : ops::add(ctx.tape, acc, term);
  }
  return acc;
}

Var MixedEdge::forward_plain(NetContext& ctx, Var x, const std::vector<double>& weights) const {
  if (weights.size() != ops.size()) {
    throw std::invalid_argument("mixed_edge_forward: " + std::to_string(weights.size()) +
                                " weights vs " + std::to_string(ops.size()) + " ops");
  }
  Tensor<float> w = Tensor<float>::zeros({static_cast<int>(weights.size())});
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0) throw std::invalid_argument("mixed_edge_forward: negative weight");
    w.data[i] = static_cast<float>(weights[i]);
  }
  return forward(ctx, x, ctx.tape.leaf(std::move(w), false), all_active());
}

// ---------------------------------------------------------------------------
// Supernet

namespace {

struct SuperCell {
  bool reduction = false;
  bool pre0_reduce = false;
  ReluConvBn pre0_conv;
  FactorizedReduce pre0_fr;
  ReluConvBn pre1;
  std::vector<MixedEdge> edges;

  Var preprocess0(NetContext& ctx, Var s0) {
    return pre0_reduce ? pre0_fr.forward(ctx, s0) : pre0_conv.forward(ctx, s0);
  }
};

// per-edge activated weights for one forward pass
struct EdgeWeights {
  Var w = -1;
  std::vector<int> active;
  int chosen = -1;  // position within `active` (gdas)
};

}  // namespace

struct Supernet::Impl {
  int num_classes = 10;
  int stem_ch = 0;
  int nodes = 4;
  Conv stem_conv;
  Bn stem_bn;
  std::vector<SuperCell> cells;
  int head_w = -1, head_b = -1;

  std::vector<EdgeWeights> compute_weights(NetContext& ctx, Var alpha_leaf, int n_edges,
                                           const OperationSet& opset, CellType ct,
                                           const ForwardOptions& opts) {
    std::vector<EdgeWeights> out(n_edges);
    for (int e = 0; e < n_edges; ++e) {
      EdgeWeights& ew = out[e];
      ew.active = active_ops(opset, opts.prune, ct, e);
      if (ew.active.empty()) throw std::invalid_argument("forward: no active ops on an edge");
      Var row = ops::row(ctx.tape, alpha_leaf, e);
      if (static_cast<int>(ew.active.size()) < opset.size()) {
        row = ops::gather(ctx.tape, row, ew.active);
      }
      switch (opts.sampler) {
        case SamplerKind::kDarts:
          ew.w = darts_weights_on_tape(ctx.tape, row);
          break;
        case SamplerKind::kFairdarts:
          ew.w = fairdarts_weights_on_tape(ctx.tape, row);
          break;
        case SamplerKind::kDrnas:
          if (!opts.sample_rng) throw std::invalid_argument("forward: drnas needs sample_rng");
          ew.w = drnas_weights_on_tape(ctx.tape, row, *opts.sample_rng);
          break;
        case SamplerKind::kGdas: {
          if (!opts.sample_rng) throw std::invalid_argument("forward: gdas needs sample_rng");
          auto [chosen, st] = gdas_weights_on_tape(ctx.tape, row, opts.tau, *opts.sample_rng);
          ew.chosen = chosen;
          ew.w = st;
          break;
        }
      }
    }
    return out;
  }
};

Supernet::Supernet(const SupernetVariant& variant, const OperationSet& opset, int num_classes,
                   int channel_override, int partial_k, bool edge_norm, uint64_t init_seed)
    : variant_(variant),
      opset_(opset),
      partial_k_(partial_k),
      edge_norm_(edge_norm),
      impl_(std::make_unique<Impl>()) {
  if (num_classes < 2) throw std::invalid_argument("build_supernet: num_classes >= 2 required");
  if (partial_k < 1) throw std::invalid_argument("build_supernet: partial_k >= 1 required");
  if (variant.cells < 1 || variant.intermediate_nodes < 1 || variant.initial_channels < 1) {
    throw std::invalid_argument("build_supernet: invalid variant");
  }
  Philox rng(init_seed, static_cast<uint64_t>(RngStream::kInit));
  int C = channel_override > 0 ? channel_override : variant.initial_channels;
  int nodes = variant.intermediate_nodes;
  int n_edges = variant.edges_per_cell;
  impl_->num_classes = num_classes;
  impl_->nodes = nodes;

  bool single = variant.cells < 3;
  has_reduce_ = !single;
  // single-cell macro: the stem does the spatial reduction and doubles the
  // cell width so parameter counts stay in the same band as the deeper
  // variants
  int stem_stride = single ? 2 : 1;
  int cell_c0 = single ? 2 * C : C;
  impl_->stem_ch = kStemMultiplier * C;
  impl_->stem_conv.init(params, "stem.w", impl_->stem_ch, 3, 3, stem_stride, 1, 1, 1, rng);
  impl_->stem_bn.init(params, "stem.bn", impl_->stem_ch, true);

  int r1 = variant.cells / 3, r2 = 2 * variant.cells / 3;
  int c_pp = impl_->stem_ch, c_p = impl_->stem_ch, c_curr = cell_c0;
  bool reduction_prev = false;
  auto refs = cell_edges(nodes);
  for (int i = 0; i < variant.cells; ++i) {
    bool reduction = !single && (i == r1 || i == r2);
    if (reduction) c_curr *= 2;
    SuperCell cell;
    cell.reduction = reduction;
    cell.pre0_reduce = reduction_prev;
    std::string cp = "cell" + std::to_string(i);
    if (reduction_prev) {
      cell.pre0_fr.init(params, cp + ".pre0", c_curr, c_pp, false, rng);
    } else {
      cell.pre0_conv.init(params, cp + ".pre0", c_curr, c_pp, 1, 1, 0, false, rng);
    }
    cell.pre1.init(params, cp + ".pre1", c_curr, c_p, 1, 1, 0, false, rng);
    int edge_c = c_curr / partial_k;
    if (edge_c < 1) throw std::invalid_argument("build_supernet: partial_k exceeds channels");
    for (int e = 0; e < n_edges; ++e) {
      int stride = (reduction && refs[e].src < 2) ? 2 : 1;
      cell.edges.push_back(MixedEdge::build(opset, edge_c, stride, false, params, rng,
                                            cp + ".edge" + std::to_string(e)));
    }
    impl_->cells.push_back(std::move(cell));
    reduction_prev = reduction;
    c_pp = c_p;
    c_p = nodes * c_curr;
  }

  int feat = c_p;
  double lin_bound = 1.0 / std::sqrt(static_cast<double>(feat));
  Tensor<float> hw = Tensor<float>::zeros({num_classes, feat});
  for (auto& v : hw.data) v = static_cast<float>(rng.uniform(-lin_bound, lin_bound));
  impl_->head_w = params.add("head.w", std::move(hw));
  impl_->head_b = params.add("head.b", Tensor<float>::zeros({num_classes}));

  // everything registered so far is a network weight
  for (size_t id = 0; id < params.count(); ++id) weight_ids_.push_back(static_cast<int>(id));

  // arch parameters, shared across cells of the same type
  auto add_arch = [&](CellType ct) {
    Tensor<float> a = Tensor<float>::zeros({n_edges, opset.size()});
    for (auto& v : a.data) v = static_cast<float>(rng.normal() * 1e-3);
    alpha_id_[ct == CellType::kReduce] =
        params.add("alpha." + cell_type_name(ct), std::move(a));
    if (edge_norm) {
      Tensor<float> b = Tensor<float>::zeros({n_edges});
      for (auto& v : b.data) v = static_cast<float>(rng.normal() * 1e-3);
      beta_id_[ct == CellType::kReduce] = params.add("beta." + cell_type_name(ct), std::move(b));
    }
  };
  add_arch(CellType::kNormal);
  if (has_reduce_) add_arch(CellType::kReduce);

  // param ids per (cell type, edge, op) aggregated across cells
  for (int r = 0; r < 2; ++r) {
    op_params_[r].assign(n_edges, std::vector<std::vector<int>>(opset.size()));
  }
  for (const auto& cell : impl_->cells) {
    int r = cell.reduction ? 1 : 0;
    for (int e = 0; e < n_edges; ++e) {
      for (int o = 0; o < opset.size(); ++o) {
        cell.edges[e].ops[o]->collect_params(op_params_[r][e][o]);
      }
    }
  }
}

Supernet::~Supernet() = default;

std::vector<int> Supernet::arch_ids() const {
  std::vector<int> ids;
  for (int id : {alpha_id_[0], alpha_id_[1], beta_id_[0], beta_id_[1]}) {
    if (id >= 0) ids.push_back(id);
  }
  return ids;
}

void Supernet::reset_arch(SamplerKind kind, Philox& rng) {
  for (int id : {alpha_id_[0], alpha_id_[1]}) {
    if (id < 0) continue;
    for (auto& v : params.value(id).data) {
      v = kind == SamplerKind::kDrnas ? 0.0f : static_cast<float>(rng.normal() * 1e-3);
    }
  }
  for (int id : {beta_id_[0], beta_id_[1]}) {
    if (id < 0) continue;
    for (auto& v : params.value(id).data) v = static_cast<float>(rng.normal() * 1e-3);
  }
}

size_t Supernet::weight_scalar_count() const { return count_parameters(params, weight_ids_); }

ForwardResult Supernet::forward(Tape<float>& tape, const Tensor<float>& images,
                                const ForwardOptions& opts) {
  if (images.rank() != 4 || images.shape[1] != 3) {
    throw std::invalid_argument("forward: expected [N,3,H,W] images, got " +
                                shape_str(images.shape));
  }
  if (partial_k_ > 1 && !opts.channel_rng) {
    throw std::invalid_argument("forward: partial channels need channel_rng");
  }
  NetContext ctx(tape, params);
  ctx.training = opts.training;
  ctx.weights_require_grad = opts.weights_require_grad;

  ForwardResult res;
  int n_edges = variant_.edges_per_cell;

  // arch leaves (possibly overridden copies for a perturbed weight step)
  Var alpha_leaf[2] = {-1, -1};
  Var beta_leaf[2] = {-1, -1};
  std::vector<EdgeWeights> weights[2];
  for (int r = 0; r < 2; ++r) {
    if (alpha_id_[r] < 0) continue;
    Tensor<float> a = opts.alpha_override[r] ? *opts.alpha_override[r]
                                             : params.value(alpha_id_[r]);
    if (a.rank() != 2 || a.shape[0] != n_edges || a.shape[1] != opset_.size()) {
      throw std::invalid_argument("forward: alpha override shape " + shape_str(a.shape));
    }
    alpha_leaf[r] = tape.leaf(std::move(a), opts.arch_requires_grad);
    res.alpha_var[r] = alpha_leaf[r];
    if (beta_id_[r] >= 0) {
      beta_leaf[r] = tape.leaf(params.value(beta_id_[r]), opts.arch_requires_grad);
      res.beta_var[r] = beta_leaf[r];
    }
    weights[r] = impl_->compute_weights(ctx, alpha_leaf[r], n_edges, opset_,
                                        r ? CellType::kReduce : CellType::kNormal, opts);
  }

  Var x = tape.leaf(images, false);
  Var stem = impl_->stem_bn.forward(ctx, impl_->stem_conv.forward(ctx, x));
  Var s0 = stem, s1 = stem;
  auto refs = cell_edges(impl_->nodes);
  for (auto& cell : impl_->cells) {
    int r = cell.reduction ? 1 : 0;
    std::vector<Var> states = {cell.preprocess0(ctx, s0), cell.pre1.forward(ctx, s1)};
    int off = 0;
    for (int node = 0; node < impl_->nodes; ++node) {
      int fan_in = node + 2;
      std::vector<Var> outs;
      for (int i = 0; i < fan_in; ++i) {
        int e = off + i;
        const EdgeWeights& ew = weights[r][e];
        Var y;
        if (partial_k_ > 1) {
          y = partial_channel_forward(ctx, cell.edges[e], states[refs[e].src], ew.w, ew.active,
                                      ew.chosen, partial_k_, *opts.channel_rng);
        } else {
          y = cell.edges[e].forward(ctx, states[refs[e].src], ew.w, ew.active, ew.chosen);
        }
        outs.push_back(y);
      }
      Var agg;
      if (beta_leaf[r] >= 0) {
        std::vector<int> idx(fan_in);
        for (int i = 0; i < fan_in; ++i) idx[i] = off + i;
        Var beta_row = ops::gather(tape, beta_leaf[r], idx);
        agg = edge_normalization(tape, beta_row, outs);
      } else {
        agg = outs[0];
        for (size_t i = 1; i < outs.size(); ++i) agg = ops::add(tape, agg, outs[i]);
      }
      states.push_back(agg);
      off += fan_in;
    }
    std::vector<Var> inter(states.begin() + 2, states.end());
    Var out = ops::concat_channels(tape, inter);
    s0 = s1;
    s1 = out;
  }

  Var pooled = ops::global_avg_pool(tape, s1);
  res.logits = ops::linear(tape, pooled, ctx.var(impl_->head_w), ctx.var(impl_->head_b));
  res.op_evals = ctx.op_evals;
  res.param_vars.assign(params.count(), -1);
  for (size_t id = 0; id < params.count(); ++id) {
    res.param_vars[id] = ctx.var_if_used(static_cast<int>(id));
  }
  for (int r = 0; r < 2; ++r) {
    if (alpha_id_[r] >= 0 && !opts.alpha_override[r]) res.param_vars[alpha_id_[r]] = alpha_leaf[r];
    if (beta_id_[r] >= 0) res.param_vars[beta_id_[r]] = beta_leaf[r];
  }
  return res;
}

// ---------------------------------------------------------------------------
// Discrete model

namespace {

struct DiscreteEdge {
  int src = 0;
  int node = 0;
  OpPtr op;
};

struct DiscreteCell {
  bool reduction = false;
  bool pre0_reduce = false;
  ReluConvBn pre0_conv;
  FactorizedReduce pre0_fr;
  ReluConvBn pre1;
  std::vector<DiscreteEdge> edges;
};

}  // namespace

struct DiscreteModel::Impl {
  int nodes = 4;
  Conv stem_conv;
  Bn stem_bn;
  std::vector<DiscreteCell> cells;
  int head_w = -1, head_b = -1;
};

DiscreteModel::DiscreteModel(const Genotype& genotype, const SupernetVariant& variant,
                             const OperationSet& opset, int num_classes, int channel_override,
                             uint64_t init_seed)
    : impl_(std::make_unique<Impl>()) {
  if (num_classes < 2) throw std::invalid_argument("build_discrete_model: num_classes >= 2");
  Philox rng(init_seed, static_cast<uint64_t>(RngStream::kInit));
  int C = channel_override > 0 ? channel_override : variant.initial_channels;
  int nodes = variant.intermediate_nodes;
  impl_->nodes = nodes;

  std::vector<GenotypeEdge> per_type[2];
  for (const auto& e : genotype.edges) {
    int idx = opset.index_of(e.op);
    if (idx < 0 || e.op == "zero") {
      throw std::invalid_argument("build_discrete_model: unknown op name '" + e.op + "'");
    }
    if (e.dst < 2 || e.dst >= nodes + 2 || e.src < 0 || e.src >= e.dst) {
      throw std::invalid_argument("build_discrete_model: edge out of range");
    }
    per_type[e.cell == CellType::kReduce].push_back(e);
  }

  bool single = variant.cells < 3;
  if (!single && per_type[1].empty()) {
    throw std::invalid_argument("build_discrete_model: variant has reduction cells but the "
                                "genotype has no reduce edges");
  }

  int stem_stride = single ? 2 : 1;
  int cell_c0 = single ? 2 * C : C;
  int stem_ch = kStemMultiplier * C;
  impl_->stem_conv.init(params, "stem.w", stem_ch, 3, 3, stem_stride, 1, 1, 1, rng);
  impl_->stem_bn.init(params, "stem.bn", stem_ch, true);

  int r1 = variant.cells / 3, r2 = 2 * variant.cells / 3;
  int c_pp = stem_ch, c_p = stem_ch, c_curr = cell_c0;
  bool reduction_prev = false;
  for (int i = 0; i < variant.cells; ++i) {
    bool reduction = !single && (i == r1 || i == r2);
    if (reduction) c_curr *= 2;
    DiscreteCell cell;
    cell.reduction = reduction;
    cell.pre0_reduce = reduction_prev;
    std::string cp = "cell" + std::to_string(i);
    if (reduction_prev) {
      cell.pre0_fr.init(params, cp + ".pre0", c_curr, c_pp, true, rng);
    } else {
      cell.pre0_conv.init(params, cp + ".pre0", c_curr, c_pp, 1, 1, 0, true, rng);
    }
    cell.pre1.init(params, cp + ".pre1", c_curr, c_p, 1, 1, 0, true, rng);
    for (const auto& ge : per_type[reduction ? 1 : 0]) {
      DiscreteEdge de;
      de.src = ge.src;
      de.node = ge.dst - 2;
      int stride = (reduction && ge.src < 2) ? 2 : 1;
      OpPtr op = make_candidate_op(ge.op, c_curr, stride, true, params, rng,
                                   cp + ".n" + std::to_string(de.node) + "s" +
                                       std::to_string(de.src) + "." + ge.op);
      if (opset.kind == OpSetKind::kAllSkip && is_parametric(ge.op)) {
        op = std::make_unique<AuxSkipMod>(std::move(op), stride);
      }
      de.op = std::move(op);
      cell.edges.push_back(std::move(de));
    }
    impl_->cells.push_back(std::move(cell));
    reduction_prev = reduction;
    c_pp = c_p;
    c_p = nodes * c_curr;
  }

  int feat = c_p;
  double lin_bound = 1.0 / std::sqrt(static_cast<double>(feat));
  Tensor<float> hw = Tensor<float>::zeros({num_classes, feat});
  for (auto& v : hw.data) v = static_cast<float>(rng.uniform(-lin_bound, lin_bound));
  impl_->head_w = params.add("head.w", std::move(hw));
  impl_->head_b = params.add("head.b", Tensor<float>::zeros({num_classes}));
  for (size_t id = 0; id < params.count(); ++id) weight_ids_.push_back(static_cast<int>(id));
}

DiscreteModel::~DiscreteModel() = default;

size_t DiscreteModel::weight_scalar_count() const { return count_parameters(params, weight_ids_); }

Var DiscreteModel::forward(Tape<float>& tape, const Tensor<float>& images, bool training,
                           std::vector<Var>* param_vars) {
  if (images.rank() != 4 || images.shape[1] != 3) {
    throw std::invalid_argument("forward: expected [N,3,H,W] images, got " +
                                shape_str(images.shape));
  }
  NetContext ctx(tape, params);
  ctx.training = training;
  ctx.weights_require_grad = training;

  Var x = tape.leaf(images, false);
  Var stem = impl_->stem_bn.forward(ctx, impl_->stem_conv.forward(ctx, x));
  Var s0 = stem, s1 = stem;
  for (auto& cell : impl_->cells) {
    std::vector<Var> states = {
        cell.pre0_reduce ? cell.pre0_fr.forward(ctx, s0) : cell.pre0_conv.forward(ctx, s0),
        cell.pre1.forward(ctx, s1)};
    for (int node = 0; node < impl_->nodes; ++node) {
      Var agg = -1;
      for (auto& e : cell.edges) {
        if (e.node != node) continue;
        Var y = e.op->forward(ctx, states[e.src]);
        agg = agg < 0 ? y : ops::add(ctx.tape, agg, y);
      }
      if (agg < 0) {
        // node with no retained edges contributes zeros of the cell shape
        agg = ops::zero_op(ctx.tape, states[1], 1);
      }
      states.push_back(agg);
    }
    std::vector<Var> inter(states.begin() + 2, states.end());
    Var out = ops::concat_channels(tape, inter);
    s0 = s1;
    s1 = out;
  }
  Var pooled = ops::global_avg_pool(tape, s1);
  Var logits = ops::linear(tape, pooled, ctx.var(impl_->head_w), ctx.var(impl_->head_b));
  if (param_vars) {
    param_vars->assign(params.count(), -1);
    for (size_t id = 0; id < params.count(); ++id) {
      (*param_vars)[id] = ctx.var_if_used(static_cast<int>(id));
    }
  }
  return logits;
}

size_t count_parameters(const ParamSet& params, const std::vector<int>& ids) {
  size_t n = 0;
  for (int id : ids) n += params.value(id).size();
  return n;
}

}  // namespace confopt
