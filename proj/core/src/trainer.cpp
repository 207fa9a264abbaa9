#include "confopt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "confopt/ops.hpp"

namespace confopt {

namespace {

double batch_accuracy(const Tensor<float>& logits, const std::vector<int>& labels) {
  int N = logits.shape[0], C = logits.shape[1];
  int correct = 0;
  for (int i = 0; i < N; ++i) {
    const float* row = logits.data.data() + static_cast<size_t>(i) * C;
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;
    correct += best == labels[static_cast<size_t>(i)];
  }
  return static_cast<double>(correct) / N;
}

// ---------------------------------------------------------------------------
// Checkpoint binary helpers

constexpr char kMagic[16] = {'C', 'O', 'N', 'F', 'O', 'P', 'T', '-',
                             'C', 'K', 'P', 'T', '\0', '\0', '\0', '\0'};
constexpr uint32_t kVersion = 1;

struct BinWriter {
  std::string buf;
  void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void i64(int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void u8(uint8_t v) { raw(&v, 1); }
  void tensor(const Tensor<float>& t) {
    u32(static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) u32(static_cast<uint32_t>(d));
    u64(t.data.size());
    raw(t.data.data(), t.data.size() * sizeof(float));
  }
};

struct BinReader {
  const std::string& buf;
  size_t pos = 0;
  explicit BinReader(const std::string& b) : buf(b) {}
  void raw(void* p, size_t n) {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
  uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
  int64_t i64() { int64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
  Tensor<float> tensor() {
    uint32_t rank = u32();
    if (rank > 8) throw std::runtime_error("checkpoint: corrupt tensor rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(u32());
    uint64_t n = u64();
    Tensor<float> t;
    if (!shape.empty()) {
      t = Tensor<float>::zeros(shape);
    }
    t.shape = shape;
    t.data.resize(n);
    raw(t.data.data(), n * sizeof(float));
    return t;
  }
};

void write_rng_state(BinWriter& w, const Philox& rng) {
  Philox::State s = rng.state();
  for (auto v : s.counter) w.u32(v);
  for (auto v : s.key) w.u32(v);
  for (auto v : s.buffer) w.u32(v);
  w.u32(s.buffered);
  w.u32(s.has_normal_cache);
  w.f64(s.normal_cache);
}

void read_rng_state(BinReader& r, Philox& rng) {
  Philox::State s;
  for (auto& v : s.counter) v = r.u32();
  for (auto& v : s.key) v = r.u32();
  for (auto& v : s.buffer) v = r.u32();
  s.buffered = r.u32();
  s.has_normal_cache = r.u32();
  s.normal_cache = r.f64();
  rng.set_state(s);
}

}  // namespace

// ---------------------------------------------------------------------------

struct Trainer::Impl {
  Profile prof;
  SupernetVariant variant;
  OperationSet opset;
  int num_classes = 0;
  int seed = 0;

  std::unique_ptr<Supernet> net;
  Optimizer weight_opt, arch_opt;
  LrSchedule sched;
  int epoch = 0;
  PruneState prune;
  std::unique_ptr<GmWindow> gm;
  std::vector<bool> frozen;  // per param id
  int frozen_ops = 0;

  Philox rng_data, rng_val, rng_gumbel, rng_perturb, rng_partial, rng_dirichlet;

  const Dataset* data = nullptr;
  std::vector<int> train_idx, val_idx;
  BatchOptions batch_opts;
  int bsz = 0;
  int steps = 0;

  std::vector<int> train_order, val_order;
  size_t train_pos = 0, val_pos = 0;

  Tensor<float> last_alpha_grad[2];
  StepStats last_step;

  // ----- helpers -----

  bool partial() const { return prof.mutation.partial_connection && prof.mutation.K > 1; }

  Philox* sample_rng() {
    if (prof.sampler.kind == SamplerKind::kGdas) return &rng_gumbel;
    if (prof.sampler.kind == SamplerKind::kDrnas) return &rng_dirichlet;
    return nullptr;
  }

  ForwardOptions base_options() {
    ForwardOptions o;
    o.training = true;
    o.sampler = prof.sampler.kind;
    o.tau = gdas_tau(prof.sampler, epoch, prof.epochs);
    o.sample_rng = sample_rng();
    o.channel_rng = partial() ? &rng_partial : nullptr;
    o.prune = &prune;
    return o;
  }

  Batch next_batch(std::vector<int>& order, size_t& pos, const std::vector<int>& source,
                   Philox& shuffle_rng) {
    if (pos + static_cast<size_t>(bsz) > order.size()) {
      order = epoch_order(source, shuffle_rng);
      pos = 0;
    }
    std::vector<int> idx(order.begin() + static_cast<long>(pos),
                         order.begin() + static_cast<long>(pos) + bsz);
    pos += static_cast<size_t>(bsz);
    return make_batch(*data, idx, batch_opts);
  }

  void check_finite(double loss, const char* phase) {
    if (!std::isfinite(loss)) {
      throw std::runtime_error("trainer: non-finite " + std::string(phase) + " loss at epoch " +
                               std::to_string(epoch));
    }
  }

  Var attach_penalties(Tape<float>& tape, Var loss, const ForwardResult& res) {
    if (prof.sampler.kind == SamplerKind::kFairdarts && prof.penalty.fairdarts_lambda > 0) {
      for (int t = 0; t < 2; ++t) {
        if (res.alpha_var[t] < 0) continue;
        Var w = ops::sigmoid(tape, res.alpha_var[t]);
        loss = ops::add(tape, loss, fairdarts_penalty(tape, w, prof.penalty.fairdarts_lambda));
      }
    }
    if (prof.sampler.kind == SamplerKind::kDrnas && prof.penalty.drnas_lambda > 0) {
      for (int t = 0; t < 2; ++t) {
        if (res.alpha_var[t] < 0) continue;
        loss = ops::add(tape, loss, drnas_penalty(tape, res.alpha_var[t], prof.penalty.drnas_lambda));
      }
    }
    return loss;
  }

  // Flattened weight gradients per (cell type, edge, op); empty vector when
  // the op did not run in this pass.
  using OpGrads = std::vector<std::vector<std::vector<float>>>;  // [ct][edge*ops+op]
  OpGrads collect_op_grads(Tape<float>& tape, const ForwardResult& res) {
    OpGrads out(2);
    int n_ops = opset.size();
    for (int t = 0; t < 2; ++t) {
      CellType ct = t == 0 ? CellType::kNormal : CellType::kReduce;
      if (t == 1 && !net->has_reduce()) continue;
      const auto& table = net->op_params(ct);
      out[t].resize(table.size() * static_cast<size_t>(n_ops));
      for (size_t e = 0; e < table.size(); ++e) {
        for (int o = 0; o < n_ops; ++o) {
          std::vector<float> flat;
          bool used = !table[e][static_cast<size_t>(o)].empty();
          for (int id : table[e][static_cast<size_t>(o)]) {
            Var v = id < static_cast<int>(res.param_vars.size()) ? res.param_vars[id] : -1;
            if (v < 0) {
              used = false;
              break;
            }
            const auto& g = tape.grad(v);
            flat.insert(flat.end(), g.data.begin(), g.data.end());
          }
          if (used) out[t][e * static_cast<size_t>(n_ops) + o] = std::move(flat);
        }
      }
    }
    return out;
  }

  void apply_oles(Tape<float>& tape, const ForwardResult& res, const OpGrads& val_grads) {
    OpGrads train_grads = collect_op_grads(tape, res);
    int n_ops = opset.size();
    for (int t = 0; t < 2; ++t) {
      if (t == 1 && !net->has_reduce()) continue;
      CellType ct = t == 0 ? CellType::kNormal : CellType::kReduce;
      const auto& table = net->op_params(ct);
      for (size_t e = 0; e < table.size(); ++e) {
        for (int o = 0; o < n_ops; ++o) {
          if (table[e][static_cast<size_t>(o)].empty()) continue;
          if (gm->frozen(ct, static_cast<int>(e), o)) continue;
          size_t slot = e * static_cast<size_t>(n_ops) + o;
          if (slot >= val_grads[t].size() || val_grads[t][slot].empty() ||
              train_grads[t][slot].empty()) {
            continue;  // op skipped in one of the passes
          }
          gm->record(ct, static_cast<int>(e), o, gm_score(train_grads[t][slot], val_grads[t][slot]));
          if (oles_gate(*gm, ct, static_cast<int>(e), o) &&
              gm->frozen(ct, static_cast<int>(e), o)) {
            bool newly = false;
            for (int id : table[e][static_cast<size_t>(o)]) {
              if (!frozen[static_cast<size_t>(id)]) newly = true;
              frozen[static_cast<size_t>(id)] = true;
            }
            if (newly) ++frozen_ops;
          }
        }
      }
    }
  }

  StepStats bilevel_step() {
    if (!data) throw std::logic_error("trainer: bind_data before stepping");
    StepStats st;
    bool warm = warmup_gate(epoch, prof.warm_epochs);
    OpGrads val_grads;

    // --- arch step on a validation batch ---
    if (!warm) {
      Batch vb = next_batch(val_order, val_pos, val_idx, rng_val);
      Tape<float> tape;
      ForwardOptions o = base_options();
      o.arch_requires_grad = true;
      o.weights_require_grad = prof.oles_enabled;
      ForwardResult res = net->forward(tape, vb.images, o);
      Var loss = ops::cross_entropy(tape, res.logits, vb.labels);
      st.val_loss = tape.value(loss).data[0];
      st.val_acc = batch_accuracy(tape.value(res.logits), vb.labels);
      check_finite(st.val_loss, "validation");
      loss = attach_penalties(tape, loss, res);
      tape.backward(loss);

      GradMap grads(net->params.count());
      double norm_sq = 0;
      for (int t = 0; t < 2; ++t) {
        if (res.alpha_var[t] >= 0) {
          Tensor<float> g = tape.grad(res.alpha_var[t]);
          for (float v : g.data) norm_sq += static_cast<double>(v) * v;
          last_alpha_grad[t] = g;
          grads.grads[static_cast<size_t>(net->alpha_id(t == 0 ? CellType::kNormal
                                                               : CellType::kReduce))] = std::move(g);
        }
        if (res.beta_var[t] >= 0) {
          Tensor<float> g = tape.grad(res.beta_var[t]);
          for (float v : g.data) norm_sq += static_cast<double>(v) * v;
          grads.grads[static_cast<size_t>(net->beta_id(t == 0 ? CellType::kNormal
                                                              : CellType::kReduce))] = std::move(g);
        }
      }
      st.arch_grad_norm = std::sqrt(norm_sq);
      std::vector<bool> skip(net->params.count(), false);
      for (size_t id = 0; id < skip.size(); ++id) skip[id] = !grads.has(static_cast<int>(id));
      arch_opt.step(net->params, grads, -1.0, &skip);
      st.arch_stepped = true;
      if (prof.oles_enabled) val_grads = collect_op_grads(tape, res);
    }

    // --- weight step on a training batch ---
    Tensor<float> perturbed[2];
    ForwardOptions o = base_options();
    o.arch_requires_grad = false;
    o.weights_require_grad = true;
    if (prof.mutation.perturbation != PerturbMode::kNone && !warm) {
      for (int t = 0; t < 2; ++t) {
        CellType ct = t == 0 ? CellType::kNormal : CellType::kReduce;
        if (t == 1 && !net->has_reduce()) continue;
        const Tensor<float>& a = net->params.value(net->alpha_id(ct));
        const Tensor<float>* vg =
            prof.mutation.perturbation == PerturbMode::kAdversarial ? &last_alpha_grad[t] : nullptr;
        perturbed[t] = perturb_alpha(a, prof.mutation.perturbation, prof.mutation.epsilon,
                                     rng_perturb, vg);
        o.alpha_override[t] = &perturbed[t];
      }
    }
    Batch tb = next_batch(train_order, train_pos, train_idx, rng_data);
    Tape<float> tape;
    ForwardResult res = net->forward(tape, tb.images, o);
    Var loss = ops::cross_entropy(tape, res.logits, tb.labels);
    st.train_loss = tape.value(loss).data[0];
    st.train_acc = batch_accuracy(tape.value(res.logits), tb.labels);
    check_finite(st.train_loss, "training");
    tape.backward(loss);

    if (prof.oles_enabled && !warm) apply_oles(tape, res, val_grads);

    GradMap grads(net->params.count());
    for (int id : net->weight_ids()) {
      Var v = res.param_vars[static_cast<size_t>(id)];
      if (v >= 0 && !frozen[static_cast<size_t>(id)]) {
        grads.grads[static_cast<size_t>(id)] = tape.grad(v);
      }
    }
    std::vector<bool> skip(net->params.count(), false);
    for (size_t id = 0; id < skip.size(); ++id) skip[id] = !grads.has(static_cast<int>(id));
    weight_opt.step(net->params, grads, cosine_lr(epoch, sched), &skip);
    last_step = st;
    return st;
  }

  double eval_validation(double* acc_out) {
    double loss_sum = 0, acc_sum = 0;
    long long n = 0;
    size_t pos = 0;
    while (pos < val_idx.size()) {
      size_t take = std::min(static_cast<size_t>(bsz), val_idx.size() - pos);
      std::vector<int> idx(val_idx.begin() + static_cast<long>(pos),
                           val_idx.begin() + static_cast<long>(pos + take));
      pos += take;
      Batch b = make_batch(*data, idx, batch_opts);
      Tape<float> tape;
      ForwardOptions o = base_options();
      o.arch_requires_grad = false;
      o.weights_require_grad = false;
      ForwardResult res = net->forward(tape, b.images, o);
      Var loss = ops::cross_entropy(tape, res.logits, b.labels);
      double l = tape.value(loss).data[0];
      check_finite(l, "validation");
      loss_sum += l * static_cast<double>(take);
      acc_sum += batch_accuracy(tape.value(res.logits), b.labels) * static_cast<double>(take);
      n += static_cast<long long>(take);
    }
    if (acc_out) *acc_out = acc_sum / static_cast<double>(n);
    return loss_sum / static_cast<double>(n);
  }

  Genotype genotype() const {
    DiscretizePolicy policy = prof.discretize_policy == "all_edges" ? DiscretizePolicy::kAllEdges
                                                                    : DiscretizePolicy::kDartsTop2;
    const Tensor<float>& an = net->params.value(net->alpha_id(CellType::kNormal));
    const Tensor<float>* ar =
        net->has_reduce() ? &net->params.value(net->alpha_id(CellType::kReduce)) : nullptr;
    return discretize(opset, variant.intermediate_nodes, an, ar, prof.sampler.kind, policy,
                      &prune);
  }

  uint64_t config_hash() const {
    uint64_t h = hash_string(prof.serialize());
    h = hash_combine(h, hash_string(variant_name(variant.name)));
    h = hash_combine(h, hash_string(opset_kind_name(opset.kind)));
    h = hash_combine(h, static_cast<uint64_t>(num_classes));
    h = hash_combine(h, static_cast<uint64_t>(seed));
    return h;
  }
};

// ---------------------------------------------------------------------------

Trainer::Trainer(const Profile& profile, const SupernetVariant& variant,
                 const OperationSet& opset, int num_classes, int seed)
    : impl_(std::make_unique<Impl>()) {
  profile.validate();
  Impl& im = *impl_;
  im.prof = profile;
  im.variant = variant;
  im.opset = opset;
  im.num_classes = num_classes;
  im.seed = seed;

  int partial_k = im.partial() ? profile.mutation.K : 1;
  im.net = std::make_unique<Supernet>(variant, opset, num_classes, profile.channel_override,
                                      partial_k, profile.edge_normalization,
                                      static_cast<uint64_t>(seed));
  Philox init = make_stream(static_cast<uint64_t>(seed), RngStream::kInit);
  im.net->reset_arch(profile.sampler.kind, init);

  im.weight_opt = Optimizer(profile.weight_opt, im.net->weight_ids());
  im.arch_opt = Optimizer(profile.arch_opt, im.net->arch_ids());
  im.sched = {LrSchedule::Kind::kCosineAnnealing, profile.weight_opt.lr, 0.0, profile.epochs};
  im.prune = make_prune_state(opset, variant.edges_per_cell, im.net->has_reduce());
  im.frozen.assign(im.net->params.count(), false);
  if (profile.oles_enabled) {
    im.gm = std::make_unique<GmWindow>(variant.edges_per_cell, im.net->has_reduce(), opset.size(),
                                       profile.oles_window, profile.oles_threshold);
  }
  uint64_t s = static_cast<uint64_t>(seed);
  im.rng_data = make_stream(s, RngStream::kDataOrder);
  im.rng_val = make_stream(s, RngStream::kValOrder);
  im.rng_gumbel = make_stream(s, RngStream::kGumbel);
  im.rng_perturb = make_stream(s, RngStream::kPerturbation);
  im.rng_partial = make_stream(s, RngStream::kPartialChannel);
  im.rng_dirichlet = make_stream(s, RngStream::kDirichlet);
}

Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;

void Trainer::bind_data(const Dataset& data, std::vector<int> train_idx, std::vector<int> val_idx,
                        BatchOptions batch_opts) {
  Impl& im = *impl_;
  if (train_idx.empty() || val_idx.empty()) {
    throw std::invalid_argument("trainer: empty train/val index lists");
  }
  im.data = &data;
  im.train_idx = std::move(train_idx);
  im.val_idx = std::move(val_idx);
  im.batch_opts = batch_opts;
  im.bsz = std::min<int>(preset_batch_size(im.prof, im.variant.name),
                         static_cast<int>(std::min(im.train_idx.size(), im.val_idx.size())));
  im.steps = im.prof.steps_per_epoch > 0
                 ? im.prof.steps_per_epoch
                 : std::max<int>(1, static_cast<int>(im.train_idx.size()) / im.bsz);
  im.train_order.clear();
  im.val_order.clear();
  im.train_pos = im.val_pos = 0;
}

int Trainer::batch_size() const { return impl_->bsz; }
int Trainer::steps_per_epoch() const { return impl_->steps; }
int Trainer::epoch() const { return impl_->epoch; }
const Profile& Trainer::profile() const { return impl_->prof; }
Supernet& Trainer::net() { return *impl_->net; }
uint64_t Trainer::config_hash() const { return impl_->config_hash(); }
const std::vector<bool>& Trainer::frozen_params() const { return impl_->frozen; }
int Trainer::frozen_op_count() const { return impl_->frozen_ops; }
PruneState& Trainer::prune_state() { return impl_->prune; }

Philox& Trainer::stream(RngStream s) {
  Impl& im = *impl_;
  switch (s) {
    case RngStream::kDataOrder: return im.rng_data;
    case RngStream::kValOrder: return im.rng_val;
    case RngStream::kGumbel: return im.rng_gumbel;
    case RngStream::kPerturbation: return im.rng_perturb;
    case RngStream::kPartialChannel: return im.rng_partial;
    case RngStream::kDirichlet: return im.rng_dirichlet;
    default: throw std::invalid_argument("trainer: stream not owned by the trainer");
  }
}

StepStats Trainer::bilevel_step() {
  Impl& im = *impl_;
  if (im.train_order.empty()) {
    im.train_order = epoch_order(im.train_idx, im.rng_data);
    im.train_pos = 0;
  }
  if (im.val_order.empty()) {
    im.val_order = epoch_order(im.val_idx, im.rng_val);
    im.val_pos = 0;
  }
  return im.bilevel_step();
}

EpochStats Trainer::run_epoch() {
  Impl& im = *impl_;
  if (!im.data) throw std::logic_error("trainer: bind_data before run_epoch");
  if (im.epoch >= im.prof.epochs) throw std::logic_error("trainer: past the final epoch");

  for (size_t i = 0; i < im.prof.mutation.prune_epochs.size(); ++i) {
    if (im.prof.mutation.prune_epochs[i] != im.epoch) continue;
    const Tensor<float>& an = im.net->params.value(im.net->alpha_id(CellType::kNormal));
    const Tensor<float>* ar = im.net->has_reduce()
                                  ? &im.net->params.value(im.net->alpha_id(CellType::kReduce))
                                  : nullptr;
    prune(im.prune, im.opset, an, ar, im.prof.mutation.prune_fractions[i], im.prof.sampler.kind);
  }

  im.train_order = epoch_order(im.train_idx, im.rng_data);
  im.val_order = epoch_order(im.val_idx, im.rng_val);
  im.train_pos = im.val_pos = 0;

  EpochStats es;
  es.weight_lr = cosine_lr(im.epoch, im.sched);
  double norm_sum = 0;
  int arch_steps = 0;
  for (int s = 0; s < im.steps; ++s) {
    StepStats st = im.bilevel_step();
    es.train_loss += st.train_loss;
    es.train_acc += st.train_acc;
    if (st.arch_stepped) {
      norm_sum += st.arch_grad_norm;
      ++arch_steps;
    }
  }
  es.train_loss /= im.steps;
  es.train_acc /= im.steps;
  es.arch_grad_norm = arch_steps ? norm_sum / arch_steps : 0.0;
  es.val_loss = im.eval_validation(&es.val_acc);
  es.frozen_ops = im.frozen_ops;
  ++im.epoch;
  return es;
}

Genotype Trainer::current_genotype() const { return impl_->genotype(); }

Tensor<float> Trainer::alpha(CellType t) const {
  return impl_->net->params.value(impl_->net->alpha_id(t));
}

// ---------------------------------------------------------------------------
// Checkpointing

void Trainer::save_checkpoint(const std::string& path) const {
  Impl& im = *const_cast<Impl*>(impl_.get());
  BinWriter w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.u64(im.config_hash());

  auto block = [&w](const BinWriter& inner) {
    w.u64(inner.buf.size());
    w.buf += inner.buf;
  };

  // parameter block
  BinWriter pb;
  pb.u32(static_cast<uint32_t>(im.net->params.count()));
  for (size_t id = 0; id < im.net->params.count(); ++id) {
    pb.tensor(im.net->params.value(static_cast<int>(id)));
  }
  block(pb);

  // rng block
  BinWriter rb;
  rb.u32(6);
  for (Philox* rng : {&im.rng_data, &im.rng_val, &im.rng_gumbel, &im.rng_perturb, &im.rng_partial,
                      &im.rng_dirichlet}) {
    write_rng_state(rb, *rng);
  }
  block(rb);

  // optimizer + trainer state block
  BinWriter sb;
  for (Optimizer* opt : {&im.weight_opt, &im.arch_opt}) {
    sb.i64(opt->step_count());
    auto& bufs = opt->buffers(im.net->params);
    sb.u32(static_cast<uint32_t>(bufs.size()));
    for (auto& b : bufs) {
      sb.tensor(b.m);
      sb.tensor(b.v);
    }
  }
  sb.u32(static_cast<uint32_t>(im.epoch));
  for (const auto* masks : {&im.prune.normal, &im.prune.reduce}) {
    sb.u32(static_cast<uint32_t>(masks->size()));
    for (const auto& edge : *masks) {
      sb.u32(static_cast<uint32_t>(edge.size()));
      for (char c : edge) sb.u8(static_cast<uint8_t>(c));
    }
  }
  sb.u64(im.frozen.size());
  for (bool f : im.frozen) sb.u8(f ? 1 : 0);
  sb.u32(static_cast<uint32_t>(im.frozen_ops));
  sb.u8(im.gm ? 1 : 0);
  if (im.gm) {
    auto slots = im.gm->export_state();
    sb.u64(slots.size());
    for (const auto& s : slots) {
      sb.u8(s.frozen ? 1 : 0);
      sb.u64(s.scores.size());
      for (double d : s.scores) sb.f64(d);
    }
  }
  block(sb);

  atomic_write(path, w.buf);
}

void Trainer::load_checkpoint(const std::string& path) {
  Impl& im = *impl_;
  std::string buf = read_file(path);
  BinReader r(buf);
  char magic[16];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  }
  uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: format version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kVersion) + ")");
  }
  uint64_t hash = r.u64();
  if (hash != im.config_hash()) {
    throw std::runtime_error("checkpoint: config hash mismatch; this file belongs to a "
                             "different (profile, variant, opset, seed) configuration");
  }

  auto read_block = [&r]() {
    uint64_t len = r.u64();
    if (r.pos + len > r.buf.size()) throw std::runtime_error("checkpoint: truncated block");
    return len;
  };

  read_block();
  uint32_t n_params = r.u32();
  if (n_params != im.net->params.count()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  for (uint32_t id = 0; id < n_params; ++id) {
    Tensor<float> t = r.tensor();
    Tensor<float>& dst = im.net->params.value(static_cast<int>(id));
    if (t.shape != dst.shape) throw std::runtime_error("checkpoint: parameter shape mismatch");
    dst = std::move(t);
  }

  read_block();
  if (r.u32() != 6) throw std::runtime_error("checkpoint: rng stream count mismatch");
  for (Philox* rng : {&im.rng_data, &im.rng_val, &im.rng_gumbel, &im.rng_perturb, &im.rng_partial,
                      &im.rng_dirichlet}) {
    read_rng_state(r, *rng);
  }

  read_block();
  for (Optimizer* opt : {&im.weight_opt, &im.arch_opt}) {
    int64_t steps = r.i64();
    uint32_t n_buf = r.u32();
    auto& bufs = opt->buffers(im.net->params);
    if (n_buf != bufs.size()) throw std::runtime_error("checkpoint: optimizer buffer mismatch");
    for (auto& b : bufs) {
      Tensor<float> m = r.tensor();
      Tensor<float> v = r.tensor();
      if (m.shape != b.m.shape) throw std::runtime_error("checkpoint: optimizer shape mismatch");
      b.m = std::move(m);
      b.v = std::move(v);
    }
    opt->set_step_count(steps);
  }
  im.epoch = static_cast<int>(r.u32());
  for (auto* masks : {&im.prune.normal, &im.prune.reduce}) {
    uint32_t n = r.u32();
    if (n != masks->size()) throw std::runtime_error("checkpoint: prune mask mismatch");
    for (auto& edge : *masks) {
      uint32_t len = r.u32();
      if (len != edge.size()) throw std::runtime_error("checkpoint: prune mask mismatch");
      for (auto& c : edge) c = static_cast<char>(r.u8());
    }
  }
  uint64_t nf = r.u64();
  if (nf != im.frozen.size()) throw std::runtime_error("checkpoint: frozen mask mismatch");
  for (size_t i = 0; i < nf; ++i) im.frozen[i] = r.u8() != 0;
  im.frozen_ops = static_cast<int>(r.u32());
  bool has_gm = r.u8() != 0;
  if (has_gm != static_cast<bool>(im.gm)) {
    throw std::runtime_error("checkpoint: gradient-matching state mismatch");
  }
  if (has_gm) {
    uint64_t n = r.u64();
    std::vector<GmWindow::SlotState> slots(n);
    for (auto& s : slots) {
      s.frozen = r.u8() != 0;
      uint64_t ns = r.u64();
      s.scores.resize(ns);
      for (auto& d : s.scores) d = r.f64();
    }
    im.gm->import_state(slots);
  }
  im.train_order.clear();
  im.val_order.clear();
  im.train_pos = im.val_pos = 0;
}

// ---------------------------------------------------------------------------
// Full trial

TrialResult train_supernet(const Profile& profile, const SupernetVariant& variant,
                           const OperationSet& opset, const Dataset& data, const Split& split,
                           int seed, const TrialPaths& out, const BatchOptions& batch_opts,
                           const std::string& resume_from) {
  TrialResult result;
  result.seed = seed;
  result.genotype_path = out.genotype;
  result.metrics_path = out.metrics;

  Trainer trainer(profile, variant, opset, data.num_classes, seed);
  trainer.bind_data(data, split.search_train, split.search_val, batch_opts);
  atomic_write(out.profile, profile.serialize());
  if (!resume_from.empty()) trainer.load_checkpoint(resume_from);

  int log_failures = 0;
  try {
    while (trainer.epoch() < profile.epochs) {
      EpochStats es = trainer.run_epoch();
      int e = trainer.epoch() - 1;  // the epoch just completed
      result.train_loss.push_back(es.train_loss);
      result.train_acc.push_back(es.train_acc);
      result.val_loss.push_back(es.val_loss);
      result.val_acc.push_back(es.val_acc);

      Genotype geno = trainer.current_genotype();
      result.epoch_genotypes.push_back(geno);
      result.completed_epochs = e + 1;

      try {
        MetricsRow row;
        row.epoch = e;
        row.values = {{"train_loss", es.train_loss}, {"train_acc", es.train_acc},
                      {"val_loss", es.val_loss},     {"val_acc", es.val_acc},
                      {"weight_lr", es.weight_lr},   {"arch_grad_norm", es.arch_grad_norm}};
        if (profile.oles_enabled) row.values.emplace_back("frozen_ops", es.frozen_ops);
        for (const auto& op : opset.ops) {
          int freq = 0;
          for (const auto& edge : geno.edges) freq += edge.op == op;
          row.values.emplace_back("freq_" + op, freq);
        }
        append_metrics(out.metrics, row);
        Tensor<float> an = trainer.alpha(CellType::kNormal);
        if (trainer.net().has_reduce()) {
          Tensor<float> ar = trainer.alpha(CellType::kReduce);
          write_alpha(out.alpha_epoch(e), an, &ar);
        } else {
          write_alpha(out.alpha_epoch(e), an, nullptr);
        }
        atomic_write(out.genotype_epoch(e), geno.serialize());
      } catch (const std::exception&) {
        ++log_failures;  // logging failures never kill a trial
      }

      if ((e + 1) % profile.checkpoint_freq == 0 || e + 1 == profile.epochs) {
        trainer.save_checkpoint(out.checkpoint_epoch(e));
      }
      if (profile.early_stop == "skip_count" && skip_count_stop(geno, profile.skip_threshold)) {
        result.early_stopped = true;
        break;
      }
    }
  } catch (const std::exception& ex) {
    result.aborted = true;
    result.abort_reason = ex.what();
    atomic_write(out.failure,
                 "epoch=" + std::to_string(trainer.epoch()) + " cause=" + ex.what() + "\n");
    return result;
  }

  result.genotype = trainer.current_genotype();
  result.final_val_loss = result.val_loss.empty() ? 0.0 : result.val_loss.back();
  atomic_write(out.genotype, result.genotype.serialize());
  (void)log_failures;
  return result;
}

}  // namespace confopt
