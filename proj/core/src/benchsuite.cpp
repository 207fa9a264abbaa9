#include "confopt/benchsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

#include "confopt/ops.hpp"

namespace confopt {

std::vector<Benchmark> enumerate_benchmarks() {
  std::vector<Benchmark> out;
  for (VariantKind v : {VariantKind::kDeep, VariantKind::kSingleCell, VariantKind::kWide}) {
    for (OpSetKind o : {OpSetKind::kAllSkip, OpSetKind::kNoSkip, OpSetKind::kRegular}) {
      Benchmark b;
      b.variant = make_variant(v);
      b.opset = o;
      b.id = variant_name(v) + "_" + opset_kind_name(o);
      out.push_back(std::move(b));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Benchmark& a, const Benchmark& b) { return a.id < b.id; });
  return out;
}

Benchmark parse_benchmark(const std::string& id) {
  for (const auto& b : enumerate_benchmarks()) {
    if (b.id == id) return b;
  }
  throw std::invalid_argument("unknown benchmark id '" + id + "'");
}

const std::vector<HPConfig>& hp_grid() {
  static const std::vector<HPConfig> grid = [] {
    const double lrs[] = {0.025, 0.1, 0.01};
    const double wds[] = {1e-4, 3e-4, 1e-3};
    std::vector<HPConfig> g;
    int k = 1;
    for (double lr : lrs) {
      for (double wd : wds) {
        g.push_back({"HP" + std::to_string(k++), lr, wd});
      }
    }
    return g;
  }();
  return grid;
}

const TrialResult& select_architecture(const std::vector<TrialResult>& trials,
                                       const std::string& criterion) {
  if (trials.empty()) throw std::invalid_argument("select_architecture: no trials");
  if (criterion != "final_val_loss" && criterion != "best_val_loss") {
    throw std::invalid_argument("select_architecture: unknown criterion '" + criterion + "'");
  }
  auto value = [&criterion](const TrialResult& t) {
    if (t.val_loss.empty()) throw std::invalid_argument("select_architecture: trial has no epochs");
    if (criterion == "best_val_loss") {
      return *std::min_element(t.val_loss.begin(), t.val_loss.end());
    }
    return t.final_val_loss;
  };
  const TrialResult* best = &trials.front();
  double best_v = value(*best);
  for (const auto& t : trials) {
    double v = value(t);
    if (v < best_v || (v == best_v && t.seed < best->seed)) {
      best = &t;
      best_v = v;
    }
  }
  return *best;
}

EvalResult retrain(const Genotype& genotype, const Benchmark& benchmark, const HPConfig& hp,
                   const Dataset& train_data, const Split& split, const Dataset& test,
                   const RetrainOverrides& ov) {
  if (ov.epochs < 1 || ov.batch_size < 1) {
    throw std::invalid_argument("retrain: epochs and batch_size must be positive");
  }
  auto t0 = std::chrono::steady_clock::now();

  OperationSet opset = make_operation_set(benchmark.opset);
  DiscreteModel model(genotype, benchmark.variant, opset, train_data.num_classes,
                      ov.channel_override, static_cast<uint64_t>(ov.seed));

  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kSgd;
  cfg.lr = hp.learning_rate;
  cfg.momentum = 0.9;
  cfg.weight_decay = hp.weight_decay;
  Optimizer opt(cfg, model.weight_ids());
  LrSchedule sched{LrSchedule::Kind::kCosineAnnealing, hp.learning_rate, 0.0, ov.epochs};

  BatchOptions batch_opts;
  batch_opts.augment = ov.augment;
  batch_opts.normalize = ov.normalize;
  if (ov.normalize) batch_opts.stats = channel_stats(train_data, split.retrain);

  Philox rng_order = make_stream(static_cast<uint64_t>(ov.seed), RngStream::kDataOrder);
  Philox rng_aug = make_stream(static_cast<uint64_t>(ov.seed), RngStream::kAugment);

  int bsz = std::min<int>(ov.batch_size, static_cast<int>(split.retrain.size()));
  if (bsz < 1) throw std::invalid_argument("retrain: empty retrain split");
  int steps = ov.steps_per_epoch > 0
                  ? ov.steps_per_epoch
                  : std::max<int>(1, static_cast<int>(split.retrain.size()) / bsz);

  std::vector<long long> access_log(static_cast<size_t>(train_data.n), 0);

  EvalResult res;
  res.benchmark = benchmark.id;
  res.hp_id = hp.id;
  res.retrain_seed = ov.seed;
  res.epochs = ov.epochs;

  for (int epoch = 0; epoch < ov.epochs; ++epoch) {
    std::vector<int> order = epoch_order(split.retrain, rng_order);
    size_t pos = 0;
    double lr = cosine_lr(epoch, sched);
    double loss_sum = 0;
    for (int s = 0; s < steps; ++s) {
      if (pos + static_cast<size_t>(bsz) > order.size()) {
        order = epoch_order(split.retrain, rng_order);
        pos = 0;
      }
      std::vector<int> idx(order.begin() + static_cast<long>(pos),
                           order.begin() + static_cast<long>(pos) + bsz);
      pos += static_cast<size_t>(bsz);
      Batch b = make_batch(train_data, idx, batch_opts, &rng_aug, &access_log);

      Tape<float> tape;
      std::vector<Var> param_vars;
      Var logits = model.forward(tape, b.images, true, &param_vars);
      Var loss = ops::cross_entropy(tape, logits, b.labels);
      double l = tape.value(loss).data[0];
      if (!std::isfinite(l)) {
        throw std::runtime_error("retrain: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += l;
      tape.backward(loss);

      GradMap grads(model.params.count());
      for (int id : model.weight_ids()) {
        Var v = param_vars[static_cast<size_t>(id)];
        if (v >= 0) grads.grads[static_cast<size_t>(id)] = tape.grad(v);
      }
      std::vector<bool> skip(model.params.count(), false);
      for (size_t id = 0; id < skip.size(); ++id) skip[id] = !grads.has(static_cast<int>(id));
      opt.step(model.params, grads, lr, &skip);
    }
    res.train_loss.push_back(loss_sum / steps);
  }

  // the data-access audit: the search half must be untouched
  std::set<int> search(split.search_train.begin(), split.search_train.end());
  search.insert(split.search_val.begin(), split.search_val.end());
  for (int i : search) res.search_index_reads += access_log[static_cast<size_t>(i)];
  if (res.search_index_reads != 0) {
    throw std::logic_error("retrain: read " + std::to_string(res.search_index_reads) +
                           " samples from the search split");
  }

  // test evaluation with running BN statistics, no augmentation
  BatchOptions eval_opts;
  eval_opts.normalize = ov.normalize;
  eval_opts.stats = batch_opts.stats;
  long long correct = 0;
  size_t pos = 0;
  std::vector<int> all_test(static_cast<size_t>(test.n));
  for (int i = 0; i < test.n; ++i) all_test[static_cast<size_t>(i)] = i;
  while (pos < all_test.size()) {
    size_t take = std::min(static_cast<size_t>(bsz), all_test.size() - pos);
    std::vector<int> idx(all_test.begin() + static_cast<long>(pos),
                         all_test.begin() + static_cast<long>(pos + take));
    pos += take;
    Batch b = make_batch(test, idx, eval_opts);
    Tape<float> tape;
    Var logits = model.forward(tape, b.images, false);
    const Tensor<float>& lv = tape.value(logits);
    int C = lv.shape[1];
    for (size_t i = 0; i < take; ++i) {
      const float* row = lv.data.data() + i * static_cast<size_t>(C);
      int best = 0;
      for (int c = 1; c < C; ++c)
        if (row[c] > row[best]) best = c;
      correct += best == b.labels[i];
    }
  }
  res.test_accuracy = 100.0 * static_cast<double>(correct) / test.n;
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

Summary summarize(const std::vector<EvalResult>& results) {
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> groups;
  for (const auto& r : results) {
    groups[{r.benchmark, r.method}][r.hp_id] = r.test_accuracy;
  }
  Summary out;
  for (const auto& [key, by_hp] : groups) {
    SummaryRow row;
    row.benchmark = key.first;
    row.method = key.second;
    double sum = 0, sq = 0;
    double best = -1;
    for (const auto& hp : hp_grid()) {
      auto it = by_hp.find(hp.id);
      if (it == by_hp.end()) {
        row.missing_hps.push_back(hp.id);
        continue;
      }
      double a = it->second;
      sum += a;
      sq += a * a;
      ++row.count;
      if (a > best) {
        best = a;
        row.best_hp = hp.id;
      }
    }
    if (row.count > 0) {
      row.mean = sum / row.count;
      double var = std::max(sq / row.count - row.mean * row.mean, 0.0);
      row.stddev = std::sqrt(var);
      row.max = best;
      if (row.missing_hps.empty()) out.best_hp_tally[row.best_hp] += 1;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace confopt
