#pragma once

// The nine-benchmark evaluation protocol: supernet variant x operation set
// combinations, architecture selection across seeds, the 3x3 retraining
// hyperparameter grid, discrete-model retraining, and result summaries.

#include <map>
#include <string>
#include <vector>

#include "confopt/dataset.hpp"
#include "confopt/searchspace.hpp"
#include "confopt/trainer.hpp"

namespace confopt {

struct Benchmark {
  std::string id;  // "<variant>_<opset>", e.g. "deep_no_skip"
  SupernetVariant variant;
  OpSetKind opset = OpSetKind::kRegular;
};

// The 9 benchmarks = {deep, single_cell, wide} x {all_skip, no_skip,
// regular}, in fixed lexicographic id order.
std::vector<Benchmark> enumerate_benchmarks();
Benchmark parse_benchmark(const std::string& id);

struct HPConfig {
  std::string id;  // HP1..HP9
  double learning_rate = 0.025;
  double weight_decay = 3e-4;
};

// The retraining grid: lr {0.025, 0.1, 0.01} x wd {1e-4, 3e-4, 1e-3},
// HP1=(0.025,1e-4) ... HP9=(0.01,1e-3).
const std::vector<HPConfig>& hp_grid();

// Trial with the lowest validation loss; ties resolve to the lowest seed.
// criterion: final_val_loss | best_val_loss.
const TrialResult& select_architecture(const std::vector<TrialResult>& trials,
                                       const std::string& criterion);

struct RetrainOverrides {
  int epochs = 300;
  int batch_size = 512;
  int seed = 0;
  int steps_per_epoch = 0;   // 0 = cover the retrain split
  int channel_override = 0;  // matches the search-side override
  bool augment = true;       // 4-pad crop + flip (CIFAR recipe)
  bool normalize = true;     // per-channel standardization
};

struct EvalResult {
  std::string benchmark;
  std::string method;
  std::string hp_id;
  int retrain_seed = 0;
  double test_accuracy = 0.0;  // percentage
  std::vector<double> train_loss;
  int epochs = 0;
  double wall_seconds = 0.0;
  long long search_index_reads = 0;  // data-access audit; must stay 0
};

// Trains the discrete model from scratch on the retrain split (SGD momentum
// 0.9, cosine lr to 0) and evaluates on `test`. Never reads search indices.
EvalResult retrain(const Genotype& genotype, const Benchmark& benchmark, const HPConfig& hp,
                   const Dataset& train_data, const Split& split, const Dataset& test,
                   const RetrainOverrides& overrides = {});

struct SummaryRow {
  std::string benchmark;
  std::string method;
  double mean = 0, stddev = 0, max = 0;
  std::string best_hp;
  int count = 0;
  std::vector<std::string> missing_hps;  // non-empty = partial grid
};

struct Summary {
  std::vector<SummaryRow> rows;                // sorted by (benchmark, method)
  std::map<std::string, int> best_hp_tally;    // best-HP counts over full rows
};

Summary summarize(const std::vector<EvalResult>& results);

}  // namespace confopt
