#pragma once

// On-disk experiment layout and the text formats shared by the trainer,
// benchmark suite and CLI: atomic file writes, the per-trial directory
// tree, epoch metrics logs with alpha sidecars, and the append-only
// results ledger.

#include <string>
#include <utility>
#include <vector>

#include "confopt/tensor.hpp"

namespace confopt {

// Writes via a temporary file in the target directory plus rename, so
// readers never observe partial content.
void atomic_write(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

struct TrialPaths {
  std::string dir;       // <root>/<benchmark>/<method>/seed<k>
  std::string profile;   // canonical profile serialization
  std::string metrics;   // epoch metrics log
  std::string genotype;  // final discretized genotype
  std::string failure;   // marker written on aborts

  std::string genotype_epoch(int epoch) const;
  std::string alpha_epoch(int epoch) const;
  std::string checkpoint_epoch(int epoch) const;
};

class ExperimentDir {
 public:
  explicit ExperimentDir(std::string root);

  const std::string& root() const { return root_; }

  // Creates the directory tree on first use.
  TrialPaths trial(const std::string& benchmark, const std::string& method, int seed) const;

 private:
  std::string root_;
};

// One metrics-log line: `epoch=<k>` followed by key=value pairs.
struct MetricsRow {
  int epoch = 0;
  std::vector<std::pair<std::string, double>> values;

  double at(const std::string& key) const;
  bool has(const std::string& key) const;
};

void append_metrics(const std::string& path, const MetricsRow& row);
std::vector<MetricsRow> read_metrics(const std::string& path);  // line-numbered errors

// Alpha sidecar: one edge per line, space-separated op weights; normal-cell
// edges first, reduce-cell edges after.
void write_alpha(const std::string& path, const Tensor<float>& normal,
                 const Tensor<float>* reduce);
std::vector<std::vector<double>> read_alpha(const std::string& path);

// Append-only TSV of finished trials.
struct LedgerRow {
  std::string benchmark;
  std::string method;
  std::string hp_id;  // "-" for search trials
  int seed = 0;
  double test_accuracy = 0.0;
  int epochs = 0;
  double wall_seconds = 0.0;
  std::string genotype_path;
};

void append_ledger(const std::string& path, const LedgerRow& row);
std::vector<LedgerRow> read_ledger(const std::string& path);

// Environment knobs: CONFOPT_DATA_DIR (default "data"), CONFOPT_THREADS
// (default 1, must parse as a positive integer).
std::string env_data_dir();
int env_threads();

}  // namespace confopt
