#pragma once

// The bi-level alternating search loop: one architecture step on a
// validation batch, one weight step on a training batch, per iteration.
// Deterministic per (profile, seed); checkpointable at epoch boundaries.

#include <memory>
#include <string>
#include <vector>

#include "confopt/dataset.hpp"
#include "confopt/experiment.hpp"
#include "confopt/mutations.hpp"
#include "confopt/optim.hpp"
#include "confopt/profile.hpp"
#include "confopt/regstop.hpp"
#include "confopt/searchspace.hpp"

namespace confopt {

// True while the architecture parameters stay frozen.
inline bool warmup_gate(int epoch, int warm_epochs) { return epoch < warm_epochs; }

struct StepStats {
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double arch_grad_norm = 0;
  bool arch_stepped = false;
};

struct EpochStats {
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double weight_lr = 0;
  double arch_grad_norm = 0;
  int frozen_ops = 0;
};

struct TrialResult {
  Genotype genotype;
  std::vector<Genotype> epoch_genotypes;
  std::vector<double> train_loss, train_acc, val_loss, val_acc;
  double final_val_loss = 0;
  int completed_epochs = 0;
  int seed = 0;
  bool aborted = false;
  bool early_stopped = false;
  std::string abort_reason;
  std::string genotype_path;
  std::string metrics_path;
};

class Trainer {
 public:
  Trainer(const Profile& profile, const SupernetVariant& variant, const OperationSet& opset,
          int num_classes, int seed);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;
  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;

  // Index lists into `data`; kept by reference for the trainer's lifetime.
  void bind_data(const Dataset& data, std::vector<int> train_idx, std::vector<int> val_idx,
                 BatchOptions batch_opts = {});

  int batch_size() const;       // profile override or the per-variant table
  int steps_per_epoch() const;  // profile override or floor(|train| / batch)
  int epoch() const;
  const Profile& profile() const;
  Supernet& net();
  uint64_t config_hash() const;

  // One arch step (skipped during warm-up) then one weight step, both on
  // fresh batches. Throws on a non-finite loss.
  StepStats bilevel_step();

  // Applies the prune schedule, runs steps_per_epoch bilevel steps at the
  // cosine weight lr, evaluates the validation split, advances the epoch.
  EpochStats run_epoch();

  // discretize() of the current architecture parameters.
  Genotype current_genotype() const;
  Tensor<float> alpha(CellType t) const;

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);  // magic/version/config hash checked

  // Introspection for tests and logging.
  const std::vector<bool>& frozen_params() const;
  int frozen_op_count() const;
  PruneState& prune_state();
  Philox& stream(RngStream s);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Full search trial: epochs of run_epoch with per-epoch genotype/alpha/
// metrics emission, checkpoints every profile.checkpoint_freq epochs, the
// skip-count stop, and a failure marker on aborts. `resume_from`, when
// non-empty, restores a checkpoint before training continues.
TrialResult train_supernet(const Profile& profile, const SupernetVariant& variant,
                           const OperationSet& opset, const Dataset& data, const Split& split,
                           int seed, const TrialPaths& out, const BatchOptions& batch_opts = {},
                           const std::string& resume_from = {});

}  // namespace confopt
