#pragma once

// Regularization penalties added to the validation loss and early-stopping
// mechanisms: the FairDARTS zero-one attractor, the DrNAS concentration
// anchor, the OLES gradient-matching gate, and the skip-count stop.

#include <vector>

#include "confopt/ops.hpp"
#include "confopt/searchspace.hpp"
#include "confopt/tape.hpp"

namespace confopt {

struct PenaltyConfig {
  double fairdarts_lambda = 10.0;
  double drnas_lambda = 1.0;

  void validate() const {
    if (fairdarts_lambda < 0 || drnas_lambda < 0) {
      throw std::invalid_argument("penalty config: lambda >= 0 required");
    }
  }
};

// lambda * mean of w(1-w) over all entries; w are sigmoid activations, so
// the minimum sits at saturated {0,1} weights.
template <typename T>
Var fairdarts_penalty(Tape<T>& tape, Var weights, double lambda) {
  const Tensor<T>& wv = tape.value(weights);
  Var one = tape.leaf(Tensor<T>::full(wv.shape, T(1)), false);
  Var attractor = ops::mul(tape, weights, ops::sub(tape, one, weights));
  return ops::scale_const(tape, ops::mean(tape, attractor), static_cast<T>(lambda));
}

// lambda * sum of (log concentration)^2; anchors concentrations at 1.
template <typename T>
Var drnas_penalty(Tape<T>& tape, Var log_concentration, double lambda) {
  Var sq = ops::mul(tape, log_concentration, log_concentration);
  return ops::scale_const(tape, ops::sum(tape, sq), static_cast<T>(lambda));
}

// Cosine similarity of two flattened gradients; both-zero pairs score 0.
double gm_score(const std::vector<float>& train_grad, const std::vector<float>& val_grad);

// Per (cell type, edge, op) running gradient-matching windows and the
// frozen mask. Freezing is permanent once decided.
class GmWindow {
 public:
  GmWindow(int edges_per_cell, bool has_reduce, int n_ops, int window = 20,
           double threshold = 0.4);

  int window_length() const { return window_; }
  double threshold() const { return threshold_; }

  void record(CellType ct, int edge, int op, double score);
  bool frozen(CellType ct, int edge, int op) const;
  int buffered(CellType ct, int edge, int op) const;
  int frozen_count() const;

  // Checkpoint access: normal slots first, then reduce slots.
  struct SlotState {
    bool frozen = false;
    std::vector<double> scores;
  };
  std::vector<SlotState> export_state() const;
  void import_state(const std::vector<SlotState>& slots);

 private:
  friend bool oles_gate(GmWindow&, CellType, int, int);
  struct Slot {
    std::vector<double> scores;
    bool frozen = false;
  };
  Slot& slot(CellType ct, int edge, int op);
  const Slot& slot(CellType ct, int edge, int op) const;

  int edges_, n_ops_, window_;
  double threshold_;
  std::vector<Slot> slots_[2];
};

// Evaluates a full window: frozen when the mean score drops below the
// threshold; the window resets after each decision. Returns true when the
// op is (now) frozen.
bool oles_gate(GmWindow& window, CellType ct, int edge, int op);

// True iff the normal-cell genotype retains more than `threshold` skip
// connections.
bool skip_count_stop(const Genotype& genotype, int threshold);

}  // namespace confopt
