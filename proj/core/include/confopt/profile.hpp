#pragma once

// Declarative description of one NAS method run: sampler, mutations,
// penalties, and trainer settings. Method presets resolve to the published
// recipes; files overlay presets with explicit keys.

#include <string>
#include <vector>

#include "confopt/mutations.hpp"
#include "confopt/optim.hpp"
#include "confopt/regstop.hpp"
#include "confopt/samplers.hpp"
#include "confopt/searchspace.hpp"

namespace confopt {

struct Profile {
  std::string method;  // darts | pcdarts | fairdarts | smoothdarts | oles | drnas | gdas
  SamplerConfig sampler;
  MutationConfig mutation;
  PenaltyConfig penalty;

  bool edge_normalization = false;

  int epochs = 100;
  int warm_epochs = 0;
  int batch_size = 0;       // 0 = per-variant table default
  int steps_per_epoch = 0;  // 0 = derive from the data split
  OptimizerConfig weight_opt;
  OptimizerConfig arch_opt;
  bool oles_enabled = false;
  int oles_window = 20;
  double oles_threshold = 0.4;
  std::string early_stop = "none";  // none | skip_count
  int skip_threshold = 2;
  std::vector<int> seeds = {0, 1, 2};
  int checkpoint_freq = 1;

  // desk-scale extras
  int channel_override = 0;
  std::string discretize_policy = "darts_top2";  // darts_top2 | all_edges
  std::string val_criterion = "final_val_loss";  // final_val_loss | best_val_loss

  void validate() const;
  std::string serialize() const;
  static Profile parse(const std::string& text);
  static Profile parse_file(const std::string& path);
};

// The seven evaluated methods in fixed order.
const std::vector<std::string>& method_names();

// Preset resolving the published recipe for one method.
Profile make_preset(const std::string& method);

// Search batch size from the per-variant table; explicit profile values win.
int preset_batch_size(const Profile& profile, VariantKind variant);

}  // namespace confopt
