#pragma once

// Image datasets and the search/retrain data protocol: CIFAR-10 binary
// loading, the deterministic synthetic corpus, disjoint 25/25/50 splits,
// batching, and CIFAR-style augmentation.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "confopt/rng.hpp"
#include "confopt/tensor.hpp"

namespace confopt {

struct Dataset {
  int n = 0;
  int channels = 3;
  int size = 0;  // square images
  int num_classes = 0;
  std::vector<float> images;  // n * channels * size * size, CHW per image
  std::vector<int> labels;

  long long image_scalars() const {
    return static_cast<long long>(channels) * size * size;
  }
};

// Reads data_batch_{1..5}.bin and test_batch.bin (label byte + 3072 pixel
// bytes per record, planes R,G,B); pixels scale to [0,1]. Truncated files
// are rejected with the offending byte offset.
struct Cifar10 {
  Dataset train;  // 50000
  Dataset test;   // 10000
};
Cifar10 load_cifar10(const std::string& dir);

// Deterministic synthetic corpus: each class has a fixed 3x3 convolution
// template; images are noise plus the class template response, so a small
// conv net separates classes. Labels are balanced to within one sample.
Dataset synth_dataset(int n, int classes, int size, uint64_t seed);

// Disjoint 25/25/50 index split via a seeded permutation. Odd remainders
// land in retrain; n < 4 is rejected.
struct Split {
  std::vector<int> search_train;
  std::vector<int> search_val;
  std::vector<int> retrain;
};
Split split_dataset(int n, uint64_t seed);

// Per-channel mean/std over the given indices (whole set when empty).
struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};
ChannelStats channel_stats(const Dataset& data, const std::vector<int>& indices = {});

struct BatchOptions {
  bool augment = false;    // 4-pad random crop + horizontal flip
  bool normalize = false;  // (x - mean) / std per channel
  ChannelStats stats;
};

// Assembles [N, C, H, W] images and the label vector for `indices`.
// `rng` is required when augmenting. `access_log`, when non-null, is
// incremented per read index (the retrain/search disjointness audit).
struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
};
Batch make_batch(const Dataset& data, const std::vector<int>& indices, const BatchOptions& opts,
                 Philox* rng = nullptr, std::vector<long long>* access_log = nullptr);

// Seeded epoch ordering over an index subset.
std::vector<int> epoch_order(const std::vector<int>& indices, Philox& rng);

}  // namespace confopt
