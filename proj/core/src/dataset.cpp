#include "confopt/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace confopt {

namespace {

constexpr int kCifarSize = 32;
constexpr int kCifarRecord = 1 + 3 * kCifarSize * kCifarSize;
constexpr int kCifarPerFile = 10000;

void read_cifar_file(const std::string& path, Dataset& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cifar10: cannot open '" + path + "'");
  std::vector<unsigned char> buf(static_cast<size_t>(kCifarRecord) * kCifarPerFile);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  auto got = in.gcount();
  if (got != static_cast<std::streamsize>(buf.size())) {
    throw std::runtime_error("cifar10: '" + path + "' truncated at byte offset " +
                             std::to_string(got) + " (expected " + std::to_string(buf.size()) +
                             " bytes)");
  }
  for (int r = 0; r < kCifarPerFile; ++r) {
    const unsigned char* rec = buf.data() + static_cast<size_t>(r) * kCifarRecord;
    int label = rec[0];
    if (label < 0 || label > 9) {
      throw std::runtime_error("cifar10: '" + path + "' record " + std::to_string(r) +
                               ": label " + std::to_string(label) + " out of range");
    }
    out.labels.push_back(label);
    for (int i = 0; i < kCifarRecord - 1; ++i) {
      out.images.push_back(static_cast<float>(rec[1 + i]) / 255.0f);
    }
  }
  out.n += kCifarPerFile;
}

}  // namespace

Cifar10 load_cifar10(const std::string& dir) {
  Cifar10 data;
  data.train.size = data.test.size = kCifarSize;
  data.train.num_classes = data.test.num_classes = 10;
  for (int b = 1; b <= 5; ++b) {
    read_cifar_file(dir + "/data_batch_" + std::to_string(b) + ".bin", data.train);
  }
  read_cifar_file(dir + "/test_batch.bin", data.test);
  ChannelStats st = channel_stats(data.train);
  for (int c = 0; c < 3; ++c) {
    if (st.mean[c] <= 0.4 || st.mean[c] >= 0.55) {
      throw std::runtime_error("cifar10: channel " + std::to_string(c) + " mean " +
                               std::to_string(st.mean[c]) +
                               " outside the expected (0.4, 0.55) band; corrupt data?");
    }
  }
  return data;
}

Dataset synth_dataset(int n, int classes, int size, uint64_t seed) {
  if (n < 1 || classes < 2 || size < 4) {
    throw std::invalid_argument("synth_dataset: need n >= 1, classes >= 2, size >= 4");
  }
  Dataset d;
  d.n = n;
  d.channels = 3;
  d.size = size;
  d.num_classes = classes;
  d.images.resize(static_cast<size_t>(n) * d.image_scalars());
  d.labels.resize(n);

  // fixed per-class 3x3 templates, one rng stream for the whole corpus
  Philox rng(seed, 0);
  std::vector<std::array<double, 9>> templates(classes);
  for (int c = 0; c < classes; ++c) {
    for (auto& t : templates[c]) t = rng.normal();
    double norm = 0;
    for (auto t : templates[c]) norm += t * t;
    norm = std::sqrt(std::max(norm, 1e-12));
    for (auto& t : templates[c]) t /= norm;
  }

  long long per_image = d.image_scalars();
  int hw = size * size;
  for (int i = 0; i < n; ++i) {
    int label = i % classes;  // balanced to within one
    d.labels[i] = label;
    float* img = d.images.data() + static_cast<size_t>(i) * per_image;
    // base noise field shared by all channels' signal computation
    std::vector<double> noise(static_cast<size_t>(hw));
    for (auto& v : noise) v = rng.normal();
    const auto& tpl = templates[label];
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        // valid-region template response, replicated border
        double resp = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = std::clamp(y + dy, 0, size - 1);
            int xx = std::clamp(x + dx, 0, size - 1);
            resp += tpl[static_cast<size_t>((dy + 1) * 3 + dx + 1)] * noise[static_cast<size_t>(yy) * size + xx];
          }
        }
        for (int c = 0; c < 3; ++c) {
          double pixel = 0.5 + 0.35 * resp + 0.08 * noise[static_cast<size_t>(y) * size + x] +
                         0.04 * rng.normal() + 0.03 * c;
          img[static_cast<size_t>(c) * hw + static_cast<size_t>(y) * size + x] =
              static_cast<float>(std::clamp(pixel, 0.0, 1.0));
        }
      }
    }
  }
  return d;
}

Split split_dataset(int n, uint64_t seed) {
  if (n < 4) throw std::invalid_argument("split_dataset: n >= 4 required, got " + std::to_string(n));
  Philox rng(seed, static_cast<uint64_t>(RngStream::kDataOrder));
  auto perm = rng.permutation(static_cast<size_t>(n));
  int quarter = n / 4;
  Split s;
  s.search_train.assign(perm.begin(), perm.begin() + quarter);
  s.search_val.assign(perm.begin() + quarter, perm.begin() + 2 * quarter);
  s.retrain.assign(perm.begin() + 2 * quarter, perm.end());
  std::sort(s.search_train.begin(), s.search_train.end());
  std::sort(s.search_val.begin(), s.search_val.end());
  std::sort(s.retrain.begin(), s.retrain.end());
  return s;
}

ChannelStats channel_stats(const Dataset& data, const std::vector<int>& indices) {
  if (data.channels != 3) throw std::invalid_argument("channel_stats: 3-channel data expected");
  std::vector<int> all;
  const std::vector<int>* idx = &indices;
  if (indices.empty()) {
    all.resize(static_cast<size_t>(data.n));
    std::iota(all.begin(), all.end(), 0);
    idx = &all;
  }
  int hw = data.size * data.size;
  long long per_image = data.image_scalars();
  ChannelStats st;
  std::array<double, 3> sum{}, sq{};
  for (int i : *idx) {
    const float* img = data.images.data() + static_cast<size_t>(i) * per_image;
    for (int c = 0; c < 3; ++c) {
      for (int p = 0; p < hw; ++p) {
        double v = img[static_cast<size_t>(c) * hw + p];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
  }
  double count = static_cast<double>(idx->size()) * hw;
  for (int c = 0; c < 3; ++c) {
    st.mean[c] = sum[c] / count;
    double var = std::max(sq[c] / count - st.mean[c] * st.mean[c], 1e-12);
    st.stddev[c] = std::sqrt(var);
  }
  return st;
}

Batch make_batch(const Dataset& data, const std::vector<int>& indices, const BatchOptions& opts,
                 Philox* rng, std::vector<long long>* access_log) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  if (opts.augment && !rng) throw std::invalid_argument("make_batch: augmentation requires an rng");
  int N = static_cast<int>(indices.size());
  int C = data.channels, H = data.size, W = data.size;
  int hw = H * W;
  long long per_image = data.image_scalars();
  Batch batch;
  batch.images = Tensor<float>::zeros({N, C, H, W});
  batch.labels.resize(static_cast<size_t>(N));
  constexpr int kPad = 4;
  for (int b = 0; b < N; ++b) {
    int i = indices[static_cast<size_t>(b)];
    if (i < 0 || i >= data.n) {
      throw std::invalid_argument("make_batch: index " + std::to_string(i) + " out of range");
    }
    if (access_log) (*access_log)[static_cast<size_t>(i)] += 1;
    batch.labels[static_cast<size_t>(b)] = data.labels[static_cast<size_t>(i)];
    const float* img = data.images.data() + static_cast<size_t>(i) * per_image;
    int oy = 0, ox = 0;
    bool flip = false;
    if (opts.augment) {
      oy = static_cast<int>(rng->uniform_int(2 * kPad + 1)) - kPad;
      ox = static_cast<int>(rng->uniform_int(2 * kPad + 1)) - kPad;
      flip = rng->uniform() < 0.5;
    }
    float* out = batch.images.data.data() + static_cast<size_t>(b) * per_image;
    for (int c = 0; c < C; ++c) {
      double mean = opts.normalize ? opts.stats.mean[static_cast<size_t>(c)] : 0.0;
      double inv_std = opts.normalize ? 1.0 / opts.stats.stddev[static_cast<size_t>(c)] : 1.0;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          int sy = y + oy;
          int sx = flip ? (W - 1 - x) + ox : x + ox;
          double v = 0.0;  // zero padding outside the crop window
          if (sy >= 0 && sy < H && sx >= 0 && sx < W) {
            v = img[static_cast<size_t>(c) * hw + static_cast<size_t>(sy) * W + sx];
          }
          out[static_cast<size_t>(c) * hw + static_cast<size_t>(y) * W + x] =
              static_cast<float>((v - mean) * inv_std);
        }
      }
    }
  }
  return batch;
}

std::vector<int> epoch_order(const std::vector<int>& indices, Philox& rng) {
  auto perm = rng.permutation(indices.size());
  std::vector<int> out(indices.size());
  for (size_t i = 0; i < perm.size(); ++i) out[i] = indices[perm[i]];
  return out;
}

}  // namespace confopt
