#pragma once

// Counter-based pseudo-random generator (Philox4x32-10).
//
// The generator identity is fixed so that sampled trajectories reproduce
// across machines: state is a 128-bit counter plus a 64-bit key, advanced
// through ten rounds of the Philox mixing function. Independent streams are
// derived from (seed, stream id) via splitmix64, so the data-order, gumbel,
// perturbation and partial-channel streams of a trial never overlap.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace confopt {

class Philox {
 public:
  Philox() : Philox(0, 0) {}
  Philox(uint64_t seed, uint64_t stream);

  // 32 uniform random bits.
  uint32_t next_u32();
  uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n);
  // Standard normal via Box-Muller.
  double normal();
  // Gumbel(0, 1): -log(-log(u)).
  double gumbel();

  // Fisher-Yates shuffle of [0, n) indices.
  std::vector<size_t> permutation(size_t n);

  // Serializable state: counter (4 words), key (2 words), cache.
  struct State {
    std::array<uint32_t, 4> counter{};
    std::array<uint32_t, 2> key{};
    std::array<uint32_t, 4> buffer{};
    uint32_t buffered = 0;  // unconsumed words left in buffer
    uint32_t has_normal_cache = 0;
    double normal_cache = 0.0;
  };
  State state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  void refill();
  State state_;
};

// Stream ids used by the trainer; fixed so checkpoints stay compatible.
enum class RngStream : uint64_t {
  kDataOrder = 1,
  kGumbel = 2,
  kPerturbation = 3,
  kPartialChannel = 4,
  kInit = 5,
  kDirichlet = 6,
  kAugment = 7,
  kValOrder = 8,
};

inline Philox make_stream(uint64_t seed, RngStream stream) {
  return Philox(seed, static_cast<uint64_t>(stream));
}

// splitmix64, used for key derivation and config hashing.
uint64_t splitmix64(uint64_t x);
uint64_t hash_combine(uint64_t h, uint64_t v);
uint64_t hash_string(const std::string& s);

}  // namespace confopt
