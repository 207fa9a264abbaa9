#include "confopt/rng.hpp"

namespace confopt {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
  uint64_t p = static_cast<uint64_t>(a) * b;
  hi = static_cast<uint32_t>(p >> 32);
  lo = static_cast<uint32_t>(p);
}

}  // namespace

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t hash_combine(uint64_t h, uint64_t v) {
  return splitmix64(h ^ (v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2)));
}

uint64_t hash_string(const std::string& s) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

Philox::Philox(uint64_t seed, uint64_t stream) {
  uint64_t key = splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x5851F42D4C957F2Dull));
  state_.key = {static_cast<uint32_t>(key), static_cast<uint32_t>(key >> 32)};
  state_.counter = {0, 0, 0, 0};
  state_.buffered = 0;
}

void Philox::refill() {
  std::array<uint32_t, 4> ctr = state_.counter;
  std::array<uint32_t, 2> key = state_.key;
  for (int round = 0; round < 10; ++round) {
    uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  state_.buffer = ctr;
  state_.buffered = 4;
  // 128-bit counter increment
  for (int i = 0; i < 4; ++i) {
    if (++state_.counter[i] != 0) break;
  }
}

uint32_t Philox::next_u32() {
  if (state_.buffered == 0) refill();
  return state_.buffer[4 - state_.buffered--];
}

uint64_t Philox::next_u64() {
  uint64_t hi = next_u32();
  return (hi << 32) | next_u32();
}

double Philox::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Philox::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

uint64_t Philox::uniform_int(uint64_t n) {
  // rejection sampling for an unbiased draw
  uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Philox::normal() {
  if (state_.has_normal_cache) {
    state_.has_normal_cache = 0;
    return state_.normal_cache;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  state_.normal_cache = r * std::sin(theta);
  state_.has_normal_cache = 1;
  return r * std::cos(theta);
}

double Philox::gumbel() {
  double u;
  do {
    u = uniform();
  } while (u <= 0.0);
  return -std::log(-std::log(u));
}

std::vector<size_t> Philox::permutation(size_t n) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = n; i > 1; --i) {
    size_t j = uniform_int(i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace confopt
