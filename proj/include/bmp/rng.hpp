#pragma once

// Philox4x64-10 counter-based generator (Salmon et al., SC'11), usable as a
// C++ UniformRandomBitGenerator.
//
// Streams: a generator is fully determined by its 128-bit key. We use
// key = {seed, stream}, so replicate r of an ensemble with master seed s
// draws from key {s, r} -- independent streams with no shared state and no
// dependence on thread scheduling. The 256-bit counter starts at zero and
// is bumped before each block, matching numpy's Philox bit for bit.

#include <array>
#include <cstdint>
#include <limits>

namespace bmp {

class Philox4x64 {
 public:
  using result_type = std::uint64_t;
  using counter_type = std::array<std::uint64_t, 4>;
  using key_type = std::array<std::uint64_t, 2>;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  explicit Philox4x64(std::uint64_t seed = 0, std::uint64_t stream = 0) : key_{seed, stream} {}

  result_type operator()() {
    if (index_ == 4) refill();
    return block_[index_++];
  }

  void discard(unsigned long long n) {
    while (n-- > 0) (*this)();
  }

  // The raw bijection: ten rounds over `ctr` under `key`.
  static counter_type generate(const counter_type& ctr, const key_type& key) {
    return rounds(ctr, schedule(key));
  }

  const key_type& key() const { return key_; }
  const counter_type& counter() const { return counter_; }

 private:
  static constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
  static constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
  static constexpr std::uint64_t kBump0 = 0x9E3779B97F4A7C15ULL;  // golden ratio
  static constexpr std::uint64_t kBump1 = 0xBB67AE8584CAA73BULL;  // sqrt(3) - 1

  using schedule_type = std::array<std::uint64_t, 20>;

  static schedule_type schedule(const key_type& key) {
    schedule_type ks{};
    for (int r = 0; r < 10; ++r) {
      ks[2 * r] = key[0] + static_cast<std::uint64_t>(r) * kBump0;
      ks[2 * r + 1] = key[1] + static_cast<std::uint64_t>(r) * kBump1;
    }
    return ks;
  }

  // Ten rounds with the round keys precomputed per generator.
  static counter_type rounds(const counter_type& ctr, const schedule_type& ks) {
    std::uint64_t x0 = ctr[0], x1 = ctr[1], x2 = ctr[2], x3 = ctr[3];
#pragma GCC unroll 10
    for (int r = 0; r < 10; ++r) {
      const unsigned __int128 p0 = static_cast<unsigned __int128>(kMul0) * x0;
      const unsigned __int128 p1 = static_cast<unsigned __int128>(kMul1) * x2;
      const auto hi0 = static_cast<std::uint64_t>(p0 >> 64);
      const auto hi1 = static_cast<std::uint64_t>(p1 >> 64);
      x0 = hi1 ^ x1 ^ ks[2 * r];
      x1 = static_cast<std::uint64_t>(p1);
      x2 = hi0 ^ x3 ^ ks[2 * r + 1];
      x3 = static_cast<std::uint64_t>(p0);
    }
    return {x0, x1, x2, x3};
  }

  // Out of line on purpose: inlined, GCC emits a store-forwarding stall
  // that costs ~5x throughput.
  [[gnu::noinline]] void refill() {
    if (++counter_[0] == 0 && ++counter_[1] == 0 && ++counter_[2] == 0) ++counter_[3];
    block_ = rounds(counter_, schedule_);
    index_ = 0;
  }

  key_type key_;
  schedule_type schedule_ = schedule(key_);
  counter_type counter_{0, 0, 0, 0};
  counter_type block_{};
  int index_ = 4;
};

// Uniform double on [0, 1) from the top 53 bits.
template <class Urbg>
double uniform01(Urbg& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

}  // namespace bmp
