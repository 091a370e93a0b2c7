#pragma once

// Counter-based random streams. A stream's n-th output is a pure function of
// (key, n), so per-slot randomness is independent of how slots are batched or
// which execution context steps them.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace rlstack {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632BE59BD9B4E019ULL));
}

enum class StreamKind : std::uint64_t { env = 1, agent = 2, eval_env = 3, eval_agent = 4, replay = 5, init = 6 };

class SlotRng {
 public:
  using result_type = std::uint64_t;

  SlotRng() = default;
  explicit SlotRng(std::uint64_t key) : key_(key) {}

  static SlotRng for_slot(std::uint64_t master_seed, std::uint64_t slot, StreamKind kind) {
    return SlotRng(hash_combine(hash_combine(master_seed, static_cast<std::uint64_t>(kind)), slot));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return splitmix64(key_ + counter_++ * 0xD1B54A32D192ED03ULL); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
  }

  /// Standard normal by Box-Muller; consumes two outputs.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const { return counter_; }
  std::uint64_t key() const { return key_; }

  bool operator==(const SlotRng&) const = default;

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace rlstack
