#pragma once

// Counter-based stream derivation.
//
// Every random quantity in the library is drawn from a Xoshiro256** engine
// whose 256-bit state is expanded (SplitMix64) from a 64-bit key.  Keys are
// derived by folding labels into a parent key with `derive_key`, so a stream
// is a pure function of (master seed, labels...).  Per-site streams are keyed
// by site coordinates, which makes sampled fields independent of the window
// they were sampled on.

#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>

namespace mdperc {

// SplitMix64 output function (stateless finalizer).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t label) noexcept {
  return mix64(parent ^ mix64(label ^ 0x5851f42d4c957f2dULL));
}

template <class... Labels>
constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t label, Labels... rest) noexcept {
  return derive_key(derive_key(parent, label), static_cast<std::uint64_t>(rest)...);
}

// FNV-1a, used to turn experiment identifiers into labels.
constexpr std::uint64_t hash_label(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Xoshiro256ss {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256ss(std::uint64_t key = 0) noexcept { seed(key); }

  void seed(std::uint64_t key) noexcept {
    std::uint64_t s = key;
    for (auto& w : state_) {
      s += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = s;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  friend bool operator==(const Xoshiro256ss&, const Xoshiro256ss&) = default;

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t state_[4]{};
};

using RngStream = Xoshiro256ss;

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(RngStream& g) noexcept {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

constexpr double uniform01_from_bits(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Uniform integer in [lo, hi] (inclusive), Lemire's multiply-shift with rejection.
inline std::int64_t uniform_int(RngStream& g, std::int64_t lo, std::int64_t hi) {
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(g());
  std::uint64_t x = g();
  __uint128_t m = static_cast<__uint128_t>(x) * range;
  std::uint64_t low = static_cast<std::uint64_t>(m);
  if (low < range) {
    const std::uint64_t threshold = (0 - range) % range;
    while (low < threshold) {
      x = g();
      m = static_cast<__uint128_t>(x) * range;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return lo + static_cast<std::int64_t>(m >> 64);
}

inline RngStream site_stream(std::uint64_t key, std::int64_t x, std::int64_t y) noexcept {
  return RngStream(derive_key(key, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y)));
}

// One uniform per site, without materializing an engine.
inline double site_uniform(std::uint64_t key, std::int64_t x, std::int64_t y) noexcept {
  return uniform01_from_bits(mix64(derive_key(key, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y))));
}

enum class Purpose : std::uint64_t {
  clocks = 1,
  selection = 2,
  initial = 3,
  column = 4,
  oracle = 5,
  instance = 6,
  auxiliary = 7,
};

// Streams of one experiment: stream(replica, purpose) is stable across runs,
// thread counts and platforms.
struct StreamFamily {
  std::uint64_t master_seed = 0;
  std::string experiment = "default";

  std::uint64_t key(std::uint64_t replica, Purpose purpose) const noexcept {
    return derive_key(master_seed, hash_label(experiment), replica, static_cast<std::uint64_t>(purpose));
  }
  RngStream stream(std::uint64_t replica, Purpose purpose) const noexcept {
    return RngStream(key(replica, purpose));
  }
  StreamFamily child(std::string_view tag) const {
    return StreamFamily{master_seed, experiment + "/" + std::string(tag)};
  }
  std::string descriptor() const {
    std::ostringstream os;
    os << "seed=" << master_seed << ";exp=" << experiment;
    return os.str();
  }
};

inline RngStream seed_stream(std::uint64_t master_seed, std::string_view experiment, std::uint64_t replica,
                             Purpose purpose) {
  return StreamFamily{master_seed, std::string(experiment)}.stream(replica, purpose);
}

}  // namespace mdperc
