#pragma once

#include <cstdint>
#include <limits>

namespace holderpo {

// Counter-based generator: the n-th draw of a stream is a pure function of
// (seed, stream, n), so substreams can be handed to independent workers and
// results do not depend on scheduling.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream + kGolden))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + kGolden * ++counter_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    const auto k = static_cast<std::uint64_t>(uniform() * static_cast<double>(span));
    return lo + static_cast<std::int64_t>(k < span ? k : span - 1);
  }

  CounterRng substream(std::uint64_t id) const {
    CounterRng child(0, 0);
    child.key_ = mix(key_ ^ mix(id * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
    return child;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  // splitmix64 finaliser
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace holderpo
