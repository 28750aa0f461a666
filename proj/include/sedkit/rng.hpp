#pragma once

#include <cstdint>
#include <random>

#include "sedkit/error.hpp"

namespace sedkit {

/// Seeded pseudo-random stream with a platform-independent output sequence.
///
/// The engine is std::mt19937_64, whose output is fixed by the standard. The
/// standard distributions are not, so integer and real draws are derived here:
/// reals take the top 53 bits, integers use rejection on the unbiased range.
/// An Rng must not be shared between threads; give each worker its own stream
/// seeded with `seed + worker_index`.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi].
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    require(lo <= hi, ErrorCode::kInvalidArgument, "Rng::uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo);
    if (span == UINT64_MAX) return lo + static_cast<std::int64_t>(engine_());
    const std::uint64_t n = span + 1;
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % n);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sedkit
