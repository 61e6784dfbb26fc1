#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace scalelab {

/// Philox4x64-10 counter-based generator. A stream is identified by the
/// 128-bit key (seed, stream id); draws are the Philox blocks for counter
/// values 1, 2, 3, ... so any draw is a pure function of (seed, stream, index).
class Rng {
 public:
  using Block = std::array<std::uint64_t, 4>;
  using Key = std::array<std::uint64_t, 2>;

  static Block philox4x64(Block counter, Key key);

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : key_{seed, stream} {}

  /// Independent stream keyed on (seed, mix(stream, id)).
  Rng substream(std::uint64_t id) const;

  std::uint64_t seed() const noexcept { return key_[0]; }
  std::uint64_t stream() const noexcept { return key_[1]; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n), unbiased.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box-Muller; consumes two uniforms per call.
  double normal();

 private:
  Key key_;
  std::uint64_t counter_ = 0;
  Block buffer_{};
  std::size_t used_ = 4;
};

/// Fisher-Yates permutation of [0, n) driven by rng.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

// Stream tags so unrelated consumers never share a key.
namespace streams {
inline constexpr std::uint64_t kInit = 0x494e4954ULL;      // weight init
inline constexpr std::uint64_t kData = 0x44415441ULL;      // synthetic examples
inline constexpr std::uint64_t kSplit = 0x53504c54ULL;     // train/val split
inline constexpr std::uint64_t kShuffle = 0x53485546ULL;   // per-epoch order
}  // namespace streams

}  // namespace scalelab
