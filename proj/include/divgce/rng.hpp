#pragma once

#include <array>
#include <cstdint>

namespace divgce {

/// One Philox4x32-10 block: encrypts a 128-bit counter under a 64-bit key.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Purpose tag folded into the generator key, so streams for different
/// consumers of the same seed are unrelated.
enum class RngDomain : std::uint32_t {
  misc = 0,
  init = 1,
  data = 2,
  shuffle = 3,
  mask = 4,
};

/// Counter-based random stream.
///
/// The 128-bit Philox counter is laid out as (draw, a, b, c): the three
/// substream words (a, b, c) are fixed per stream and the draw index
/// advances. Two streams with the same seed and domain but different
/// (a, b, c) therefore never touch the same counter value.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, RngDomain domain = RngDomain::misc);

  /// Fresh stream at draw 0 keyed by (a, b, c) under the same seed and domain.
  RngStream substream(std::uint32_t a, std::uint32_t b = 0, std::uint32_t c = 0) const;
  /// Same (a, b) as this stream, with the third word replaced.
  RngStream item(std::uint32_t c) const { return substream(words_[0], words_[1], c); }

  std::uint64_t seed() const noexcept { return seed_; }
  RngDomain domain() const noexcept { return domain_; }

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// True with probability p; p <= 0 never, p >= 1 always.
  bool bernoulli(double p);
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n), unbiased by rejection.
  std::uint32_t below(std::uint32_t n);

 private:
  std::uint64_t seed_;
  RngDomain domain_;
  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 3> words_{};
  std::uint32_t draw_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int buffered_ = 0;
};

}  // namespace divgce
