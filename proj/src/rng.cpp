#include "divgce/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace divgce {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, ctr[0], hi0, lo0);
    mulhilo(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

RngStream::RngStream(std::uint64_t seed, RngDomain domain) : seed_(seed), domain_(domain) {
  const std::array<std::uint32_t, 2> seed_key{static_cast<std::uint32_t>(seed),
                                              static_cast<std::uint32_t>(seed >> 32)};
  // Domain separation: the working key is the encryption of a domain block
  // under the seed.
  const auto block = philox4x32({static_cast<std::uint32_t>(domain), 0x64697667u, 0u, 0u}, seed_key);
  key_ = {block[0], block[1]};
}

RngStream RngStream::substream(std::uint32_t a, std::uint32_t b, std::uint32_t c) const {
  RngStream s = *this;
  s.words_ = {a, b, c};
  s.draw_ = 0;
  s.buffered_ = 0;
  return s;
}

std::uint32_t RngStream::next_u32() {
  if (buffered_ == 0) {
    if (draw_ == UINT32_MAX) throw std::runtime_error("RngStream: substream exhausted");
    buffer_ = philox4x32({draw_++, words_[0], words_[1], words_[2]}, key_);
    buffered_ = 4;
  }
  return buffer_[4 - buffered_--];
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t hi = next_u32();
  return (hi << 32) | next_u32();
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

bool RngStream::bernoulli(double p) { return uniform() < p; }

double RngStream::normal() {
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint32_t RngStream::below(std::uint32_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
  const std::uint32_t limit = UINT32_MAX - UINT32_MAX % n;
  std::uint32_t v;
  do {
    v = next_u32();
  } while (v >= limit);
  return v % n;
}

}  // namespace divgce
