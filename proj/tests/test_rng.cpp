#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "divgce/rng.hpp"

using namespace divgce;

// Published Philox4x32-10 known-answer vectors.
TEST_CASE("philox4x32 known answers") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("same seed and domain reproduce the sequence") {
  RngStream a(42, RngDomain::mask), b(42, RngDomain::mask);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u32() == b.next_u32());
}

TEST_CASE("domains and substreams are distinct") {
  RngStream base(7, RngDomain::data);
  auto first = [](RngStream s) {
    std::vector<std::uint32_t> v;
    for (int i = 0; i < 8; ++i) v.push_back(s.next_u32());
    return v;
  };
  std::set<std::vector<std::uint32_t>> seen;
  seen.insert(first(base));
  seen.insert(first(RngStream(7, RngDomain::mask)));
  seen.insert(first(RngStream(8, RngDomain::data)));
  seen.insert(first(base.substream(1)));
  seen.insert(first(base.substream(0, 1)));
  seen.insert(first(base.substream(0, 0, 1)));
  seen.insert(first(base.substream(1, 0, 0).item(5)));
  CHECK(seen.size() == 7);
  // item() keeps the first two words.
  CHECK(first(base.substream(3, 4, 0).item(9)) == first(base.substream(3, 4, 9)));
}

TEST_CASE("draw order within a stream does not depend on earlier substreams") {
  RngStream root(1, RngDomain::mask);
  RngStream a = root.substream(2, 3);
  for (int i = 0; i < 17; ++i) (void)root.substream(9).next_u32();
  RngStream b = root.substream(2, 3);
  for (int i = 0; i < 50; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform, bernoulli and normal moments") {
  RngStream r(123);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    hits += r.bernoulli(0.3);
    double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(std::abs(su / n - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(hits / double(n) - 0.3) < 4 * std::sqrt(0.21 / n));
  CHECK(std::abs(sn / n) < 4 / std::sqrt(double(n)));
  CHECK(std::abs(sn2 / n - 1.0) < 4 * std::sqrt(2.0 / n));
}

TEST_CASE("bernoulli edges") {
  RngStream r(5);
  for (int i = 0; i < 1000; ++i) {
    CHECK_FALSE(r.bernoulli(0.0));
    CHECK(r.bernoulli(1.0));
  }
}

TEST_CASE("below is in range and roughly uniform") {
  RngStream r(77);
  std::array<int, 7> counts{};
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    auto v = r.below(7);
    REQUIRE(v < 7);
    ++counts[v];
  }
  for (int c : counts) CHECK(std::abs(c - n / 7) < 4 * std::sqrt(n * (1.0 / 7) * (6.0 / 7)));
  CHECK(r.below(1) == 0);
}
