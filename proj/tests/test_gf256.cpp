#include "doctest.h"

#include <stdexcept>

#include "cotag/gf256.hpp"
#include "cotag/random.hpp"

using namespace cotag;

namespace {

// Shift-and-add multiplication with reduction after every shift.
unsigned slow_mul(unsigned a, unsigned b) {
  unsigned r = 0;
  while (b) {
    if (b & 1) r ^= a;
    b >>= 1;
    a <<= 1;
    if (a & 0x100) a ^= 0x11D;
  }
  return r;
}

}  // namespace

TEST_CASE("gf_mul fixed products") {
  CHECK(gf_mul(0, 0x5A) == 0);
  CHECK(gf_mul(1, 0x5A) == 0x5A);
  CHECK(gf_mul(0x02, 0x87) == 0x13);
  CHECK(slow_mul(0x02, 0x87) == 0x13);
}

TEST_CASE("gf_mul matches shift-and-add on every pair") {
  for (unsigned a = 0; a < 256; ++a)
    for (unsigned b = 0; b < 256; ++b)
      REQUIRE(gf_mul(static_cast<FieldElement>(a), static_cast<FieldElement>(b)) ==
              slow_mul(a, b));
}

TEST_CASE("gf_inv") {
  CHECK(gf_inv(1) == 1);
  CHECK_THROWS_AS(gf_inv(0), std::domain_error);
  for (unsigned a = 1; a < 256; ++a) {
    const auto x = static_cast<FieldElement>(a);
    REQUIRE(gf_mul(x, gf_inv(x)) == 1);
    REQUIRE(gf_inv(gf_inv(x)) == x);
  }
}

TEST_CASE("field laws") {
  for (unsigned a = 0; a < 256; ++a)
    for (unsigned b = 0; b < 256; ++b) {
      const auto x = static_cast<FieldElement>(a), y = static_cast<FieldElement>(b);
      REQUIRE(gf_mul(x, y) == gf_mul(y, x));
      for (unsigned c : {0u, 1u, 0x53u, 0xCAu, 0xFFu}) {
        const auto z = static_cast<FieldElement>(c);
        REQUIRE(gf_mul(x, gf_add(y, z)) == gf_add(gf_mul(x, y), gf_mul(x, z)));
      }
    }
  Rng rng(7);
  for (int i = 0; i < 100000; ++i) {
    const auto a = rng.byte(), b = rng.byte(), c = rng.byte();
    REQUIRE(gf_mul(a, gf_mul(b, c)) == gf_mul(gf_mul(a, b), c));
  }
}

TEST_CASE("gf_div and vector helpers") {
  CHECK(gf_div(gf_mul(0x37, 0x91), 0x91) == 0x37);
  CHECK_THROWS(gf_div(5, 0));
  std::uint8_t dst[4] = {1, 2, 3, 4};
  const std::uint8_t src[4] = {0x10, 0x20, 0x30, 0x87};
  gf_axpy(dst, src, 2);
  CHECK(dst[0] == (1 ^ slow_mul(2, 0x10)));
  CHECK(dst[3] == (4 ^ 0x13));
  gf_scale(dst, 0);
  for (auto v : dst) CHECK(v == 0);
}
