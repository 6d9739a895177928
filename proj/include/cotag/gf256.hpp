#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace cotag {

/// Element of GF(2^8). Addition is XOR; multiplication reduces modulo
/// x^8 + x^4 + x^3 + x^2 + 1.
using FieldElement = std::uint8_t;

inline constexpr unsigned kFieldPolynomial = 0x11D;

namespace detail {

struct GfTables {
  std::array<std::uint8_t, 512> exp{};
  std::array<std::uint8_t, 256> log{};
};

constexpr GfTables make_gf_tables() {
  GfTables t;
  unsigned x = 1;
  for (unsigned i = 0; i < 255; ++i) {
    t.exp[i] = static_cast<std::uint8_t>(x);
    t.log[x] = static_cast<std::uint8_t>(i);
    x <<= 1;
    if (x & 0x100) x ^= kFieldPolynomial;
  }
  for (unsigned i = 255; i < 512; ++i) t.exp[i] = t.exp[i - 255];
  return t;
}

inline constexpr GfTables kGf = make_gf_tables();

}  // namespace detail

constexpr FieldElement gf_add(FieldElement a, FieldElement b) noexcept {
  return static_cast<FieldElement>(a ^ b);
}

constexpr FieldElement gf_mul(FieldElement a, FieldElement b) noexcept {
  if (a == 0 || b == 0) return 0;
  return detail::kGf.exp[detail::kGf.log[a] + detail::kGf.log[b]];
}

/// Multiplicative inverse. Throws std::domain_error for zero.
FieldElement gf_inv(FieldElement a);

FieldElement gf_div(FieldElement a, FieldElement b);

/// dst[i] ^= c * src[i]. Spans must have equal length.
void gf_axpy(std::span<std::uint8_t> dst, std::span<const std::uint8_t> src,
             FieldElement c);

/// v[i] = c * v[i].
void gf_scale(std::span<std::uint8_t> v, FieldElement c);

}  // namespace cotag
