#include "cotag/gf256.hpp"

#include <cassert>
#include <stdexcept>

namespace cotag {

FieldElement gf_inv(FieldElement a) {
  if (a == 0) throw std::domain_error("gf_inv: zero has no inverse");
  return detail::kGf.exp[255 - detail::kGf.log[a]];
}

FieldElement gf_div(FieldElement a, FieldElement b) {
  return gf_mul(a, gf_inv(b));
}

void gf_axpy(std::span<std::uint8_t> dst, std::span<const std::uint8_t> src,
             FieldElement c) {
  assert(dst.size() == src.size());
  if (c == 0) return;
  if (c == 1) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] ^= src[i];
    return;
  }
  const unsigned lc = detail::kGf.log[c];
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const auto s = src[i];
    if (s != 0) dst[i] ^= detail::kGf.exp[lc + detail::kGf.log[s]];
  }
}

void gf_scale(std::span<std::uint8_t> v, FieldElement c) {
  if (c == 1) return;
  for (auto& x : v) x = gf_mul(x, c);
}

}  // namespace cotag
