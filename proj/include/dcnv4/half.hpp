#pragma once

// IEEE-754 binary16 storage conversions. Arithmetic never happens in half
// precision: values are widened to float before any multiply-accumulate.

#include <bit>
#include <cstdint>

namespace dcnv4 {

// Round-to-nearest-even narrowing. Overflow saturates to +-inf, NaN stays NaN.
inline std::uint16_t float_to_half(float value) noexcept {
  constexpr std::uint32_t f32_infinity = 255u << 23;
  constexpr std::uint32_t f16_overflow = (127u + 16u) << 23;  // 65536.0f
  constexpr std::uint32_t denorm_magic = ((127u - 15u) + (23u - 10u) + 1u) << 23;

  std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = (bits >> 16) & 0x8000u;
  bits &= 0x7fffffffu;

  std::uint16_t out;
  if (bits >= f16_overflow) {
    out = bits > f32_infinity ? 0x7e00u : 0x7c00u;
  } else if (bits < (113u << 23)) {
    // Subnormal or zero in half: let the FPU do the rounding by aligning the
    // mantissa against a magic constant.
    const float aligned = std::bit_cast<float>(bits) + std::bit_cast<float>(denorm_magic);
    out = static_cast<std::uint16_t>(std::bit_cast<std::uint32_t>(aligned) - denorm_magic);
  } else {
    const std::uint32_t mant_odd = (bits >> 13) & 1u;
    bits += ((15u - 127u) << 23) + 0xfffu;
    bits += mant_odd;
    out = static_cast<std::uint16_t>(bits >> 13);
  }
  return static_cast<std::uint16_t>(out | sign);
}

// Exact widening.
inline float half_to_float(std::uint16_t half) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(half & 0x8000u) << 16;
  const std::uint32_t exponent = (half >> 10) & 0x1fu;
  const std::uint32_t mantissa = half & 0x3ffu;

  if (exponent == 0) {
    if (mantissa == 0) return std::bit_cast<float>(sign);
    const float magnitude = static_cast<float>(mantissa) * 5.9604644775390625e-8f;  // 2^-24
    return sign ? -magnitude : magnitude;
  }
  if (exponent == 31) {
    return std::bit_cast<float>(sign | 0x7f800000u | (mantissa << 13));
  }
  return std::bit_cast<float>(sign | ((exponent + 112u) << 23) | (mantissa << 13));
}

}  // namespace dcnv4
